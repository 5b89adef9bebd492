"""Benchmark problem definitions: thermal, elastic and periodic homogenisation.

Each builder wires mesh tags, weak forms, functionals and derivative paths
into a Problem the optimiser can drive.  Elasticity is plane strain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import evolve as ev
from . import fem, interp, mesh as msh, sens


class ConfigError(ValueError):
    pass


@dataclass
class ProblemSpec:
    """Every knob of a benchmark run; defaults follow the 2D benchmarks."""

    dim: int = 2
    el_size: tuple = (100, 100)
    origin: tuple = None
    lengths: tuple = None
    vf: float = 0.4
    kappa: float = 1.0
    flux: float = 1.0
    young: float = 1.0
    poisson: float = 0.3
    traction: tuple = (0.0, -1.0)
    prop_gamma_n: float = 0.2
    prop_gamma_d: float = 0.2
    eta: float = None          # default: twice the max element side
    eps: float = 1e-3
    gamma: float = 0.1
    gamma_reinit: float = 0.5
    max_steps: int = None      # default: scaled with resolution
    tol: float = 1e-3
    deriv_mode: str = "analytic"   # analytic | ad
    solver_rtol: float = 1e-10
    solver_max_iter: int = None
    lsf_xi: float = 4.0
    lsf_a: float = 0.2
    lsf_shift: float = 0.0
    max_iter: int = 1000

    def validate(self):
        if not 0 < self.vf < 1:
            raise ConfigError(f"volume fraction must lie in (0, 1), got {self.vf}")
        if self.kappa <= 0 or self.young <= 0:
            raise ConfigError("material parameters must be positive")
        if not -1 < self.poisson < 0.5:
            raise ConfigError(f"Poisson ratio must be below 0.5, got {self.poisson}")
        if self.deriv_mode not in ("analytic", "ad"):
            raise ConfigError(f"unknown derivative mode {self.deriv_mode!r}")
        if not 0 < self.prop_gamma_n <= 1 or not 0 < self.prop_gamma_d <= 1:
            raise ConfigError("boundary proportions must lie in (0, 1]")


@dataclass
class StiffnessTensor:
    """Isotropic plane-strain elasticity from Young's modulus and Poisson ratio."""

    young: float
    poisson: float

    def __post_init__(self):
        E, nu = self.young, self.poisson
        self.lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        self.mu = E / (2 * (1 + nu))

    def stress(self, eps):
        """lam tr(eps) I + 2 mu eps on (..., d, d) strains."""
        d = np.shape(eps.val if hasattr(eps, "val") else eps)[-1]
        tr = fem.trace(eps)
        if not hasattr(tr, "val"):
            tr = np.asarray(tr)
        return tr[..., None, None] * (self.lam * np.eye(d)) + 2.0 * self.mu * eps

    def tensor(self, dim=2):
        """Full C_ijkl array."""
        I = np.eye(dim)
        C = self.lam * np.einsum("ij,kl->ijkl", I, I)
        C += self.mu * (np.einsum("ik,jl->ijkl", I, I) + np.einsum("il,jk->ijkl", I, I))
        return C


@dataclass
class MacroStrainSet:
    """Unit macroscopic strain tensors; three unique cases in 2D."""

    dim: int = 2
    strains: tuple = dc_field(init=False)
    cases: tuple = dc_field(init=False)

    def __post_init__(self):
        if self.dim != 2:
            raise ConfigError("macro strains implemented for 2D")
        pairs = [(0, 0), (1, 1), (0, 1)]
        out = []
        for k, l in pairs:
            e = np.zeros((2, 2))
            e[k, l] += 0.5
            e[l, k] += 0.5
            out.append(e)
        self.strains = tuple(out)
        self.cases = tuple(pairs)

    def __len__(self):
        return len(self.strains)


@dataclass
class Evaluation:
    J: float
    C: tuple
    states: list
    solver_iterations: tuple


class Problem:
    """Assembled optimisation problem consumed by the optimiser loop."""

    def __init__(self, name, mesh, interp_params, evolve_params, state_map,
                 objective, constraints, vel_ext, initial_lsf, deriv_mode):
        self.name = name
        self.mesh = mesh
        self.interp = interp_params
        self.evolve_params = evolve_params
        self.state_map = state_map
        self.objective = objective
        self.constraints = list(constraints)
        self.vel_ext = vel_ext
        self.initial_lsf = initial_lsf
        self.deriv_mode = deriv_mode
        self.last_velocity = None

    def initial_phi(self):
        coords = self.mesh.node_coordinates()
        return np.array([self.initial_lsf(x) for x in coords], dtype=float)

    def evaluate(self, phi):
        states = self.state_map.solve(phi)
        J = sens.functional_value(self.objective, states, phi, self.mesh)
        C = tuple(
            sens.functional_value(c, states, phi, self.mesh) for c in self.constraints
        )
        return Evaluation(J, C, states, self.state_map.last_iterations)

    def gradients(self, evaluation, phi):
        if self.deriv_mode == "analytic":
            dJ = self.objective.analytic_gradient(evaluation.states, phi)
            dC = [c.analytic_gradient(evaluation.states, phi) for c in self.constraints]
        else:
            dJ = sens.adjoint_gradient(self.objective, self.state_map, evaluation.states, phi)
            dC = [
                sens.adjoint_gradient(c, self.state_map, evaluation.states, phi)
                for c in self.constraints
            ]
        return dJ, dC


def _auto_params(spec, mesh):
    eta = spec.eta if spec.eta is not None else interp.default_eta(mesh)
    ip = interp.ErsatzInterpolation(eta=eta, eps=spec.eps)
    ep = ev.default_evolve_params(mesh, gamma=spec.gamma, gamma_reinit=spec.gamma_reinit, tol=spec.tol)
    if spec.max_steps is not None:
        ep.max_steps = int(spec.max_steps)
    return ip, ep


def _volume_constraint(mesh, ip, vf):
    vol_d = float(np.prod(mesh.lengths))

    def integrand(u, phi, x):
        return (interp.density(phi.val, ip) - vf) / vol_d

    def gradient(states, phi):
        return sens.analytic_shape_gradient("volume", None, phi, mesh, ip) / vol_d

    return sens.Functional("volume", integrand, analytic_gradient=gradient)


def _extension(mesh, ep, zero_tags, spec):
    alpha = sens.alpha_rule(ep.max_steps, ep.gamma, mesh)
    return sens.VelocityExtension(
        mesh, alpha, zero_tags=zero_tags,
        rel_tol=spec.solver_rtol, max_iter=spec.solver_max_iter,
    )


def thermal_problem(spec):
    """Heat-dissipation minimisation: flux band on the right, sinks on the left."""
    spec.validate()
    dim = spec.dim
    lengths = spec.lengths if spec.lengths is not None else (1.0,) * dim
    origin = spec.origin if spec.origin is not None else (0.0,) * dim
    mesh = msh.build_mesh(dim, spec.el_size, origin, lengths)
    scale = max(lengths)
    xmax = origin[0] + lengths[0]

    def on_sink_band(t, o, L, prop):
        return t <= o + L * prop + 1e-12 or t >= o + L * (1 - prop) - 1e-12

    def f_gamma_d(x):
        if not msh.coords_equal(x[0], origin[0], scale):
            return False
        return all(
            on_sink_band(x[ax], origin[ax], lengths[ax], spec.prop_gamma_d)
            for ax in range(1, dim)
        )

    def f_gamma_n(x):
        if not msh.coords_equal(x[0], xmax, scale):
            return False
        return all(
            abs(x[ax] - (origin[ax] + lengths[ax] / 2)) <= lengths[ax] * spec.prop_gamma_n / 2 + 1e-12
            for ax in range(1, dim)
        )

    msh.tag_boundary(mesh, "gamma_d", f_gamma_d)
    msh.tag_boundary(mesh, "gamma_n", f_gamma_n)
    ip, ep = _auto_params(spec, mesh)
    kappa, g = spec.kappa, spec.flux

    def a(u, v, x, phi):
        return interp.ersatz(phi.val, ip) * kappa * fem.dot(u.grad, v.grad)

    def l(v, x, phi):
        return g * v.val

    space = fem.FunctionSpace(mesh, 1, dirichlet=[fem.DirichletBC("gamma_d", 0.0)])
    state_map = sens.AffineStateMap(
        space, a, sens.LinearForm(facet=l, facet_tag="gamma_n"),
        rel_tol=spec.solver_rtol, max_iter=spec.solver_max_iter,
    )

    def J_integrand(u, phi, x):
        return interp.ersatz(phi.val, ip) * kappa * fem.dot(u.grad, u.grad)

    def J_gradient(states, phi):
        return sens.analytic_shape_gradient(
            "thermal_compliance", states, phi, mesh, ip, kappa=kappa
        )

    objective = sens.Functional("compliance", J_integrand, analytic_gradient=J_gradient)
    constraint = _volume_constraint(mesh, ip, spec.vf)
    vel_ext = _extension(mesh, ep, ("gamma_n",), spec)
    lsf = interp.initial_lsf(spec.lsf_xi, spec.lsf_a)
    return Problem("thermal2d" if dim == 2 else "thermal3d", mesh, ip, ep,
                   state_map, objective, [constraint], vel_ext, lsf, spec.deriv_mode)


def elastic_problem(spec):
    """Plane-strain cantilever compliance: clamped left edge, traction patch right."""
    spec.validate()
    if spec.dim != 2:
        raise ConfigError("elastic problem is two-dimensional")
    lengths = spec.lengths if spec.lengths is not None else (2.0, 1.0)
    origin = spec.origin if spec.origin is not None else (0.0, 0.0)
    mesh = msh.build_mesh(2, spec.el_size, origin, lengths)
    scale = max(lengths)
    xmax = origin[0] + lengths[0]
    ymid = origin[1] + lengths[1] / 2

    msh.tag_boundary(mesh, "gamma_d", lambda x: msh.coords_equal(x[0], origin[0], scale))
    msh.tag_boundary(
        mesh, "gamma_n",
        lambda x: msh.coords_equal(x[0], xmax, scale)
        and abs(x[1] - ymid) <= lengths[1] * spec.prop_gamma_n / 2 + 1e-12,
    )
    ip, ep = _auto_params(spec, mesh)
    tensor = StiffnessTensor(spec.young, spec.poisson)
    traction = np.asarray(spec.traction, dtype=float)

    def a(u, v, x, phi):
        return interp.ersatz(phi.val, ip) * fem.inner(tensor.stress(fem.sym(u.grad)), fem.sym(v.grad))

    def l(v, x, phi):
        return fem.dot(traction, v.val)

    space = fem.FunctionSpace(mesh, 2, dirichlet=[fem.DirichletBC("gamma_d", (0.0, 0.0))])
    state_map = sens.AffineStateMap(
        space, a, sens.LinearForm(facet=l, facet_tag="gamma_n"),
        rel_tol=spec.solver_rtol, max_iter=spec.solver_max_iter,
    )

    def J_integrand(u, phi, x):
        eps = fem.sym(u.grad)
        return interp.ersatz(phi.val, ip) * fem.inner(tensor.stress(eps), eps)

    def J_gradient(states, phi):
        return sens.analytic_shape_gradient(
            "elastic_compliance", states, phi, mesh, ip, tensor=tensor
        )

    objective = sens.Functional("compliance", J_integrand, analytic_gradient=J_gradient)
    constraint = _volume_constraint(mesh, ip, spec.vf)
    vel_ext = _extension(mesh, ep, ("gamma_n",), spec)
    lsf = interp.initial_lsf(spec.lsf_xi, spec.lsf_a)
    return Problem("elastic2d", mesh, ip, ep, state_map, objective,
                   [constraint], vel_ext, lsf, spec.deriv_mode)


def schwarz_p_lsf(shift=0.0):
    """Periodic cosine-lattice seed level set for unit-cell designs."""

    def lsf(x):
        x = np.asarray(x, dtype=float)
        return float(np.sum(np.cos(2 * np.pi * x), axis=-1)) + shift

    return lsf


def homogenisation_problem(spec, pin_point=None):
    """Bulk-modulus maximisation of a periodic unit cell, three load cases."""
    spec.validate()
    if spec.dim != 2:
        raise ConfigError("homogenisation problem is two-dimensional")
    lengths = spec.lengths if spec.lengths is not None else (1.0, 1.0)
    origin = spec.origin if spec.origin is not None else (0.0, 0.0)
    mesh = msh.build_mesh(2, spec.el_size, origin, lengths, periodic=(True, True))
    scale = max(lengths)
    pin = pin_point if pin_point is not None else origin

    msh.tag_boundary(
        mesh, "pin",
        lambda x: msh.coords_equal(x[0], pin[0], scale) and msh.coords_equal(x[1], pin[1], scale),
        interior_allowed=True,
    )
    ip, ep = _auto_params(spec, mesh)
    tensor = StiffnessTensor(spec.young, spec.poisson)
    macro = MacroStrainSet(2)
    vol_d = float(np.prod(lengths))

    def a(u, v, x, phi):
        return interp.ersatz(phi.val, ip) * fem.inner(tensor.stress(fem.sym(u.grad)), fem.sym(v.grad))

    def load_for(case):
        macro_stress = tensor.stress(macro.strains[case])

        def l(v, x, phi):
            return -interp.ersatz(phi.val, ip) * fem.inner(macro_stress, fem.sym(v.grad))

        return l

    linears = [sens.LinearForm(volume=load_for(p)) for p in range(len(macro))]
    space = fem.FunctionSpace(mesh, 2, dirichlet=[fem.DirichletBC("pin", (0.0, 0.0))])
    state_map = sens.AffineStateMap(
        space, a, linears, rel_tol=spec.solver_rtol, max_iter=spec.solver_max_iter,
    )

    def entry_integrand(r, s):
        def f(u, phi, x):
            eps_r = fem.sym(u[r].grad) + macro.strains[r]
            return interp.ersatz(phi.val, ip) * fem.inner(tensor.stress(eps_r), macro.strains[s])

        return f

    def J_integrand(u, phi, x):
        e11 = entry_integrand(0, 0)(u, phi, x)
        e22 = entry_integrand(1, 1)(u, phi, x)
        e12 = entry_integrand(0, 1)(u, phi, x)
        return -(e11 + e22 + 2.0 * e12) / 4.0

    def J_gradient(states, phi):
        return sens.analytic_shape_gradient(
            "homogenised_bulk2d", states, phi, mesh, ip,
            tensor=tensor, macro_strains=macro,
        )

    objective = sens.Functional("neg_bulk_modulus", J_integrand, analytic_gradient=J_gradient)
    constraint = _volume_constraint(mesh, ip, spec.vf)
    vel_ext = _extension(mesh, ep, (), spec)
    lsf = schwarz_p_lsf(spec.lsf_shift)
    problem = Problem("homog2d", mesh, ip, ep, state_map, objective,
                      [constraint], vel_ext, lsf, spec.deriv_mode)
    problem.tensor = tensor
    problem.macro = macro
    return problem


def effective_tensor_entry(problem, states, phi, r, s):
    """Relaxed effective stiffness entry C_bar[r, s] in case ordering."""
    macro = problem.macro
    tensor = problem.tensor

    def f(u, phi, x):
        eps_r = fem.sym(u[r].grad) + macro.strains[r]
        return interp.ersatz(phi.val, problem.interp) * fem.inner(tensor.stress(eps_r), macro.strains[s])

    return fem.integrate(problem.mesh, f, u=list(states), phi=phi)


def bulk_modulus_2d(problem, states, phi):
    """Hydrostatic projection of the effective tensor (2D)."""
    c11 = effective_tensor_entry(problem, states, phi, 0, 0)
    c22 = effective_tensor_entry(problem, states, phi, 1, 1)
    c12 = effective_tensor_entry(problem, states, phi, 0, 1)
    return (c11 + c22 + 2.0 * c12) / 4.0


PROBLEM_BUILDERS = {
    "thermal2d": thermal_problem,
    "elastic2d": elastic_problem,
    "homog2d": homogenisation_problem,
}


def build_problem(name, spec):
    if name not in PROBLEM_BUILDERS:
        raise ConfigError(f"unknown problem {name!r}; choose from {sorted(PROBLEM_BUILDERS)}")
    return PROBLEM_BUILDERS[name](spec)
