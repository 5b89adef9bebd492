"""State solves, functional derivatives and the Hilbertian velocity extension.

Derivatives of quadrature-level integrands are taken with forward-mode dual
numbers: one seed per field slot (value or gradient component), evaluated
for all elements at once, then scattered against the local basis.  The
adjoint path combines these into total derivatives with respect to the
level set; the analytic path assembles the relaxed boundary expressions
directly.  Both feed the same extension problem that turns a raw derivative
vector into a regular descent velocity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fem, interp
from .dual import Dual
from .fem import QuadField


class SensError(ValueError):
    pass


# -- dual-seeded derivative kernels -------------------------------------------


def _seed_val(qf, comp, ncomp):
    """Seed the value slot (component comp) of a data QuadField."""
    if ncomp == 1:
        dot = np.ones_like(qf.val)
        return QuadField(Dual(qf.val, dot), qf.grad)
    dot = np.zeros_like(qf.val)
    dot[..., comp] = 1.0
    return QuadField(Dual(qf.val, dot), qf.grad)


def _seed_grad(qf, comp, axis, ncomp):
    """Seed one gradient component of a data QuadField."""
    dot = np.zeros_like(qf.grad)
    if ncomp == 1:
        dot[..., axis] = 1.0
    else:
        dot[..., comp, axis] = 1.0
    return QuadField(qf.val, Dual(qf.grad, dot))


def _tangent(res, shape):
    if isinstance(res, Dual):
        return np.broadcast_to(np.asarray(res.dot, dtype=float), shape)
    return np.zeros(shape)


def _eval(integrand, fields, name, replacement, state_index=None):
    kwargs = dict(fields)
    if state_index is None:
        kwargs[name] = replacement
    else:
        states = list(kwargs[name])
        states[state_index] = replacement
        kwargs[name] = states
    return integrand(**kwargs)


def gradient_wrt_field(mesh, integrand, fields, name, ncomp=1, state_index=None):
    """Nodal gradient of ``integrate(integrand)`` w.r.t. one nodal field.

    The integrand sees quadrature fields; pointwise derivatives from dual
    seeds are scattered with the basis values (value slots) and basis
    gradients (gradient slots).
    """
    ed = fem.element_data(mesh)
    qf = fem._quad_fields(mesh, fields)
    target = qf[name] if state_index is None else qf[name][state_index]
    qf["x"] = ed.xq
    shape = ed.xq.shape[:2]
    n_el, nq = shape
    nloc = ed.N.shape[1]

    out = np.zeros(mesh.n_nodes * ncomp)
    dofs = ed.conn * ncomp

    for c in range(ncomp):
        res = _eval(integrand, qf, name, _seed_val(target, c, ncomp), state_index)
        dval = _tangent(res, shape) * ed.wJ  # (n_el, nq)
        contrib = np.einsum("eq,ql->el", dval, ed.N)
        np.add.at(out, dofs + c, contrib)
        for ax in range(mesh.dim):
            res = _eval(integrand, qf, name, _seed_grad(target, c, ax, ncomp), state_index)
            dgrad = _tangent(res, shape) * ed.wJ
            contrib = np.einsum("eq,ql->el", dgrad, ed.dNdx[:, :, ax])
            np.add.at(out, dofs + c, contrib)
    return out


# -- state maps ----------------------------------------------------------------


@dataclass
class LinearForm:
    """Right-hand side: a volume integrand, a facet integrand on a tag, or both."""

    volume: object = None
    facet: object = None
    facet_tag: str = None

    def assemble(self, space, phi):
        b = np.zeros(space.n_dofs)
        if self.volume is not None:
            b += fem.assemble_linear(space, self.volume, phi=phi)
        if self.facet is not None:
            b += fem.assemble_linear(space, self.facet, tag=self.facet_tag, phi=phi)
        return b


class AffineStateMap:
    """Affine state problem a(u, v; phi) = l(v; phi) with cached stiffness.

    With several linear forms the single assembled stiffness is reused for
    every right-hand side (the repeated map).  The stiffness goes stale and
    is reassembled whenever the level set changes.
    """

    def __init__(self, space, bilinear, linear, rel_tol=1e-10, max_iter=None):
        self.space = space
        self.bilinear = bilinear
        self.linears = list(linear) if isinstance(linear, (list, tuple)) else [linear]
        self.rel_tol = rel_tol
        self.max_iter = max_iter
        self._phi = None
        self._system = None
        self._warm = [None] * len(self.linears)
        self.last_iterations = ()

    @property
    def is_repeated(self):
        return len(self.linears) > 1

    @property
    def n_states(self):
        return len(self.linears)

    def system(self, phi):
        if self._phi is None or not np.array_equal(self._phi, phi):
            self._system = fem.assemble_bilinear(self.space, self.bilinear, phi=phi)
            self._phi = np.array(phi, copy=True)
        return self._system

    def solve(self, phi):
        sys = self.system(phi)
        solutions = []
        iterations = []
        for p, lin in enumerate(self.linears):
            b = sys.apply_rhs(lin.assemble(self.space, phi))
            try:
                res = fem.solve_spd(
                    sys.matrix, b, rel_tol=self.rel_tol,
                    max_iter=self.max_iter, x0=self._warm[p],
                )
            except fem.SolverError as err:
                raise fem.SolverError(
                    f"state solve failed for load case {p}: {err}",
                    residual=err.residual, iterations=err.iterations,
                ) from err
            self._warm[p] = res.x.copy()
            solutions.append(res.x)
            iterations.append(res.iterations)
        self.last_iterations = tuple(iterations)
        if self.is_repeated:
            return solutions
        return solutions[0]

    def solve_adjoint(self, phi, rhs):
        """Solve the transposed (= symmetric) system with homogeneous BCs."""
        sys = self.system(phi)
        b = np.asarray(rhs, dtype=float).copy()
        b[sys.bc_dofs] = 0.0
        res = fem.solve_spd(sys.matrix, b, rel_tol=self.rel_tol, max_iter=self.max_iter)
        return res.x


def solve_state(state_map, phi):
    return state_map.solve(phi)


# -- functionals ----------------------------------------------------------------


@dataclass
class Functional:
    """Objective or constraint: a value integrand plus derivative paths.

    ``integrand(u, phi, x)`` is the relaxed volume integrand; ``u`` is a
    QuadField, or a list of them for repeated state maps, or None for
    state-free functionals.  ``analytic_gradient(states, phi)``, when set,
    assembles the relaxed boundary shape derivative directly.
    """

    name: str
    integrand: object
    analytic_gradient: object = None


def functional_value(functional, u, phi, mesh):
    return fem.integrate(mesh, functional.integrand, u=u, phi=phi)


def adjoint_gradient(functional, state_map, u, phi):
    """Total derivative of the functional w.r.t. nodal level set values.

    Assembles partial derivatives by dual seeding, solves one adjoint per
    state whose right-hand side is nonzero, and subtracts the residual term.
    """
    mesh = state_map.space.mesh
    ncomp = state_map.space.n_components
    states = u if isinstance(u, (list, tuple)) else [u]
    fields = {"u": list(states) if state_map.is_repeated else states[0], "phi": phi}

    total = gradient_wrt_field(mesh, functional.integrand, fields, "phi", ncomp=1)

    for p in range(len(states)):
        if states[p] is None:
            continue
        dF_du = gradient_wrt_field(
            mesh, functional.integrand, fields, "u", ncomp=ncomp,
            state_index=p if state_map.is_repeated else None,
        )
        if not np.any(dF_du):
            continue
        lam = state_map.solve_adjoint(phi, dF_du)
        # residual term: d/dphi [ a(u_p, lambda; phi) - l_p(lambda; phi) ]
        def residual_integrand(x, phi, u_data=None, lam_data=None):
            return state_map.bilinear(u=u_data, v=lam_data, x=x, phi=phi)

        lam_field = fem.NodalField(lam, ncomp)
        u_field = fem.NodalField(states[p], ncomp)
        res_fields = {"u_data": u_field, "lam_data": lam_field, "phi": phi}
        total -= gradient_wrt_field(mesh, residual_integrand, res_fields, "phi", ncomp=1)
        lin = state_map.linears[p]
        if lin.volume is not None:
            def load_integrand(x, phi, lam_data=None):
                return lin.volume(v=lam_data, x=x, phi=phi)

            total += gradient_wrt_field(
                mesh, load_integrand, {"lam_data": lam_field, "phi": phi}, "phi", ncomp=1
            )
        # facet loads in scope carry no level-set dependence
    return total


# -- analytic shape derivatives --------------------------------------------------


def analytic_shape_gradient(kind, states, phi, mesh, interp_params, **params):
    """Relaxed boundary shape derivative, assembled as a descent right-hand side.

    Entries are the derivative paired against each nodal test function of the
    regularisation space, with the boundary integral relaxed onto the box via
    the smoothed Heaviside band and the finite element gradient norm of phi.
    """
    eta = interp_params.eta
    space = fem.FunctionSpace(mesh, 1)

    def band(v, x, phi):
        return v.val * interp.heaviside_deriv(phi.val, eta) * fem.norm(phi.grad)

    if kind == "volume":
        def integrand(v, x, phi):
            return -band(v, x, phi)

        return fem.assemble_linear(space, integrand, phi=phi)

    if kind == "thermal_compliance":
        kappa = params["kappa"]

        def integrand(v, x, phi, u):
            return kappa * fem.dot(u.grad, u.grad) * band(v, x, phi)

        return fem.assemble_linear(space, integrand, phi=phi, u=_single(states))

    if kind == "elastic_compliance":
        tensor = params["tensor"]

        def integrand(v, x, phi, u):
            eps = fem.sym(u.grad)
            return fem.inner(tensor.stress(eps), eps) * band(v, x, phi)

        return fem.assemble_linear(space, integrand, phi=phi, u=_single(states))

    if kind == "homogenised_bulk2d":
        tensor = params["tensor"]
        macro = params["macro_strains"]

        def entry(r, s):
            def integrand(v, x, phi, u):
                eps_r = fem.sym(u[r].grad) + macro.strains[r]
                eps_s = fem.sym(u[s].grad) + macro.strains[s]
                return -fem.inner(tensor.stress(eps_r), eps_s) * band(v, x, phi)

            return fem.assemble_linear(space, integrand, phi=phi, u=list(states))

        d11, d22, d12 = entry(0, 0), entry(1, 1), entry(0, 1)
        return -(d11 + d22 + 2.0 * d12) / 4.0

    raise SensError(f"unknown analytic shape derivative kind {kind!r}")


def _single(states):
    if isinstance(states, (list, tuple)):
        if len(states) != 1:
            raise SensError("expected a single state")
        return states[0]
    return states


# -- finite difference oracle -----------------------------------------------------


def fd_gradient_oracle(pipeline, phi, node_sample, h_fd):
    """Central differences of a full re-solving pipeline at sampled nodes."""
    out = np.zeros(len(node_sample))
    for i, j in enumerate(node_sample):
        up = np.array(phi, copy=True)
        dn = np.array(phi, copy=True)
        up[j] += h_fd
        dn[j] -= h_fd
        out[i] = (pipeline(up) - pipeline(dn)) / (2.0 * h_fd)
    return out


# -- velocity extension ------------------------------------------------------------


class VelocityExtension:
    """H1 identification problem turning raw derivatives into velocities.

    The inner-product matrix uses the regularisation length alpha, with zero
    Dirichlet values on tags where the extended sensitivity must vanish.
    """

    def __init__(self, mesh, alpha, zero_tags=(), rel_tol=1e-10, max_iter=None):
        self.mesh = mesh
        self.alpha = float(alpha)
        self.space = fem.FunctionSpace(
            mesh, 1, dirichlet=[fem.DirichletBC(t, 0.0) for t in zero_tags]
        )
        a2 = self.alpha**2

        def inner_product(u, v, x, phi):
            return a2 * fem.dot(u.grad, v.grad) + u.val * v.val

        self._system = fem.assemble_bilinear(self.space, inner_product, phi=None)
        self.rel_tol = rel_tol
        self.max_iter = max_iter
        self.last_iterations = 0

    @property
    def matrix(self):
        return self._system.matrix

    def project(self, raw_gradient):
        b = self._system.apply_rhs(np.asarray(raw_gradient, dtype=float))
        res = fem.solve_spd(self.matrix, b, rel_tol=self.rel_tol, max_iter=self.max_iter)
        self.last_iterations = res.iterations
        return res.x


def extend_velocity(vel_ext, raw_gradient):
    return vel_ext.project(raw_gradient)


def alpha_rule(max_steps, gamma, mesh):
    """Regularisation length growing with the advection distance per iteration."""
    return 4.0 * max_steps * gamma * max(mesh.delta)
