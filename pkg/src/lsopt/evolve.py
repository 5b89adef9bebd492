"""First-order Godunov upwind solvers on the node grid.

Both the transport equation (interface advection under a normal velocity)
and the signed-distance reinitialisation equation are stepped explicitly
with one-sided differences selected by the local propagation direction.
Non-periodic boundaries copy the interior one-sided difference outward;
periodic axes wrap.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np


@dataclass
class EvolveParams:
    """CFL numbers, step counts and stopping tolerance for the stencils."""

    gamma: float = 0.1
    gamma_reinit: float = 0.5
    max_steps: int = 10
    tol: float = 1e-3
    step_cap: int = 2000

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.gamma_reinit <= 1:
            raise ValueError("gamma_reinit must lie in (0, 1]")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def default_evolve_params(mesh, gamma=0.1, gamma_reinit=0.5, tol=1e-3):
    """Defaults with max_steps scaled by the mesh resolution."""
    max_steps = max(1, math.ceil(10 * min(mesh.el_size) / 100))
    return EvolveParams(gamma=gamma, gamma_reinit=gamma_reinit, max_steps=max_steps, tol=tol)


class StencilWorkspace:
    """Grid geometry and ghost handling for the difference stencils."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.shape = mesh.grid_shape
        self.dim = mesh.dim
        # mesh axis ax is grid axis dim-1-ax (flat order is x-fastest)
        self.grid_axis = [mesh.dim - 1 - ax for ax in range(mesh.dim)]
        self.delta = mesh.delta
        self.periodic = mesh.periodic

    def one_sided(self, grid):
        """Forward and backward differences per mesh axis."""
        fwd, bwd = [], []
        for ax in range(self.dim):
            gax = self.grid_axis[ax]
            inv = 1.0 / self.delta[ax]
            if self.periodic[ax]:
                dp = (np.roll(grid, -1, axis=gax) - grid) * inv
                dm = (grid - np.roll(grid, 1, axis=gax)) * inv
            else:
                diff = np.diff(grid, axis=gax) * inv
                first = np.take(diff, [0], axis=gax)
                last = np.take(diff, [-1], axis=gax)
                dp = np.concatenate([diff, last], axis=gax)
                dm = np.concatenate([first, diff], axis=gax)
            fwd.append(dp)
            bwd.append(dm)
        return fwd, bwd

    def central_gradient(self, grid):
        """Central-difference gradient, one-sided at non-periodic boundaries."""
        fwd, bwd = self.one_sided(grid)
        return [(f + b) * 0.5 for f, b in zip(fwd, bwd)]


def upwind_norms(phi_grid, workspace):
    """Godunov gradient norms for positive and negative propagation."""
    fwd, bwd = workspace.one_sided(phi_grid)
    gp = np.zeros_like(phi_grid)
    gm = np.zeros_like(phi_grid)
    for dp, dm in zip(fwd, bwd):
        gp += np.maximum(dm, 0.0) ** 2 + np.minimum(dp, 0.0) ** 2
        gm += np.minimum(dm, 0.0) ** 2 + np.maximum(dp, 0.0) ** 2
    np.sqrt(gp, out=gp)
    np.sqrt(gm, out=gm)
    return gp, gm


def evolve(phi, velocity, params, mesh, gamma=None):
    """Advect the level set under a nodal normal velocity, in place.

    Performs exactly ``params.max_steps`` explicit Euler steps with the time
    step set by the CFL number and the peak speed.  A zero velocity field is
    a no-op.
    """
    ws = _workspace(mesh)
    vmax = float(np.max(np.abs(velocity)))
    if vmax == 0.0:
        return phi
    g = gamma if gamma is not None else params.gamma
    dt = g * min(mesh.delta) / vmax
    grid = phi.reshape(ws.shape)
    vgrid = np.asarray(velocity).reshape(ws.shape)
    vpos = np.maximum(vgrid, 0.0)
    vneg = np.minimum(vgrid, 0.0)
    for _ in range(params.max_steps):
        gp, gm = upwind_norms(grid, ws)
        grid -= dt * (vpos * gp + vneg * gm)
    return phi


ReinitResult = namedtuple("ReinitResult", ["steps", "converged", "last_delta"])


def reinit(phi, params, mesh):
    """Relax the level set towards a signed distance function, in place.

    The regularised sign is recomputed from the current iterate every step.
    Returns a result flagging whether the step cap was hit (best effort).
    """
    ws = _workspace(mesh)
    h = min(mesh.delta)
    eps_s = h
    dt = params.gamma_reinit * h
    threshold = params.tol * h
    grid = phi.reshape(ws.shape)
    last_delta = np.inf
    for step in range(1, params.step_cap + 1):
        gp, gm = upwind_norms(grid, ws)
        grads = ws.central_gradient(grid)
        gnorm2 = sum(g * g for g in grads)
        denom = np.sqrt(grid * grid + eps_s * eps_s * gnorm2)
        sign = np.divide(grid, denom, out=np.zeros_like(grid), where=denom > 0)
        update = dt * (np.maximum(sign, 0.0) * (gp - 1.0) + np.minimum(sign, 0.0) * (gm - 1.0))
        grid -= update
        last_delta = float(np.max(np.abs(update)))
        if last_delta < threshold:
            return ReinitResult(step, True, last_delta)
    return ReinitResult(params.step_cap, False, last_delta)


def gradient_norm(phi, mesh):
    """Nodal central-difference gradient magnitude of a flat field."""
    ws = _workspace(mesh)
    grads = ws.central_gradient(phi.reshape(ws.shape))
    return np.sqrt(sum(g * g for g in grads)).reshape(-1)


def _workspace(mesh):
    cache = mesh._cache
    if "stencil" not in cache:
        cache["stencil"] = StencilWorkspace(mesh)
    return cache["stencil"]
