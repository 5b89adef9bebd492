"""Augmented Lagrangian optimiser loop.

Each iteration solves the state, evaluates the objective and constraints,
combines their derivative vectors into the Lagrangian gradient, extends it
to a velocity, advects and reinitialises the level set, and updates the
multipliers.  Oscillations of the Lagrangian trigger a 25% CFL reduction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import evolve as ev


@dataclass
class LagrangianState:
    """Multipliers and penalties of the augmented Lagrangian."""

    lam: np.ndarray
    Lam: np.ndarray
    xi: float = 1.2
    Lam_max: float = 100.0
    update_period: int = 5

    def __post_init__(self):
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        self.Lam = np.atleast_1d(np.asarray(self.Lam, dtype=float))
        if self.xi <= 1:
            raise ValueError("penalty growth factor must exceed 1")


@dataclass
class HistoryRecord:
    iteration: int
    J: float
    C: tuple
    L: float
    gamma: float
    solver_iterations: tuple = ()


class History:
    """Append-only per-iteration records with strictly increasing indices."""

    def __init__(self):
        self.records = []

    def append(self, record):
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("history iterations must strictly increase")
        self.records.append(record)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]


def lagrangian_value(J_val, C_vals, state):
    C = np.atleast_1d(np.asarray(C_vals, dtype=float))
    return float(J_val - np.sum(state.lam * C + 0.5 * state.Lam * C**2))


def lagrangian_gradient(dJ, dC_list, C_vals, state):
    out = np.array(dJ, copy=True)
    C = np.atleast_1d(np.asarray(C_vals, dtype=float))
    for i, dC in enumerate(dC_list):
        out -= (state.lam[i] - state.Lam[i] * C[i]) * dC
    return out


def update_multipliers(state, C_vals, iteration):
    """Multiplier step every call; periodic capped penalty growth."""
    C = np.atleast_1d(np.asarray(C_vals, dtype=float))
    state.lam = state.lam - state.Lam * C
    if iteration % state.update_period == 0:
        state.Lam = np.minimum(state.xi * state.Lam, state.Lam_max)
    return state


def has_oscillations(L_values, window):
    """Alternating-sign Lagrangian differences across the trailing window."""
    if window < 4 or len(L_values) < window:
        return False
    L = np.asarray(L_values, dtype=float)[-window:]
    diffs = np.diff(L)
    if np.mean(np.abs(diffs)) <= 1e-12 * abs(L[-1]):
        return False
    signs = np.sign(diffs)
    if np.any(signs == 0):
        return False
    return bool(np.all(signs[1:] * signs[:-1] < 0))


def converged(history, C_vals, mesh, dim):
    """Five-lag relative Lagrangian window plus the constraint threshold."""
    if len(history) < 6:
        return False
    L = history.column("L")
    Lq = L[-1]
    thresh = 0.01 * max(mesh.delta) / (dim - 1)
    denom = max(abs(Lq), 1e-300)
    if np.any(np.abs(Lq - L[-6:-1]) / denom >= thresh):
        return False
    C = np.atleast_1d(np.asarray(C_vals, dtype=float))
    return bool(np.all(np.abs(C) < 0.01))


@dataclass
class OptimiserParams:
    max_iter: int = 1000
    osc_window: int = 8
    gamma_floor_factor: float = 16.0
    descent_probe: bool = False
    callback: object = None
    verbose: bool = False


@dataclass
class RunResult:
    phi: np.ndarray
    history: History
    status: str           # converged | max_iter | stalled
    gamma: float
    gamma_reductions: int
    probe_descent_ok: int = 0
    probe_total: int = 0


def _initial_penalty(J0, C0):
    C0 = np.atleast_1d(np.asarray(C0, dtype=float))
    Lam0 = 0.1 * abs(J0) / np.maximum(C0**2, 1e-12)
    return np.clip(Lam0, 1e-2, 1e2)


def run(problem, phi0, params=None):
    """Drive the augmented Lagrangian loop on an assembled problem.

    The problem provides ``evaluate(phi)`` and ``gradients(evaluation, phi)``
    plus mesh, evolve parameters and the velocity extension.  Returns the
    final level set, the history, and a status flag.
    """
    params = params or OptimiserParams()
    history = History()
    phi = np.array(phi0, dtype=float, copy=True)
    if params.max_iter == 0:
        return RunResult(phi, history, "max_iter", problem.evolve_params.gamma, 0)

    mesh = problem.mesh
    ep = problem.evolve_params
    ev.reinit(phi, ep, mesh)

    evaluation = problem.evaluate(phi)
    if not np.isfinite(evaluation.J):
        raise RuntimeError("non-finite objective at the initial design")
    lagr = LagrangianState(
        lam=np.zeros(len(evaluation.C)),
        Lam=_initial_penalty(evaluation.J, evaluation.C),
    )
    lagr.Lam_max = 100.0 * float(np.max(lagr.Lam)) if len(lagr.Lam) else 100.0

    gamma = ep.gamma
    gamma0 = ep.gamma
    reductions = 0
    status = "max_iter"
    probe_ok = 0
    probe_total = 0
    last_osc_iteration = 0

    for it in range(1, params.max_iter + 1):
        L = lagrangian_value(evaluation.J, evaluation.C, lagr)
        if not np.isfinite(L):
            raise RuntimeError(f"non-finite Lagrangian at iteration {it}")

        L_window = list(history.column("L")) + [L] if len(history) else [L]
        if it - last_osc_iteration >= params.osc_window and has_oscillations(
            L_window, params.osc_window
        ):
            gamma *= 0.75
            reductions += 1
            last_osc_iteration = it
            if gamma < gamma0 / params.gamma_floor_factor:
                history.append(HistoryRecord(it, evaluation.J, tuple(evaluation.C), L, gamma, evaluation.solver_iterations))
                status = "stalled"
                break

        record = HistoryRecord(it, evaluation.J, tuple(evaluation.C), L, gamma, evaluation.solver_iterations)
        history.append(record)
        if params.verbose:
            cs = " ".join(f"{c:+.4e}" for c in evaluation.C)
            print(f"it {it:4d}  J {evaluation.J:.6e}  C {cs}  L {L:.6e}  gamma {gamma:.4f}")
        if params.callback is not None:
            params.callback(record, problem, phi, evaluation)

        if converged(history, evaluation.C, mesh, mesh.dim):
            status = "converged"
            break

        dJ, dC = problem.gradients(evaluation, phi)
        raw = lagrangian_gradient(dJ, dC, evaluation.C, lagr)
        velocity = problem.vel_ext.project(raw)
        problem.last_velocity = velocity

        if params.descent_probe:
            probe = phi.copy()
            ev.evolve(probe, velocity, ep, mesh, gamma=0.5 * gamma)
            ev.reinit(probe, ep, mesh)
            probe_eval = problem.evaluate(probe)
            L_probe = lagrangian_value(probe_eval.J, probe_eval.C, lagr)
            probe_total += 1
            if L_probe <= L + 1e-8 * abs(L):
                probe_ok += 1

        ev.evolve(phi, velocity, ep, mesh, gamma=gamma)
        ev.reinit(phi, ep, mesh)
        update_multipliers(lagr, evaluation.C, it)
        evaluation = problem.evaluate(phi)

    return RunResult(phi, history, status, gamma, reductions, probe_ok, probe_total)
