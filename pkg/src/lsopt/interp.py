"""Level set container and smoothed material interpolation.

The material domain is the negative region of the level set.  Domain
integrals are relaxed onto the full box with the smoothed Heaviside, and
state equations keep a soft "ersatz" stiffness floor in the void so the
discrete operators stay definite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dual, fem


@dataclass
class ErsatzInterpolation:
    """Transition half-width eta and void stiffness floor eps."""

    eta: float
    eps: float = 1e-3

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")


def default_eta(mesh):
    """Transition half-width: twice the maximum element side length."""
    return 2.0 * max(mesh.delta)


@dataclass
class LevelSet:
    """Nodal level set values paired with interpolation parameters."""

    values: np.ndarray
    interp: ErsatzInterpolation

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("level set values must be finite")


def heaviside(phi, eta):
    """Smoothed Heaviside, ramping from 0 to 1 over |phi| <= eta."""
    mid = 0.5 + phi / (2.0 * eta) + dual.sin(phi * (np.pi / eta)) / (2.0 * np.pi)
    lo = dual.value(phi) < -eta
    hi = dual.value(phi) > eta
    return dual.where(lo, 0.0, dual.where(hi, 1.0, mid))


def heaviside_deriv(phi, eta):
    """Derivative of the smoothed Heaviside; integrates to one."""
    band = np.abs(dual.value(phi)) <= eta
    mid = (1.0 + dual.cos(phi * (np.pi / eta))) / (2.0 * eta)
    return dual.where(band, mid, 0.0)


def ersatz(phi, interp):
    """Material indicator relaxed to [eps, 1]: 1 in the domain, eps outside."""
    H = heaviside(phi, interp.eta)
    return (1.0 - H) + interp.eps * H


def density(phi, interp):
    """Relaxed characteristic function of the material domain."""
    return 1.0 - heaviside(phi, interp.eta)


def initial_lsf(xi, a):
    """Product-of-cosines seed level set with hole pattern xi and offset a."""

    def lsf(x):
        x = np.asarray(x, dtype=float)
        prod = np.prod(np.cos(xi * np.pi * x), axis=-1)
        return -0.25 * prod - 0.25 * a

    return lsf


def volume_fraction(mesh, phi, interp):
    """Relaxed material volume divided by the volume of the box."""
    vol_d = float(np.prod(mesh.lengths))
    val = fem.integrate(mesh, lambda x, phi: density(phi.val, interp), phi=phi)
    return val / vol_d
