"""Forward-mode dual numbers that broadcast over numpy arrays.

A Dual carries a primal value and one tangent.  The math helpers below
dispatch on type so the same integrand code runs on plain arrays and on
seeded duals.
"""

from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("val", "dot")

    # force ndarray <op> Dual to defer to the reflected Dual operators
    __array_ufunc__ = None

    def __init__(self, val, dot):
        self.val = np.asarray(val, dtype=float) if np.ndim(val) else float(val)
        self.dot = np.asarray(dot, dtype=float) if np.ndim(dot) else float(dot)

    @property
    def shape(self):
        return np.shape(self.val)

    def __repr__(self):
        return f"Dual({self.val!r}, {self.dot!r})"

    # arithmetic ------------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.dot + other.dot)
        return Dual(self.val + other, self.dot + np.zeros_like(np.asarray(other, dtype=float)))

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Dual) else -np.asarray(other, dtype=float))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.dot * other.val + self.val * other.dot)
        return Dual(self.val * other, self.dot * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            return Dual(self.val * inv, (self.dot - self.val * inv * other.dot) * inv)
        return Dual(self.val / other, self.dot / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        return Dual(other * inv, -other * inv * inv * self.dot)

    def __pow__(self, p):
        return Dual(self.val**p, p * self.val ** (p - 1) * self.dot)

    # comparisons act on the primal part only
    def __lt__(self, other):
        return self.val < value(other)

    def __le__(self, other):
        return self.val <= value(other)

    def __gt__(self, other):
        return self.val > value(other)

    def __ge__(self, other):
        return self.val >= value(other)

    # array-ish helpers -----------------------------------------------------

    def __getitem__(self, key):
        return Dual(self.val[key], self.dot[key])

    def sum(self, axis=None):
        return Dual(np.sum(self.val, axis=axis), np.sum(self.dot, axis=axis))


def value(x):
    return x.val if isinstance(x, Dual) else x


def tangent(x):
    if isinstance(x, Dual):
        return x.dot
    return np.zeros_like(np.asarray(x, dtype=float))


def sin(x):
    if isinstance(x, Dual):
        return Dual(np.sin(x.val), np.cos(x.val) * x.dot)
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(np.cos(x.val), -np.sin(x.val) * x.dot)
    return np.cos(x)


def sqrt(x):
    if isinstance(x, Dual):
        root = np.sqrt(x.val)
        return Dual(root, 0.5 / root * x.dot)
    return np.sqrt(x)


def exp(x):
    if isinstance(x, Dual):
        e = np.exp(x.val)
        return Dual(e, e * x.dot)
    return np.exp(x)


def where(cond, a, b):
    """Branch select; the tangent follows the chosen branch."""
    cond = np.asarray(cond)
    if isinstance(a, Dual) or isinstance(b, Dual):
        av, bv = value(a), value(b)
        ad, bd = tangent(a), tangent(b)
        return Dual(np.where(cond, av, bv), np.where(cond, ad, bd))
    return np.where(cond, a, b)


def maximum(a, b):
    return where(value(a) >= value(b), a, b)


def minimum(a, b):
    return where(value(a) <= value(b), a, b)
