"""Vectorized forward-mode dual numbers.

A ``Dual`` carries an array of values together with an array of directional
derivatives (one trailing axis, one slot per seed direction).  All model and
constraint evaluators in this package are written against the small generic
function set below (``sqrt``, ``exp``, ``minimum`` ...), so the same code path
produces values when fed plain ndarrays and exact first derivatives when fed
duals.  Piecewise primitives (``minimum``, ``clip``, ``where``) propagate the
one-sided derivative selected by the value, which is the correct convention
for the piecewise-C1 functions used here.
"""

from __future__ import annotations

import numpy as np


def value(x):
    """Underlying value of ``x`` (identity for non-duals)."""
    return x.val if isinstance(x, Dual) else x


def _as_dot(x, shape, ndir):
    """Derivative array of ``x`` broadcast against ``shape + (ndir,)``."""
    if isinstance(x, Dual):
        return x.dot
    return np.zeros(shape + (1,))


class Dual:
    __slots__ = ("val", "dot")

    # make ndarray <op> Dual defer to the reflected operators below instead
    # of numpy silently building object arrays
    __array_ufunc__ = None

    def __init__(self, val, dot):
        self.val = np.asarray(val, dtype=float)
        self.dot = np.asarray(dot, dtype=float)

    @property
    def ndir(self):
        return self.dot.shape[-1]

    def __repr__(self):
        return f"Dual(val={self.val!r}, ndir={self.dot.shape[-1]})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.dot + other.dot)
        return Dual(self.val + other, _bcast(self.dot, np.shape(self.val + other)))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.dot - other.dot)
        return Dual(self.val - other, _bcast(self.dot, np.shape(self.val - other)))

    def __rsub__(self, other):
        return Dual(other - self.val, _bcast(-self.dot, np.shape(other - self.val)))

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val,
                        self.dot * other.val[..., None] + other.dot * self.val[..., None])
        other = np.asarray(other, dtype=float)
        return Dual(self.val * other, self.dot * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            val = self.val * inv
            dot = (self.dot - other.dot * val[..., None]) * inv[..., None]
            return Dual(val, dot)
        other = np.asarray(other, dtype=float)
        return Dual(self.val / other, self.dot / other[..., None])

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        val = other * inv
        return Dual(val, -self.dot * (val * inv)[..., None])

    def __pow__(self, p):
        if p == 2:
            return Dual(self.val ** 2, self.dot * (2.0 * self.val)[..., None])
        return Dual(self.val ** p, self.dot * (p * self.val ** (p - 1))[..., None])

    def __neg__(self):
        return Dual(-self.val, -self.dot)

    # -- comparisons operate on values (used for branch selection) ---------

    def __lt__(self, other):
        return self.val < value(other)

    def __le__(self, other):
        return self.val <= value(other)

    def __gt__(self, other):
        return self.val > value(other)

    def __ge__(self, other):
        return self.val >= value(other)


def _bcast(dot, val_shape):
    """Broadcast a dot array to a new value shape (seed axis kept last)."""
    target = tuple(val_shape) + (dot.shape[-1],)
    if dot.shape == target:
        return dot
    return np.broadcast_to(dot, target).copy()


def seed(arrays):
    """Attach orthogonal seed directions to a list of same-shaped arrays.

    Returns one Dual per input; direction i differentiates with respect to
    input i.  Used to get compact per-family Jacobians: each constraint row
    depends on a fixed small set of decision variables, so seeding those
    directly yields the dense local Jacobian block in a single pass.
    """
    k = len(arrays)
    out = []
    for i, a in enumerate(arrays):
        a = np.asarray(a, dtype=float)
        dot = np.zeros(a.shape + (k,))
        dot[..., i] = 1.0
        out.append(Dual(a, dot))
    return out


# -- elementary functions ---------------------------------------------------


def sqrt(x):
    if isinstance(x, Dual):
        r = np.sqrt(x.val)
        return Dual(r, x.dot * (0.5 / r)[..., None])
    return np.sqrt(x)


def exp(x):
    if isinstance(x, Dual):
        e = np.exp(x.val)
        return Dual(e, x.dot * e[..., None])
    return np.exp(x)


def sin(x):
    if isinstance(x, Dual):
        return Dual(np.sin(x.val), x.dot * np.cos(x.val)[..., None])
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(np.cos(x.val), x.dot * (-np.sin(x.val))[..., None])
    return np.cos(x)


def where(cond, a, b):
    """Branch select by a boolean array of values."""
    if not (isinstance(a, Dual) or isinstance(b, Dual)):
        return np.where(cond, a, b)
    av, bv = value(a), value(b)
    val = np.where(cond, av, bv)
    shape = val.shape
    ndir = max(a.ndir if isinstance(a, Dual) else 1, b.ndir if isinstance(b, Dual) else 1)
    ad = _as_dot(a, shape, ndir)
    bd = _as_dot(b, shape, ndir)
    return Dual(val, np.where(cond[..., None], ad, bd))


def minimum(a, b):
    return where(value(a) <= value(b), a, b)


def maximum(a, b):
    return where(value(a) >= value(b), a, b)


def clip(x, lo, hi):
    return minimum(maximum(x, lo), hi)
