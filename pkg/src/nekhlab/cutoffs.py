"""Smooth cutoffs used to split symbols and to invert small divisors.

The canonical bump is

    chi(x) = 1                      for |x| <= 1/2
    chi(x) = s(2 - 2|x|)            for 1/2 < |x| < 1
    chi(x) = 0                      for |x| >= 1

with s(u) = B(u) / (B(u) + B(1 - u)) and B(u) = exp(-1/u) (u > 0), 0 otherwise.

Derivatives of every order are computed exactly by truncated Taylor
arithmetic ("jets") so that the expression DAGs in :mod:`nekhlab.expr` can
differentiate through ``bump`` as often as they like.  The same compiled
kernel backs :func:`chi` and the ``bump`` primitive of the expression grammar,
which keeps them bit-identical.

The second primitive, ``ibump(x) = (1 - chi(x)) / x``, removes the singular
factor ``1 / (a.k)`` from the divisor cutoff ``d_k``; it vanishes identically
on ``|x| <= 1/2`` and is smooth everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from numba import njit, vectorize

MAX_JET_ORDER = 12
# exp(-1/u) underflows to exactly 0.0 below this.
_B_FLOOR = 1.0 / 740.0


@njit(cache=True)
def _jet_recip(u, out):
    n = u.shape[0]
    out[0] = 1.0 / u[0]
    for k in range(1, n):
        acc = 0.0
        for j in range(1, k + 1):
            acc += u[j] * out[k - j]
        out[k] = -acc / u[0]


@njit(cache=True)
def _jet_exp(a, out):
    n = a.shape[0]
    out[0] = math.exp(a[0])
    for k in range(1, n):
        acc = 0.0
        for j in range(1, k + 1):
            acc += j * a[j] * out[k - j]
        out[k] = acc / k


@njit(cache=True)
def _jet_div(a, b, out):
    n = a.shape[0]
    for k in range(n):
        acc = a[k]
        for j in range(1, k + 1):
            acc -= b[j] * out[k - j]
        out[k] = acc / b[0]


@njit(cache=True)
def _jet_B(u, out):
    # Taylor coefficients of exp(-1/u) around u[0]
    n = u.shape[0]
    if u[0] < _B_FLOOR:
        for k in range(n):
            out[k] = 0.0
        return
    r = np.empty(n)
    _jet_recip(u, r)
    for k in range(n):
        r[k] = -r[k]
    _jet_exp(r, out)


@njit(cache=True)
def chi_jet(order, x):
    """Taylor coefficients c_0..c_order of chi at x (c_n = chi^(n)(x) / n!)."""
    n = order + 1
    out = np.zeros(n)
    ax = abs(x)
    if ax <= 0.5:
        out[0] = 1.0
        return out
    if ax >= 1.0:
        return out
    sgn = 1.0 if x > 0 else -1.0
    u = np.zeros(n)
    v = np.zeros(n)
    u[0] = 2.0 - 2.0 * ax
    v[0] = 2.0 * ax - 1.0
    if n > 1:
        u[1] = -2.0 * sgn
        v[1] = 2.0 * sgn
    bu = np.empty(n)
    bv = np.empty(n)
    _jet_B(u, bu)
    _jet_B(v, bv)
    den = np.empty(n)
    for k in range(n):
        den[k] = bu[k] + bv[k]
    _jet_div(bu, den, out)
    return out


@njit(cache=True)
def ibump_jet(order, x):
    """Taylor coefficients of (1 - chi(x)) / x."""
    n = order + 1
    out = np.zeros(n)
    ax = abs(x)
    if ax <= 0.5:
        return out
    num = np.zeros(n)
    if ax >= 1.0:
        num[0] = 1.0
    else:
        c = chi_jet(order, x)
        for k in range(n):
            num[k] = -c[k]
        num[0] += 1.0
    den = np.zeros(n)
    den[0] = x
    if n > 1:
        den[1] = 1.0
    _jet_div(num, den, out)
    return out


@njit(cache=True)
def bump_scalar(order, x):
    """order-th derivative of chi at x."""
    if order == 0:
        ax = abs(x)
        if ax <= 0.5:
            return 1.0
        if ax >= 1.0:
            return 0.0
    c = chi_jet(order, x)
    return c[order] * math.gamma(order + 1.0)


@njit(cache=True)
def ibump_scalar(order, x):
    """order-th derivative of (1 - chi(x)) / x."""
    c = ibump_jet(order, x)
    return c[order] * math.gamma(order + 1.0)


@vectorize(["float64(int64, float64)"], cache=True)
def bump_ufunc(order, x):
    return bump_scalar(order, x)


@vectorize(["float64(int64, float64)"], cache=True)
def ibump_ufunc(order, x):
    return ibump_scalar(order, x)


def chi(x, order: int = 0):
    """The canonical bump (or its ``order``-th derivative), elementwise."""
    if order < 0 or order > MAX_JET_ORDER:
        raise ValueError(f"derivative order must lie in [0, {MAX_JET_ORDER}]")
    out = bump_ufunc(np.int64(order), np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def ibump(x, order: int = 0):
    if order < 0 or order > MAX_JET_ORDER:
        raise ValueError(f"derivative order must lie in [0, {MAX_JET_ORDER}]")
    out = ibump_ufunc(np.int64(order), np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class CutoffParams:
    """Exponents of the small-divisor and ultraviolet cutoffs.

    ``delta`` must lie in (2/3, 1) for the cohomological equation to gain
    order; ``mu`` must satisfy d(d+1)/2 * mu < 1 - delta in the ambient
    dimension (checked by :meth:`validate`).
    """

    delta: float = 0.75
    mu: float = 0.08

    def __post_init__(self):
        if not (2.0 / 3.0 < self.delta < 1.0):
            raise ValueError(f"δ must exceed 2/3 and be < 1 (delta={self.delta})")
        if self.mu <= 0:
            raise ValueError(f"mu must be positive (got {self.mu})")

    def validate(self, d: int) -> "CutoffParams":
        if d * (d + 1) / 2 * self.mu >= 1 - self.delta:
            raise ValueError(
                f"mu={self.mu} violates d(d+1)/2*mu < 1-delta for d={d}, delta={self.delta}"
            )
        return self

    def saturation_radius(self, knorm: float) -> float:
        """Smallest |a| from which chi_uv equals 1 for every |k| <= knorm."""
        return (2.0 * knorm) ** (1.0 / self.mu)


def _norm(a):
    return np.linalg.norm(np.asarray(a, dtype=float), axis=-1)


def _check_k(k):
    k = np.asarray(k, dtype=float)
    if not np.any(k):
        raise ValueError("k = 0 is not allowed here")
    return k


def resonance_ratio(a, k, params: CutoffParams):
    """(a.k) / (|a|^delta |k|), the argument of chi_k."""
    k = _check_k(k)
    a = np.asarray(a, dtype=float)
    return (a @ k) / (_norm(a) ** params.delta * np.linalg.norm(k))


def chi_res(a, k, params: CutoffParams):
    """Small-divisor cutoff chi_k(a) = chi((a.k) / (|a|^delta |k|))."""
    return chi(resonance_ratio(a, k, params))


def chi_uv(a, k, params: CutoffParams):
    """Ultraviolet cutoff chi(|k| / |a|^mu)."""
    k = np.asarray(k, dtype=float)
    return chi(np.linalg.norm(k) / _norm(a) ** params.mu)


def d_k(a, k, params: CutoffParams):
    """(1 - chi_k(a)) / (a.k), evaluated without the removable singularity."""
    k = _check_k(k)
    a = np.asarray(a, dtype=float)
    scale = _norm(a) ** params.delta * np.linalg.norm(k)
    return ibump((a @ k) / scale) / scale
