"""Saturated sublattices of Z^d, resonance-vector enumeration, projections.

Integer work is exact: Python ints do the row reduction, with an explicit
64-bit range check so that anything leaving the desk-scale envelope is
reported instead of silently continuing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
import math
import threading

import numpy as np

# Hard ceiling on |k| for candidate enumeration.
MAX_K_NORM = 64
_I64 = 2 ** 63 - 1


class LatticeError(ValueError):
    pass


class EnumerationCapExceeded(LatticeError):
    pass


def _check64(x):
    if abs(x) > _I64:
        raise OverflowError("integer entry left the 64-bit range during reduction")
    return x


def _as_int_rows(vectors):
    rows = []
    for v in vectors:
        r = []
        for x in v:
            xi = int(round(float(x))) if not isinstance(x, (int, np.integer)) else int(x)
            if xi != x:
                raise LatticeError(f"non-integer entry {x!r}")
            r.append(xi)
        rows.append(r)
    if not rows:
        raise LatticeError("no vectors given")
    d = len(rows[0])
    if any(len(r) != d for r in rows):
        raise LatticeError("vectors of different lengths")
    return rows, d


def hermite_normal_form(vectors) -> list:
    """Row-style HNF of the integer span: echelon, positive pivots,
    entries above each pivot reduced into [0, pivot). Zero rows dropped."""
    A, d = _as_int_rows(vectors)
    A = [row[:] for row in A]
    m = len(A)
    r = 0
    for c in range(d):
        if r >= m:
            break
        # Euclid on column c among rows r..m-1
        while True:
            nz = [i for i in range(r, m) if A[i][c] != 0]
            if not nz:
                break
            p = min(nz, key=lambda i: abs(A[i][c]))
            A[r], A[p] = A[p], A[r]
            done = True
            for i in range(r + 1, m):
                if A[i][c]:
                    q = A[i][c] // A[r][c]
                    A[i] = [_check64(x - q * y) for x, y in zip(A[i], A[r])]
                    if A[i][c]:
                        done = False
            if done:
                break
        if A[r][c] == 0:
            continue
        if A[r][c] < 0:
            A[r] = [-x for x in A[r]]
        for i in range(r):
            q = A[i][c] // A[r][c]
            if q:
                A[i] = [_check64(x - q * y) for x, y in zip(A[i], A[r])]
        r += 1
    return [row for row in A[:r] if any(row)]


def _rank(rows) -> int:
    return len(hermite_normal_form(rows)) if rows else 0


def _int_kernel(rows, d) -> list:
    """Integer basis of {x in Z^d : rows . x = 0}, by unimodular column ops."""
    m = len(rows)
    # Work on the d x (m + d) matrix [rows^T | I]; column-reduce rows^T.
    M = [[rows[i][j] for i in range(m)] + [1 if k == j else 0 for k in range(d)] for j in range(d)]
    r = 0
    for c in range(m):
        while True:
            nz = [i for i in range(r, d) if M[i][c] != 0]
            if not nz:
                break
            p = min(nz, key=lambda i: abs(M[i][c]))
            M[r], M[p] = M[p], M[r]
            done = True
            for i in range(r + 1, d):
                if M[i][c]:
                    q = M[i][c] // M[r][c]
                    M[i] = [_check64(x - q * y) for x, y in zip(M[i], M[r])]
                    if M[i][c]:
                        done = False
            if done:
                break
        if r < d and M[r][c] != 0:
            r += 1
    return [row[m:] for row in M[r:]]


def saturate_rows(vectors) -> list:
    """Canonical basis of Z^d intersected with the real span (HNF rows)."""
    rows, d = _as_int_rows(vectors)
    hnf = hermite_normal_form(rows)
    if not hnf:
        raise LatticeError("all-zero input spans no module")
    s = len(hnf)
    if s == d:
        return [[1 if i == j else 0 for j in range(d)] for i in range(d)]
    # Z^d cap span(V) = (V^perp)^perp on integer kernels (both saturated).
    perp = _int_kernel(hnf, d)
    sat = _int_kernel(perp, d)
    return hermite_normal_form(sat)


@dataclass(frozen=True, eq=False)
class LatticeModule:
    """Saturated subgroup of Z^d with canonical (HNF) basis."""

    d: int
    basis: tuple   # tuple of int tuples, canonical
    _proj: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def s(self) -> int:
        return len(self.basis)

    rank = s

    @property
    def projector(self) -> np.ndarray:
        return self._proj

    def __eq__(self, other):
        return isinstance(other, LatticeModule) and self.d == other.d and self.basis == other.basis

    def __hash__(self):
        return hash((self.d, self.basis))

    def __repr__(self):
        return f"LatticeModule(d={self.d}, basis={list(map(list, self.basis))})"

    def basis_array(self) -> np.ndarray:
        return np.array(self.basis, dtype=float).reshape(self.s, self.d)

    def contains(self, k, tol: float = 1e-9) -> bool:
        """Whether the integer vector k lies in the module."""
        k = np.asarray(k, dtype=float)
        if self.s == 0:
            return not np.any(k)
        return float(np.linalg.norm(k - self._proj @ k)) <= tol * max(1.0, float(np.linalg.norm(k)))

    def contains_module(self, other: "LatticeModule") -> bool:
        return all(self.contains(b) for b in other.basis)

    def label(self) -> str:
        if self.s == 0:
            return "{}"
        return ";".join("(" + ",".join(str(x) for x in b) + ")" for b in self.basis)

    def to_dict(self) -> dict:
        return {"d": self.d, "s": self.s, "basis": [list(b) for b in self.basis]}


def _make(d, basis) -> LatticeModule:
    basis = tuple(tuple(int(x) for x in b) for b in basis)
    if basis:
        B = np.array(basis, dtype=float)
        P = B.T @ np.linalg.solve(B @ B.T, B)
    else:
        P = np.zeros((d, d))
    P.setflags(write=False)
    return LatticeModule(d, basis, P)


def trivial_module(d: int) -> LatticeModule:
    return _make(d, ())


def full_module(d: int) -> LatticeModule:
    return _make(d, [[1 if i == j else 0 for j in range(d)] for i in range(d)])


def saturate(vectors) -> LatticeModule:
    """Smallest saturated module containing the given integer vectors."""
    if isinstance(vectors, LatticeModule):
        return vectors
    rows, d = _as_int_rows(vectors)
    return _make(d, saturate_rows(rows))


def project(a, M: LatticeModule) -> np.ndarray:
    """Orthogonal projection of a (or of each row) onto the real span of M."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != M.d:
        raise LatticeError(f"dimension mismatch: {a.shape[-1]} vs {M.d}")
    return a @ M.projector.T


def independent(vectors) -> bool:
    rows = [list(v) for v in vectors]
    return _rank(rows) == len(rows) if rows else True


# ------------------------------------------------------------ enumeration

_enum_lock = threading.Lock()


@lru_cache(maxsize=None)
def _sorted_ball(d: int, cap: int) -> tuple:
    """All k != 0 with |k| <= cap, one per +-pair (first nonzero entry > 0),
    sorted by (|k|^2, lexicographic)."""
    out = []
    rng = range(-cap, cap + 1)
    for k in product(rng, repeat=d):
        n2 = sum(x * x for x in k)
        if n2 == 0 or n2 > cap * cap:
            continue
        first = next(x for x in k if x)
        if first < 0:
            continue
        out.append((n2, k))
    out.sort()
    return tuple(out)


def lattice_vectors_upto(d: int, bound: float) -> list:
    """Representatives of +-pairs with 0 < |k| <= bound, sorted by norm."""
    if bound < 1:
        return []
    if bound > MAX_K_NORM:
        raise EnumerationCapExceeded(f"|k| bound {bound:.4g} exceeds the cap {MAX_K_NORM}")
    cap = int(math.ceil(bound))
    with _enum_lock:
        ball = _sorted_ball(d, cap)
    lim = bound * bound * (1 + 1e-12)
    res = []
    for n2, k in ball:
        if n2 > lim:
            break
        res.append(k)
    return res


def enumerate_candidates(a, level: int, params) -> list:
    """All k with 0 < |k| <= D_level |a|^mu, one per +-pair, lexicographic."""
    a = np.asarray(a, dtype=float)
    bound = params.Dj(level) * float(np.linalg.norm(a)) ** params.mu
    return sorted(lattice_vectors_upto(a.size, bound))


# --------------------------------------------------- Giorgilli volume bound

@dataclass(frozen=True)
class GiorgilliResult:
    bound: float
    norm_w: float
    holds: bool


def gram_volume(U) -> float:
    U = np.atleast_2d(np.asarray(U, dtype=float))
    return math.sqrt(max(float(np.linalg.det(U @ U.T)), 0.0))


def giorgilli_bound(U, w, alpha: float, n_bound: float, check: bool = True) -> GiorgilliResult:
    """|w| <= s N^(s-1) alpha / Vol(u_1..u_s) for w in span(u_j),
    |u_j| <= N, |<w, u_j>| <= alpha."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    w = np.asarray(w, dtype=float)
    s = U.shape[0]
    vol = gram_volume(U)
    if vol <= 1e-12 * max(1.0, float(np.prod(np.linalg.norm(U, axis=1)))):
        raise LatticeError("u_j are linearly dependent")
    if check:
        coef, *_ = np.linalg.lstsq(U.T, w, rcond=None)
        resid = float(np.linalg.norm(U.T @ coef - w))
        if resid > 1e-9 * max(1.0, float(np.linalg.norm(w))):
            raise LatticeError(f"w lies outside span(u) (residual {resid:.3g})")
    bound = s * n_bound ** (s - 1) * alpha / vol
    nw = float(np.linalg.norm(w))
    return GiorgilliResult(bound, nw, nw <= bound * (1 + 1e-12))
