"""Symbols on T^d x R^d x R stored as truncated Fourier series in the angles.

A :class:`SymbolFunction` holds, for each integer vector k with
``max|k_i| <= kmax``, a coefficient DAG f_k(a, t) (see :mod:`nekhlab.expr`);
its value is ``sum_k f_k(a, t) exp(i k.phi)``.  Angle derivatives are exact
Fourier multipliers, action/time derivatives are exact DAG derivatives.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json
import math
from itertools import product
from typing import Iterable

import numpy as np

from . import expr as ex
from .expr import Expr

TWO_PI = 2.0 * math.pi


class TruncationError(RuntimeError):
    """A product or bracket produced modes beyond the output ``kmax``."""


class RealityError(ValueError):
    pass


@dataclass(frozen=True)
class PhasePoint:
    actions: np.ndarray
    angles: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.actions, dtype=float))
        phi = np.mod(np.atleast_1d(np.asarray(self.angles, dtype=float)), TWO_PI)
        if a.ndim != 1 or a.shape != phi.shape or a.size < 1:
            raise ValueError("actions and angles must be vectors of the same length d >= 1")
        object.__setattr__(self, "actions", a)
        object.__setattr__(self, "angles", phi)
        object.__setattr__(self, "time", float(self.time))

    @property
    def d(self) -> int:
        return self.actions.size


def _k(k) -> tuple:
    return tuple(int(x) for x in k)


class SymbolFunction:
    """Immutable truncated Fourier series with DAG coefficients."""

    __slots__ = ("d", "kmax", "real", "truncated", "_coeffs", "_grad")

    def __init__(self, d: int, coeffs: dict | None = None, kmax: int = 32,
                 real: bool = True, truncated: bool = False, on_overflow: str = "fail"):
        if d < 1:
            raise ValueError("d must be >= 1")
        self.d = int(d)
        self.kmax = int(kmax)
        self.real = bool(real)
        self.truncated = bool(truncated)
        clean = {}
        for k, e in (coeffs or {}).items():
            k = _k(k)
            if len(k) != self.d:
                raise ValueError(f"mode {k} has wrong dimension for d={d}")
            e = ex.as_expr(e)
            if e.is_zero:
                continue
            if max(abs(x) for x in k) > self.kmax:
                if on_overflow == "fail":
                    raise TruncationError(f"mode {k} exceeds kmax={self.kmax}")
                self.truncated = True
                continue
            clean[k] = ex.add(clean[k], e) if k in clean else e
        self._coeffs = {k: e for k, e in sorted(clean.items()) if not e.is_zero}
        self._grad = None

    # ------------------------------------------------------------ basics
    @property
    def modes(self) -> list:
        return list(self._coeffs)

    def coeff(self, k) -> Expr:
        return self._coeffs.get(_k(k), ex.ZERO)

    def items(self):
        return self._coeffs.items()

    @property
    def is_zero(self) -> bool:
        return not self._coeffs

    def __len__(self):
        return len(self._coeffs)

    def key(self) -> tuple:
        return tuple((k, e.uid) for k, e in self._coeffs.items())

    def __eq__(self, other):
        return isinstance(other, SymbolFunction) and self.d == other.d and self.key() == other.key()

    def __hash__(self):
        return hash((self.d, self.key()))

    def __repr__(self):
        return f"SymbolFunction(d={self.d}, modes={len(self)}, kmax={self.kmax}, real={self.real})"

    def time_dependent(self) -> bool:
        return any(ex.depends_on(e, "t") for e in self._coeffs.values())

    def max_mode_norm(self) -> float:
        return max((math.sqrt(sum(x * x for x in k)) for k in self._coeffs), default=0.0)

    def node_count(self) -> int:
        return len(ex.topo_order(self._coeffs.values()))

    def _new(self, coeffs, real=None, kmax=None, truncated=False, on_overflow="fail"):
        return SymbolFunction(self.d, coeffs, kmax=self.kmax if kmax is None else kmax,
                              real=self.real if real is None else real,
                              truncated=truncated, on_overflow=on_overflow)

    # ---------------------------------------------------------- algebra
    def __add__(self, other):
        if not isinstance(other, SymbolFunction):
            other = constant(self.d, other, kmax=self.kmax)
        _same_dim(self, other)
        out = dict(self._coeffs)
        for k, e in other.items():
            out[k] = ex.add(out[k], e) if k in out else e
        return self._new(out, real=self.real and other.real, kmax=max(self.kmax, other.kmax),
                         truncated=self.truncated or other.truncated)

    __radd__ = __add__

    def __neg__(self):
        return self._new({k: ex.neg(e) for k, e in self.items()}, truncated=self.truncated)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c) -> "SymbolFunction":
        c = complex(c)
        real = self.real and c.imag == 0
        return self._new({k: ex.mul(c, e) for k, e in self.items()}, real=real,
                         truncated=self.truncated)

    def times_expr(self, e: Expr, real: bool | None = None) -> "SymbolFunction":
        """Multiply every coefficient by an angle-independent expression."""
        e = ex.as_expr(e)
        return self._new({k: ex.mul(e, c) for k, c in self.items()},
                         real=self.real and e.is_real if real is None else real,
                         truncated=self.truncated)

    def map_coeffs(self, fn, real: bool | None = None) -> "SymbolFunction":
        """New symbol with coefficient k replaced by fn(k, coeff)."""
        return self._new({k: fn(k, e) for k, e in self.items()},
                         real=self.real if real is None else real, truncated=self.truncated)

    def multiply(self, other: "SymbolFunction", kmax: int | None = None,
                 on_overflow: str = "flag") -> "SymbolFunction":
        """Pointwise product (Fourier convolution)."""
        _same_dim(self, other)
        kmax = max(self.kmax, other.kmax) if kmax is None else kmax
        acc: dict = {}
        for k1, e1 in self.items():
            for k2, e2 in other.items():
                k = tuple(x + y for x, y in zip(k1, k2))
                acc.setdefault(k, []).append(ex.mul(e1, e2))
        return _collect(self.d, acc, kmax, self.real and other.real, on_overflow,
                        self.truncated or other.truncated)

    __mul__ = multiply

    # ------------------------------------------------------ derivatives
    def derive_angle(self, j: int) -> "SymbolFunction":
        _check_index(j, self.d)
        return self._new({k: ex.mul(1j * k[j - 1], e) for k, e in self.items()},
                         truncated=self.truncated)

    def derive_action(self, j: int) -> "SymbolFunction":
        _check_index(j, self.d)
        name = f"a{j}"
        return self._new({k: ex.diff(e, name) for k, e in self.items()}, truncated=self.truncated)

    def derive_time(self) -> "SymbolFunction":
        return self._new({k: ex.diff(e, "t") for k, e in self.items()}, truncated=self.truncated)

    def gradients(self) -> dict:
        """Cached map k -> [d f_k / d a_j for j = 1..d]."""
        if self._grad is None:
            self._grad = {k: [ex.diff(e, f"a{j + 1}") for j in range(self.d)]
                          for k, e in self.items()}
        return self._grad

    # ------------------------------------------------------- evaluation
    def coefficient_values(self, a, t=0.0) -> tuple:
        """(modes array (m, d), values (n, m) complex) at the points a (n, d)."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        modes = np.array(self.modes, dtype=float).reshape(-1, self.d)
        if not self._coeffs:
            return modes, np.zeros((a.shape[0], 0), dtype=complex)
        vals = ex.evaluate_many(list(self._coeffs.values()), a, t)
        return modes, np.stack([np.asarray(v, dtype=complex) for v in vals], axis=1)

    def values(self, a, phi, t=0.0, complex_out: bool = False):
        """Evaluate at paired points: a (n, d), phi (n, d), t scalar or (n,)."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        phi = np.atleast_2d(np.asarray(phi, dtype=float))
        modes, cv = self.coefficient_values(a, t)
        if modes.shape[0] == 0:
            z = np.zeros(a.shape[0], dtype=complex)
        else:
            z = np.einsum("nm,nm->n", cv, np.exp(1j * phi @ modes.T))
        if complex_out or not self.real:
            return z
        return z.real

    def grid_values(self, a, t, phi) -> np.ndarray:
        """Complex values on the product of (a_i, t_i) pairs and angle points phi_j."""
        modes, cv = self.coefficient_values(a, t)
        if modes.shape[0] == 0:
            return np.zeros((cv.shape[0], np.atleast_2d(phi).shape[0]), dtype=complex)
        return cv @ np.exp(1j * np.atleast_2d(phi) @ modes.T).T

    def __call__(self, p: PhasePoint):
        return evaluate(self, p)

    # --------------------------------------------------- serialization
    def to_dict(self, share: bool = True) -> dict:
        exprs = list(self._coeffs.values())
        defs, refs = ex.shared_defs(exprs) if share else ([], {})
        doc = {"d": self.d, "K_max": self.kmax, "real": self.real,
               "modes": [{"k": list(k), "expr": ex.to_string(e, refs)} for k, e in self.items()]}
        if defs:
            doc["defs"] = defs
        if self.truncated:
            doc["truncated"] = True
        return doc

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "SymbolFunction":
        try:
            d = int(doc["d"])
            kmax = int(doc.get("K_max", 32))
            real = bool(doc.get("real", True))
            modes = doc["modes"]
        except KeyError as err:
            raise ValueError(f"symbol document lacks key {err}") from None
        defs: list = []
        for text in doc.get("defs", []):
            defs.append(ex.parse(text, defs))
        coeffs = {}
        for m in modes:
            k = _k(m["k"])
            e = ex.parse(m["expr"], defs)
            coeffs[k] = ex.add(coeffs[k], e) if k in coeffs else e
        return cls(d, coeffs, kmax=kmax, real=real, truncated=bool(doc.get("truncated", False)))

    @classmethod
    def from_json(cls, text: str) -> "SymbolFunction":
        return cls.from_dict(json.loads(text))


def _same_dim(f, g):
    if f.d != g.d:
        raise ValueError(f"dimension mismatch: {f.d} vs {g.d}")


def _check_index(j, d):
    if not 1 <= j <= d:
        raise IndexError(f"index {j} outside 1..{d}")


def _collect(d, acc, kmax, real, on_overflow, truncated):
    coeffs = {}
    over = False
    for k, terms in acc.items():
        if max(abs(x) for x in k) > kmax:
            over = True
            continue
        coeffs[k] = ex.add(*terms)
    if over:
        if on_overflow == "fail":
            raise TruncationError(f"result has modes beyond kmax={kmax}")
        truncated = True
    return SymbolFunction(d, coeffs, kmax=kmax, real=real, truncated=truncated)


# ----------------------------------------------------------- constructors

def constant(d: int, c, kmax: int = 32) -> SymbolFunction:
    c = complex(c)
    return SymbolFunction(d, {(0,) * d: ex.const(c)}, kmax=kmax, real=c.imag == 0)


def from_coefficient(d: int, e, kmax: int = 32) -> SymbolFunction:
    """Angle-independent symbol with the given coefficient DAG."""
    e = ex.as_expr(e)
    return SymbolFunction(d, {(0,) * d: e}, kmax=kmax, real=e.is_real)


def h0(d: int, kmax: int = 32) -> SymbolFunction:
    """Free kinetic energy |a|^2 / 2."""
    return from_coefficient(d, ex.mul(0.5, ex.add(*(ex.power(ex.action(j), 2) for j in range(1, d + 1)))), kmax)


def mode(d: int, k, e, kmax: int = 32, real: bool = False) -> SymbolFunction:
    """Single complex mode e(a, t) exp(i k.phi)."""
    return SymbolFunction(d, {_k(k): ex.as_expr(e)}, kmax=kmax, real=real)


def cos_mode(d: int, k, e, kmax: int = 32, phase=0.0) -> SymbolFunction:
    """e(a, t) cos(k.phi + phase) for real e."""
    k = _k(k)
    e = ex.as_expr(e)
    if not any(k):
        return from_coefficient(d, ex.mul(math.cos(phase), e), kmax)
    z = complex(math.cos(phase), math.sin(phase)) / 2
    mk = tuple(-x for x in k)
    return SymbolFunction(d, {k: ex.mul(z, e), mk: ex.mul(z.conjugate(), e)}, kmax=kmax, real=True)


def sin_mode(d: int, k, e, kmax: int = 32) -> SymbolFunction:
    """e(a, t) sin(k.phi) for real e."""
    return cos_mode(d, k, e, kmax, phase=-math.pi / 2)


def trig_time(d: int, k, e, omega: float, kmax: int = 32) -> SymbolFunction:
    """e(a) cos(k.phi - omega t) built from complex exponentials in t."""
    k = _k(k)
    e = ex.as_expr(e)
    mk = tuple(-x for x in k)
    w = ex.exp(ex.mul(-1j * omega, ex.T))
    wbar = ex.exp(ex.mul(1j * omega, ex.T))
    if not any(k):
        return from_coefficient(d, ex.mul(0.5, e, ex.add(w, wbar)), kmax)
    return SymbolFunction(d, {k: ex.mul(0.5, e, w), mk: ex.mul(0.5, e, wbar)}, kmax=kmax, real=True)


# ------------------------------------------------------------ operations

def evaluate(f: SymbolFunction, p: PhasePoint, check_real: bool = True):
    """sum_k f_k(a, t) exp(i k.phi) at a single phase point."""
    if p.d != f.d:
        raise ValueError(f"dimension mismatch: point has d={p.d}, symbol d={f.d}")
    modes, cv = f.coefficient_values(p.actions[None, :], p.time)
    if modes.shape[0] == 0:
        return 0.0 if f.real else 0j
    terms = cv[0] * np.exp(1j * modes @ p.angles)
    z = complex(terms.sum())
    if not f.real:
        return z
    mag = float(np.abs(terms).sum())
    if check_real and abs(z.imag) > 1e-12 * mag + 1e-300:
        raise RealityError(f"imaginary part {z.imag:g} exceeds 1e-12 * {mag:g}")
    return z.real


def derive_angle(f: SymbolFunction, j: int) -> SymbolFunction:
    return f.derive_angle(j)


def derive_action(f: SymbolFunction, j: int) -> SymbolFunction:
    return f.derive_action(j)


def derive_time(f: SymbolFunction) -> SymbolFunction:
    return f.derive_time()


def poisson_bracket(f: SymbolFunction, g: SymbolFunction, kmax: int | None = None,
                    on_overflow: str = "flag") -> SymbolFunction:
    """{f; g} = sum_j df/dphi_j dg/da_j - dg/dphi_j df/da_j.

    Modes of the convolution beyond ``kmax`` are dropped and flagged
    (``on_overflow="flag"``) or raise :class:`TruncationError` (``"fail"``).
    Antisymmetry is exact: the pair is put in a canonical order first and
    the swapped bracket is the exact negation.
    """
    _same_dim(f, g)
    kmax = max(f.kmax, g.kmax) if kmax is None else kmax
    real = f.real and g.real
    fk, gk = f.key(), g.key()
    if fk == gk:
        return SymbolFunction(f.d, {}, kmax=kmax, real=real)
    if fk > gk:
        return -poisson_bracket(g, f, kmax=kmax, on_overflow=on_overflow)
    fgrad, ggrad = f.gradients(), g.gradients()
    acc: dict = {}
    for k1, e1 in f.items():
        df1 = fgrad[k1]
        for k2, e2 in g.items():
            dg2 = ggrad[k2]
            # i [ f_k1 (k1 . grad g_k2) - g_k2 (k2 . grad f_k1) ]
            t1 = ex.mul(e1, ex.dot(k1, dg2))
            t2 = ex.mul(e2, ex.dot(k2, df1))
            term = ex.mul(1j, ex.add(t1, ex.neg(t2)))
            if term.is_zero:
                continue
            k = tuple(x + y for x, y in zip(k1, k2))
            acc.setdefault(k, []).append(term)
    return _collect(f.d, acc, kmax, real, on_overflow, f.truncated or g.truncated)


# --------------------------------------------------------- order estimates

@dataclass(frozen=True)
class SeminormEstimate:
    order: float
    delta: float
    n1: int
    n2: int
    value: float
    sample: dict = field(default_factory=dict)


def _multi_indices(d, n):
    return [al for al in product(range(n + 1), repeat=d) if sum(al) == n]


def estimate_seminorm(f: SymbolFunction, m: float, delta: float, n1: int, n2: int,
                      grid, times=(0.0,)) -> SeminormEstimate:
    """Sampled version of sup |d^alpha_a f_k(a)| |k|^n2 <a>^-(m - delta |alpha|)."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("empty grid")
    if n1 > 2 or n1 < 0:
        raise ValueError("n1 must be 0, 1 or 2")
    if grid.shape[1] != f.d:
        raise ValueError("grid dimension mismatch")
    best = 0.0
    weight_a = np.sqrt(1.0 + np.sum(grid ** 2, axis=1)) ** (-(m - delta * n1))
    jobs = []
    for k, e in f.items():
        kn = math.sqrt(sum(x * x for x in k)) ** n2 if n2 else 1.0
        if kn == 0:
            continue
        for al in _multi_indices(f.d, n1):
            de = e
            for j, cnt in enumerate(al):
                for _ in range(cnt):
                    de = ex.diff(de, f"a{j + 1}")
            jobs.append((kn, de))
    for t in times:
        vals = ex.evaluate_many([de for _, de in jobs], grid, t)
        for (kn, _), v in zip(jobs, vals):
            best = max(best, float(np.max(np.abs(v) * kn * weight_a)))
    sample = {"points": int(grid.shape[0]), "modes": len(f), "times": list(map(float, times)),
              "min_norm": float(np.min(np.linalg.norm(grid, axis=1))),
              "max_norm": float(np.max(np.linalg.norm(grid, axis=1)))}
    return SeminormEstimate(float(m), float(delta), int(n1), int(n2), best, sample)


def sphere_directions(d: int, n: int, seed: int = 12345) -> np.ndarray:
    """Deterministic, roughly uniform unit vectors in R^d."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        th = (np.arange(n) + 0.5) * TWO_PI / n
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    if d == 3:
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        r = np.sqrt(1 - z * z)
        th = math.pi * (1 + 5 ** 0.5) * i
        return np.stack([r * np.cos(th), r * np.sin(th), z], axis=1)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def angle_samples(d: int, n_per_dim: int, seed: int = 54321) -> np.ndarray:
    if d <= 2:
        g = np.arange(n_per_dim) * TWO_PI / n_per_dim
        return np.array(list(product(g, repeat=d)))
    rng = np.random.default_rng(seed)
    return rng.uniform(0, TWO_PI, size=(n_per_dim ** 2, d))


@dataclass(frozen=True)
class OrderProbe:
    """Sampling plan for sup_{|a| = r, phi, t} |f|."""

    n_dirs: int = 720
    n_angles: int = 24
    times: tuple = (0.0, 0.9, 2.3)

    def directions(self, d):
        return sphere_directions(d, self.n_dirs if d > 1 else 2)


DEFAULT_PROBE = OrderProbe()


def sup_on_spheres(f: SymbolFunction, radii, probe: OrderProbe = DEFAULT_PROBE) -> np.ndarray:
    radii = np.asarray(radii, dtype=float)
    dirs = probe.directions(f.d)
    phi = angle_samples(f.d, probe.n_angles)
    times = probe.times if f.time_dependent() else (0.0,)
    out = np.zeros(radii.size)
    if f.is_zero:
        return out
    for i, r in enumerate(radii):
        a = np.repeat(dirs * r, len(times), axis=0)
        t = np.tile(np.asarray(times, dtype=float), dirs.shape[0])
        out[i] = float(np.max(np.abs(f.grid_values(a, t, phi))))
    return out


def fit_order(f: SymbolFunction, radii, probe: OrderProbe = DEFAULT_PROBE,
              return_sups: bool = False):
    """Least-squares slope of log sup_{|a|=r} |f| against log r.

    Returns ``-inf`` when f vanishes on every sample.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size < 4 or radii.max() / radii.min() < 8:
        raise ValueError("need >= 4 radii spanning at least a factor 8")
    sups = sup_on_spheres(f, radii, probe)
    slope = slope_loglog(radii, sups)
    return (slope, sups) if return_sups else slope


def slope_loglog(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = y > 0
    if ok.sum() < 2:
        return -math.inf
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def dyadic_radii(r0: float, factor: float = 100.0, n: int | None = None) -> np.ndarray:
    """Powers of two from r0 up to factor * r0 (at least 4 points)."""
    n = n or max(4, int(math.floor(math.log2(factor))) + 1)
    return r0 * np.logspace(0, math.log2(factor), n, base=2.0)
