"""Resonant zones, blocks, extended blocks and the unique zone label.

Every set is evaluated as a pointwise membership predicate.  Notation:

* level-j resonance of a with k:  |a.k| <= C_j |k| |a|^delta_j  and
  |k| <= D_j |a|^mu,  with delta_j = delta + j(j-1) mu / 2;
* a is in the rank-s zone of a module M (s >= 1) if |a| >= R and M holds s
  independent vectors k_1..k_s, k_j level-j resonant with a;
* the nonresonant zone is |a| < R or no level-1 resonance at all;
* blocks remove every higher-rank zone; extended blocks sweep blocks along
  M_R, intersect with the zone, and remove lower-rank extended blocks.

Because removing all higher blocks equals removing all higher zones, a
point lies in the block of (s, M) iff s is its maximal resonance rank and
it lies in the zone of M.  The extended blocks containing a point are the
extended blocks of the smallest rank at which it has any; :func:`classify`
exploits that and searches ranks bottom-up.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product
import math

import numpy as np

from .lattice import (LatticeModule, saturate, trivial_module, lattice_vectors_upto,
                      independent, project, gram_volume, EnumerationCapExceeded)


class GeometryError(RuntimeError):
    pass


class Ambiguous(GeometryError):
    def __init__(self, a, labels):
        super().__init__(f"{len(labels)} zone labels at a={list(np.round(a, 6))}: "
                         + ", ".join(f"(s={l.s}, {l.M.label()})" for l in labels))
        self.a = np.asarray(a)
        self.labels = labels


class Unclassified(GeometryError):
    def __init__(self, a, diagnostics):
        super().__init__(f"no zone label at a={list(np.round(a, 6))}: {diagnostics}")
        self.a = np.asarray(a)
        self.diagnostics = diagnostics


class BoundaryBand(GeometryError):
    """Raised when a point sits within the tolerance band of a zone boundary."""

    def __init__(self, a, what):
        super().__init__(f"a={list(np.round(a, 6))} lies in the boundary band ({what})")
        self.a = np.asarray(a)
        self.what = what


class SearchBudgetExhausted(GeometryError):
    pass


# ---------------------------------------------------------------- params

def calibrate_R(d: int, delta: float, mu: float, C_d: float, D_d: float) -> float:
    """Smallest power of 2 with d D_d^d C_d R^(delta_d + d mu - 1) < 1."""
    dd = delta + d * (d - 1) / 2 * mu
    expo = dd + d * mu - 1.0
    if expo >= 0:
        raise ValueError("delta_d + d mu must be < 1 to calibrate R")
    const = d * D_d ** d * C_d
    # const * 2^(n expo) < 1  <=>  n > log2(const) / -expo
    n = max(0, math.floor(math.log2(const) / -expo) + 1)
    while const * 2.0 ** (n * expo) >= 1:
        n += 1
    while n > 0 and const * 2.0 ** ((n - 1) * expo) < 1:
        n -= 1
    return 2.0 ** n


@dataclass(frozen=True)
class ZoneParams:
    """Geometry parameter pack.

    ``C`` and ``D`` default to 4^(j-1) and 2^(j-1); ``R`` defaults to the
    calibrated value (see :func:`calibrate_R`).  ``eps_bnd`` is the relative
    width of the boundary band used by :func:`classify`.
    """

    d: int = 2
    delta: float = 0.75
    mu: float = 0.02
    C: tuple = None
    D: tuple = None
    R: float = None
    h_plane_factor: float = 0.125
    eps_bnd: float = 1e-6
    max_plane_points: int = 20000

    def __post_init__(self):
        d = self.d
        if d < 1:
            raise ValueError("d must be >= 1")
        if not (2.0 / 3.0 < self.delta < 1.0):
            raise ValueError(f"δ must exceed 2/3 and be < 1 (delta={self.delta})")
        if self.mu <= 0:
            raise ValueError(f"mu must be positive (got {self.mu})")
        if d * (d + 1) / 2 * self.mu >= 1 - self.delta:
            raise ValueError(f"d(d+1)/2*mu = {d * (d + 1) / 2 * self.mu:.4g} must be < 1-delta = {1 - self.delta:.4g}")
        C = tuple(float(x) for x in (self.C or [4.0 ** j for j in range(d)]))
        D = tuple(float(x) for x in (self.D or [2.0 ** j for j in range(d)]))
        for name, seq in (("C", C), ("D", D)):
            if len(seq) != d:
                raise ValueError(f"{name} needs {d} entries")
            if seq[0] != 1.0:
                raise ValueError(f"{name}_1 must equal 1")
            if any(b <= a for a, b in zip(seq, seq[1:])):
                raise ValueError(f"{name}_j must be strictly increasing")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        if self.R is None:
            object.__setattr__(self, "R", calibrate_R(d, self.delta, self.mu, C[-1], D[-1]))
        elif self.R <= 0:
            raise ValueError("R must be positive")
        if self.eps_bnd < 0:
            raise ValueError("eps_bnd must be >= 0")

    def Cj(self, j: int) -> float:
        return self.C[j - 1]

    def Dj(self, j: int) -> float:
        return self.D[j - 1]

    def delta_s(self, s: int) -> float:
        return delta_s(s, self)

    @property
    def R_calibrated(self) -> bool:
        return self.full_rank_constant() * self.R ** self.full_rank_exponent() < 1

    def full_rank_exponent(self) -> float:
        return self.delta_s(self.d) + self.d * self.mu - 1

    def full_rank_constant(self) -> float:
        return self.d * self.D[-1] ** self.d * self.C[-1]

    def require_calibrated(self) -> "ZoneParams":
        if not self.R_calibrated:
            raise ValueError(f"R={self.R:g} violates d D_d^d C_d R^(delta_d + d mu - 1) < 1")
        return self

    def plane_constant(self, s: int) -> float:
        """Giorgilli constant bounding |Pi_M a| <= c |a|^delta_{s+1} on a rank-s zone."""
        if s == 0:
            return 0.0
        return s * self.C[s - 1] * self.D[s - 1] ** s

    def with_(self, **kw) -> "ZoneParams":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {"d": self.d, "delta": self.delta, "mu": self.mu, "C": list(self.C),
                "D": list(self.D), "R": self.R, "h_plane_factor": self.h_plane_factor,
                "eps_bnd": self.eps_bnd, "max_plane_points": self.max_plane_points}


def delta_s(s: int, params) -> float:
    d = getattr(params, "d", None)
    if s < 0 or (d is not None and s > d):
        raise ValueError(f"s={s} outside 0..{d}")
    return params.delta + s * (s - 1) / 2 * params.mu


# ---------------------------------------------------------------- labels

@dataclass(frozen=True)
class ZoneLabel:
    s: int
    M: LatticeModule
    witnesses: tuple = ()

    def key(self):
        return (self.s, self.M.basis)

    def to_dict(self) -> dict:
        return {"s": self.s, "module": [list(b) for b in self.M.basis],
                "witnesses": [list(k) for k in self.witnesses]}


# ------------------------------------------------------ resonance tests

def _norm(a) -> float:
    return float(math.sqrt(float(np.dot(a, a))))


def level_resonant(a, k, j: int, params: ZoneParams) -> bool:
    a = np.asarray(a, dtype=float)
    k = np.asarray(k, dtype=float)
    kn = _norm(k)
    if kn == 0:
        raise ValueError("k = 0 is not allowed")
    na = _norm(a)
    if kn > params.Dj(j) * na ** params.mu:
        return False
    return abs(float(a @ k)) <= params.Cj(j) * kn * na ** delta_s(j, params)


def _level_sets(a, s_max, params):
    """Candidate lists K_j(a), j = 1..s_max (level-j resonant vectors)."""
    na = _norm(a)
    if na == 0:
        return [[] for _ in range(s_max)]
    ball = lattice_vectors_upto(a.size, params.Dj(s_max) * na ** params.mu)
    if not ball:
        return [[] for _ in range(s_max)]
    K = np.array(ball, dtype=float)
    kn = np.linalg.norm(K, axis=1)
    dots = np.abs(K @ a)
    out = []
    for j in range(1, s_max + 1):
        ok = (kn <= params.Dj(j) * na ** params.mu) & (dots <= params.Cj(j) * kn * na ** delta_s(j, params))
        out.append([ball[i] for i in np.nonzero(ok)[0]])
    return out


def _tuples(levels, s, within: LatticeModule | None = None, first_only=False):
    """Backtracking over independent k_1..k_s with k_j in levels[j-1]."""
    res = []

    def rec(chosen):
        j = len(chosen)
        if j == s:
            res.append(tuple(chosen))
            return first_only
        for k in levels[j]:
            if within is not None and not within.contains(k):
                continue
            if chosen and not independent(list(chosen) + [k]):
                continue
            if rec(chosen + [k]):
                return True
        return False

    rec([])
    return res


def zone_witnesses(a, M: LatticeModule, params: ZoneParams):
    """Witnesses k_1..k_s in M certifying a in the rank-s zone of M, else None."""
    a = np.asarray(a, dtype=float)
    s = M.s
    if s == 0:
        return () if in_nonresonant_zone(a, params) else None
    if _norm(a) < params.R:
        return None
    levels = _level_sets(a, s, params)
    found = _tuples(levels, s, within=M, first_only=True)
    return found[0] if found else None


def in_nonresonant_zone(a, params: ZoneParams) -> bool:
    a = np.asarray(a, dtype=float)
    if _norm(a) < params.R:
        return True
    return not _level_sets(a, 1, params)[0]


def in_zone(a, M: LatticeModule, s: int | None = None, params: ZoneParams | None = None):
    """(membership, witnesses) for the rank-s zone of M."""
    if params is None:
        raise TypeError("params required")
    if s is not None and s != M.s:
        raise ValueError(f"module rank {M.s} differs from s={s}")
    w = zone_witnesses(a, M, params)
    return (w is not None), (w or ())


def resonant_modules(a, s: int, params: ZoneParams) -> dict:
    """All rank-s modules whose zone contains a, with one witness tuple each."""
    a = np.asarray(a, dtype=float)
    if s == 0:
        return {trivial_module(a.size): ()} if in_nonresonant_zone(a, params) else {}
    if _norm(a) < params.R:
        return {}
    levels = _level_sets(a, s, params)
    if any(len(l) == 0 for l in levels):
        return {}
    out = {}
    for tup in _tuples(levels, s):
        M = saturate(list(tup))
        out.setdefault(M, tup)
    return out


def max_rank(a, params: ZoneParams) -> int:
    """Largest s such that a lies in some rank-s zone (0 if nonresonant)."""
    a = np.asarray(a, dtype=float)
    if _norm(a) < params.R:
        return 0
    d = a.size
    levels = _level_sets(a, d, params)
    best = 0
    for s in range(1, d + 1):
        if any(len(l) == 0 for l in levels[:s]):
            break
        if _tuples(levels[:s], s, first_only=True):
            best = s
        else:
            break
    return best


def max_rank_batch(A, params: ZoneParams, upto: int | None = None, chunk: int = 4096) -> np.ndarray:
    """Vectorised :func:`max_rank` for many points (rows of A), in chunks of rows."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n, d = A.shape
    upto = d if upto is None else upto
    if n > chunk:
        return np.concatenate([_max_rank_chunk(A[i:i + chunk], params, upto)
                               for i in range(0, n, chunk)])
    return _max_rank_chunk(A, params, upto)


def _max_rank_chunk(A, params: ZoneParams, upto: int) -> np.ndarray:
    n, d = A.shape
    out = np.zeros(n, dtype=np.int64)
    na = np.linalg.norm(A, axis=1)
    big = na >= params.R
    if not big.any():
        return out
    ball = lattice_vectors_upto(d, params.Dj(upto) * float(na.max()) ** params.mu)
    if not ball:
        return out
    K = np.array(ball, dtype=float)
    kn = np.linalg.norm(K, axis=1)
    dots = np.abs(A @ K.T)
    counts = []
    for j in range(1, upto + 1):
        ok = (kn[None, :] <= params.Dj(j) * na[:, None] ** params.mu) & \
             (dots <= params.Cj(j) * kn[None, :] * na[:, None] ** delta_s(j, params))
        counts.append(ok.sum(axis=1))
    # rank >= 1 iff some level-1 vector; rank >= s needs >= s level-s vectors
    r1 = big & (counts[0] > 0)
    out[r1] = 1
    cand = r1 & (counts[upto - 1] >= 2) if upto >= 2 else np.zeros(n, bool)
    for i in np.nonzero(cand)[0]:
        out[i] = max_rank(A[i], params) if upto == d else min(max_rank(A[i], params), upto)
    return out


# ----------------------------------------------------------------- blocks

def in_block(a, M: LatticeModule, params: ZoneParams) -> bool:
    a = np.asarray(a, dtype=float)
    if zone_witnesses(a, M, params) is None:
        return False
    return max_rank(a, params) == M.s


def _orthonormal_basis(M: LatticeModule) -> np.ndarray:
    q, _ = np.linalg.qr(M.basis_array().T)
    return q.T  # s x d


@dataclass
class PlaneSearch:
    found: bool
    point: np.ndarray | None
    visited: int
    radius: float
    step: float


def _plane_grid(a, M, params, radius, step, budget):
    """Grid points of a + M_R within ``radius``, nearest first."""
    s = M.s
    E = _orthonormal_basis(M)
    n = int(math.floor(radius / step))
    count = (2 * n + 1) ** s
    if count > budget:
        raise SearchBudgetExhausted(
            f"plane grid needs {count} points (> budget {budget}); radius={radius:.3g}, step={step:.3g}")
    idx = np.array(list(product(range(-n, n + 1), repeat=s)), dtype=float)
    idx = idx[np.linalg.norm(idx, axis=1) * step <= radius + 1e-12]
    order = np.lexsort((*idx.T[::-1], np.linalg.norm(idx, axis=1)))
    idx = idx[order]
    return a[None, :] + (idx * step) @ E


def search_block_on_plane(a, M: LatticeModule, params: ZoneParams) -> PlaneSearch:
    """Look for a block point of M on the plane a + M_R."""
    a = np.asarray(a, dtype=float)
    s = M.s
    na = _norm(a)
    if in_block(a, M, params):
        return PlaneSearch(True, a.copy(), 1, 0.0, 0.0)
    if s == 0:
        return PlaneSearch(False, None, 1, 0.0, 0.0)
    radius = 2 * params.plane_constant(s) * na ** delta_s(s + 1, params) if s < params.d else 0.0
    step = params.h_plane_factor * na ** params.delta
    pts = _plane_grid(a, M, params, radius, step, params.max_plane_points)
    for i, b in enumerate(pts):
        if in_block(b, M, params):
            return PlaneSearch(True, b, i + 1, radius, step)
    return PlaneSearch(False, None, len(pts), radius, step)


def in_extended_pre(a, M: LatticeModule, params: ZoneParams) -> bool:
    """Membership in (B_M + M_R) intersected with the zone of M."""
    if zone_witnesses(a, M, params) is None:
        return False
    return search_block_on_plane(a, M, params).found


def _extended_labels(a, params: ZoneParams):
    """Labels at the lowest rank with a nonempty set of pre-extended blocks."""
    a = np.asarray(a, dtype=float)
    for s in range(0, params.d + 1):
        mods = resonant_modules(a, s, params)
        hits = []
        for M, w in sorted(mods.items(), key=lambda kv: kv[0].basis):
            if s == 0 or search_block_on_plane(a, M, params).found:
                hits.append(ZoneLabel(s, M, tuple(w)))
        if hits:
            return hits
    return []


def in_extended_block(a, M: LatticeModule, params: ZoneParams) -> bool:
    labels = _extended_labels(a, params)
    return any(l.M == M for l in labels)


# --------------------------------------------------------------- classify

def boundary_reason(a, params: ZoneParams, eps: float | None = None):
    """Description of the nearest violated band condition, or None."""
    eps = params.eps_bnd if eps is None else eps
    if eps <= 0:
        return None
    a = np.asarray(a, dtype=float)
    na = _norm(a)
    if abs(na - params.R) <= eps * max(na, params.R):
        return "|a| = R"
    if na < params.R * (1 - eps):
        return None
    d = a.size
    bound = params.Dj(d) * na ** params.mu * (1 + 2 * params.mu * eps)
    ball = lattice_vectors_upto(d, bound)
    if not ball:
        return None
    K = np.array(ball, dtype=float)
    kn = np.linalg.norm(K, axis=1)
    proj = np.abs(K @ a) / kn
    for j in range(1, d + 1):
        rhs = params.Cj(j) * na ** delta_s(j, params)
        lim = params.Dj(j) * na ** params.mu
        near_uv = np.abs(kn - lim) <= params.mu * eps * lim
        if near_uv.any():
            return f"|k| = D_{j} |a|^mu for k={ball[int(np.argmax(near_uv))]}"
        near = (np.abs(proj - rhs) <= eps * na) & (kn <= lim * (1 + params.mu * eps))
        if near.any():
            return f"|a.k| = C_{j} |k| |a|^delta_{j} for k={ball[int(np.argmax(near))]}"
    return None


def classify(a, params: ZoneParams) -> ZoneLabel:
    """The unique (s, M) with a in the extended block of M."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size != params.d:
        raise ValueError(f"expected an action vector of length {params.d}")
    if _norm(a) < params.R and abs(_norm(a) - params.R) > params.eps_bnd * params.R:
        return ZoneLabel(0, trivial_module(params.d), ())
    why = boundary_reason(a, params)
    if why is not None:
        raise BoundaryBand(a, why)
    labels = _extended_labels(a, params)
    if not labels:
        raise Unclassified(a, {"max_rank": max_rank(a, params), "norm": _norm(a)})
    if len(labels) > 1:
        raise Ambiguous(a, labels)
    return labels[0]


def classify_many(A, params: ZoneParams):
    """Classify rows of A; returns (s array, labels list) with -1 for the
    boundary band, -2 for unclassified and -3 for ambiguous points."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    s = np.empty(A.shape[0], dtype=np.int64)
    labels = []
    mr = max_rank_batch(A, params)
    for i, a in enumerate(A):
        if mr[i] == 0 and boundary_reason(a, params) is None:
            lab = ZoneLabel(0, trivial_module(params.d), ())
            s[i] = 0
            labels.append(lab)
            continue
        try:
            lab = classify(a, params)
            s[i] = lab.s
        except BoundaryBand:
            lab, s[i] = None, -1
        except Unclassified:
            lab, s[i] = None, -2
        except Ambiguous as err:
            lab, s[i] = err.labels, -3
        labels.append(lab)
    return s, labels


# ------------------------------------------------------- geometric audits

@dataclass
class DiameterCheck:
    measured: float
    bound: float
    holds: bool
    samples: int


def fast_drift_plane_points(a, M: LatticeModule, params: ZoneParams, step=None, radius=None):
    """Grid samples of (a + M_R) intersected with the rank-s zone of M."""
    a = np.asarray(a, dtype=float)
    s = M.s
    if s == 0:
        return a[None, :].copy()
    na = _norm(a)
    c = params.plane_constant(s)
    radius = radius if radius is not None else 2.5 * c * (2 * na) ** delta_s(s + 1, params)
    step = step if step is not None else params.h_plane_factor * na ** params.delta / 4
    pts = _plane_grid(a, M, params, radius, step, params.max_plane_points * 10)
    keep = [b for b in pts if zone_witnesses(b, M, params) is not None]
    return np.array(keep).reshape(-1, a.size)


def plane_diameter_check(a, M: LatticeModule, params: ZoneParams, step=None) -> DiameterCheck:
    """Sampled diameter of the fast-drift plane through a against
    2 s C_s D_s^s max|b|^delta_{s+1}."""
    a = np.asarray(a, dtype=float)
    if M.s == 0:
        return DiameterCheck(0.0, 0.0, True, 1)
    pts = fast_drift_plane_points(a, M, params, step=step)
    if len(pts) == 0:
        return DiameterCheck(0.0, 0.0, True, 0)
    proj = pts @ _orthonormal_basis(M).T
    diam = 0.0
    for i in range(len(proj)):
        diam = max(diam, float(np.max(np.linalg.norm(proj - proj[i], axis=1))))
    nb = float(np.max(np.linalg.norm(pts, axis=1)))
    bound = 2 * params.plane_constant(M.s) * nb ** delta_s(M.s + 1, params)
    return DiameterCheck(diam, bound, diam <= bound, len(pts))


def separation_threshold(K: float, s: int, params: ZoneParams) -> tuple:
    """(C~_{s+1}, D~_{s+1}): minimal constants from the separation argument.

    If a' resonates with k outside M and |a - a'| <= K |a|^delta_{s+1}, then
    a itself resonates with k at level s+1 with these constants.
    """
    rho = K * params.R ** (delta_s(s + 1, params) - 1)  # relative displacement bound
    c_lo = params.Cj(s) * (1 + rho) ** delta_s(s, params)
    Ct = c_lo + K
    Dt = params.Dj(s) * (1 + rho) ** params.mu
    return Ct, Dt


@dataclass
class SeparationReport:
    label: ZoneLabel | None
    trials: int
    violations: int
    examples: list = field(default_factory=list)

    @property
    def rate(self):
        return self.violations / self.trials if self.trials else 0.0


def _ball_samples(rng, center, radius, n):
    d = center.size
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.uniform(0, 1, n) ** (1.0 / d)
    return center[None, :] + v * r[:, None]


def forbidden_zone(a2, M: LatticeModule, s: int, params: ZoneParams):
    """A (s', M') with s' <= s, M' not inside M, whose zone contains a2."""
    for sp in range(1, s + 1):
        for Mp, w in resonant_modules(a2, sp, params).items():
            if not M.contains_module(Mp):
                return sp, Mp, w
    return None


def separation_check(a, params: ZoneParams, K: float, trials: int, rng=None) -> SeparationReport:
    rng = np.random.default_rng(rng)
    a = np.asarray(a, dtype=float)
    lab = classify(a, params)
    if lab.s == 0:
        return SeparationReport(lab, 0, 0)
    radius = K * _norm(a) ** delta_s(lab.s + 1, params)
    viol, ex = 0, []
    for a2 in _ball_samples(rng, a, radius, trials):
        hit = forbidden_zone(a2, lab.M, lab.s, params)
        if hit is not None:
            viol += 1
            if len(ex) < 5:
                ex.append((a2, hit))
    return SeparationReport(lab, trials, viol, ex)


def sample_rank1_points(params: ZoneParams, n: int, rng=None, rmin=None, rmax=None, inner=0.9):
    """Random points in rank-1 zones of d = 2: near a line a.k = 0."""
    rng = np.random.default_rng(rng)
    if params.d != 2:
        raise ValueError("rank-1 sampler is for d = 2")
    rmin = params.R if rmin is None else rmin
    rmax = 100 * params.R if rmax is None else rmax
    ks = lattice_vectors_upto(2, params.Dj(1) * rmin ** params.mu)
    if not ks:
        raise ValueError("no level-1 vectors at this radius")
    out = np.empty((n, 2))
    kidx = rng.integers(0, len(ks), n)
    r = np.exp(rng.uniform(math.log(rmin), math.log(rmax), n))
    sgn = rng.choice([-1.0, 1.0], n)
    u = rng.uniform(-inner, inner, n)
    for i in range(n):
        k = np.array(ks[kidx[i]], dtype=float)
        kh = k / np.linalg.norm(k)
        perp = np.array([-kh[1], kh[0]]) * sgn[i]
        base = perp * r[i]
        out[i] = base + kh * u[i] * r[i] ** params.delta
    return out


def separation_sweep(K: float, ratios, n_pairs: int, base: ZoneParams | None = None, seed=0) -> list:
    """Empirical violation rates for C_2 = ratio * C~_2 (d = 2, s = 1)."""
    base = base or ZoneParams(d=2)
    rows = []
    for ratio in ratios:
        Ct, Dt = separation_threshold(K, 1, base)
        C2 = max(ratio * Ct, 1.0 + 1e-9)
        D2 = max(base.Dj(2), Dt * 1.0001)
        p = ZoneParams(d=2, delta=base.delta, mu=base.mu, C=(1.0, C2), D=(1.0, D2),
                       eps_bnd=base.eps_bnd)
        rng = np.random.default_rng(seed)
        A = sample_rank1_points(p, n_pairs, rng)
        viol = tested = skipped = 0
        for a in A:
            try:
                lab = classify(a, p)
            except GeometryError:
                skipped += 1
                continue
            if lab.s != 1:
                skipped += 1
                continue
            a2 = _ball_samples(rng, a, K * _norm(a) ** delta_s(2, p), 1)[0]
            tested += 1
            if forbidden_zone(a2, lab.M, 1, p) is not None:
                viol += 1
        rows.append({"ratio": ratio, "C2": C2, "D2": D2, "C_tilde": Ct, "D_tilde": Dt,
                     "R": p.R, "pairs": tested, "skipped": skipped, "violations": viol,
                     "rate": viol / tested if tested else float("nan")})
    return rows


def comparability_constant(C: float, dt: float) -> float:
    """C' with |a-b| <= C|b|^dt  =>  |a-b| <= C'|a|^dt  (|a|, |b| >= 1)."""
    return C * max(2.0 ** dt, (2.0 * C) ** (dt / (1.0 - dt)))


def plane_exit_check(a, M: LatticeModule, params: ZoneParams, step=None) -> dict:
    """Rank-1, d = 2: the outside neighbours of the fast-drift segment's end
    points carry a rank-0 label."""
    a = np.asarray(a, dtype=float)
    if params.d != 2 or M.s != 1:
        raise ValueError("implemented for rank-1 planes in d = 2")
    pts = fast_drift_plane_points(a, M, params, step=step)
    if len(pts) == 0:
        return {"ends": 0, "ok": 0}
    kh = M.basis_array()[0] / np.linalg.norm(M.basis_array()[0])
    t = pts @ kh
    h = step or params.h_plane_factor * _norm(a) ** params.delta / 4
    ok = 0
    for tt, sign in ((t.max(), 1.0), (t.min(), -1.0)):
        b = pts[np.argmin(np.abs(t - tt))] + sign * 2 * h * kh
        try:
            lab = classify(b, params)
            ok += lab.s == 0
        except BoundaryBand:
            pass
    return {"ends": 2, "ok": ok}


# ----------------------------------------------------------------- rasters

#: fixed gray level per code (s = 0..3; -1 band, -2 unclassified, -3 ambiguous)
PGM_GRAY = {0: 255, 1: 192, 2: 128, 3: 96, -1: 0, -2: 32, -3: 64}


@dataclass
class ZoneMap:
    xs: np.ndarray
    ys: np.ndarray
    S: np.ndarray          # (ny, nx) codes
    modules: list          # (ny, nx) nested list of module-basis strings

    def rows(self):
        for iy, y in enumerate(self.ys):
            for ix, x in enumerate(self.xs):
                yield x, y, int(self.S[iy, ix]), self.modules[iy][ix]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("x,y,s,module\n")
            for x, y, s, m in self.rows():
                fh.write(f"{float(x)!r},{float(y)!r},{s},{m}\n")

    def to_pgm(self, path):
        """Binary PGM, top row = largest y."""
        ny, nx = self.S.shape
        img = np.vectorize(lambda c: PGM_GRAY.get(int(c), 32))(self.S[::-1]).astype(np.uint8)
        with open(path, "wb") as fh:
            fh.write(f"P5\n{nx} {ny}\n255\n".encode())
            fh.write(img.tobytes())


def _module_str(lab) -> str:
    if lab is None:
        return ""
    if isinstance(lab, list):
        return "|".join(_module_str(x) for x in lab)
    return ";".join(" ".join(str(int(v)) for v in b) for b in lab.M.basis) or "0"


def _map_row(args):
    y, xs, params = args
    A = np.c_[xs, np.full(xs.size, y)]
    s, labs = classify_many(A, params)
    return s, [_module_str(l) for l in labs]


def zone_map(box, nx: int, ny: int, params: ZoneParams, threads: int = 1) -> ZoneMap:
    """Label a regular grid of cell centres in box = (x0, x1, y0, y1); d = 2."""
    if params.d != 2:
        raise ValueError("zone maps are drawn for d = 2")
    x0, x1, y0, y1 = map(float, box)
    if not (x1 > x0 and y1 > y0) or nx < 1 or ny < 1:
        raise ValueError("box must have x1 > x0, y1 > y0 and a positive resolution")
    xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
    ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
    jobs = [(y, xs, params) for y in ys]
    if threads > 1 and ny > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(_map_row, jobs, chunksize=max(1, ny // (4 * threads))))
    else:
        out = [_map_row(j) for j in jobs]
    S = np.array([o[0] for o in out], dtype=np.int64)
    return ZoneMap(xs, ys, S, [o[1] for o in out])
