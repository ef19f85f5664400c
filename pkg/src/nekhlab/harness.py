"""Growth measurement, the doubling envelope, confinement runs, manifests.

Growth is measured as the least-squares slope of

    log( sup_{tau <= t} |a(tau)| / R_0 )   against   log <t / R_0>

over the final decades of a trajectory, with <x> = sqrt(1 + x^2).  The
doubling envelope uses R_k = R_0 2^k and tau_{k+1} = (R_0 2^k)^N / (2 K_d);
its interpolant obeys

    max{4 R_0, 4 (2K_d)^(1/N) t^(1/N)} = 4 R_0 max{1, (t / tau_1)^(1/N)}.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
import hashlib
import json
import math
import platform
import sys
import time

import numpy as np

from .dynamics import Trajectory, Integrator, IntegratorSettings, HamiltonianSystem
from .symbols import PhasePoint, SymbolFunction


class InsufficientData(ValueError):
    pass


def japanese(x):
    return np.sqrt(1.0 + np.asarray(x, dtype=float) ** 2)


# ------------------------------------------------------------------ growth

@dataclass
class GrowthReport:
    R0: float
    eps_hat: float
    fit_window: tuple
    n_fit: int
    constant: float
    passes: bool
    passes_4: bool
    worst_ratio: float
    N: float | None = None
    K_d: float | None = None
    structural_eps: float | None = None
    sup_final: float | None = None
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def growth_fit(traj: Trajectory, R0: float | None = None, decades: float = 2.0,
               constant: float = 16.0, min_samples: int = 1000, min_decades: float = 3.0,
               N: float | None = None, K_d: float | None = None) -> GrowthReport:
    """Fit eps_hat and check sup|a| <= constant R0 <t/R0>^eps_hat pointwise."""
    t = np.asarray(traj.times, dtype=float)
    sup = np.asarray(traj.sup, dtype=float)
    if t.size < min_samples:
        raise InsufficientData(f"need >= {min_samples} samples, got {t.size}")
    pos = t[t > 0]
    if pos.size == 0 or math.log10(pos.max() / pos.min()) < min_decades - 1e-9:
        raise InsufficientData(f"samples must span >= {min_decades} decades of t")
    if np.any(np.diff(sup) < -1e-12 * np.abs(sup[1:])):
        raise ValueError("running sup is not nondecreasing")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    R0 = float(np.linalg.norm(traj.actions[0])) if R0 is None else float(R0)
    tmax = float(t.max())
    lo = tmax / 10.0 ** decades
    sel = t >= lo
    x = np.log(japanese(t[sel] / R0))
    y = np.log(sup[sel] / R0)
    if np.ptp(x) == 0:
        raise InsufficientData("fit window has no spread in log <t/R0>")
    if np.ptp(y) == 0:
        eps = 0.0
    else:
        eps = float(np.polyfit(x, y, 1)[0])
    eps_use = max(eps, 0.0)
    env = R0 * japanese(t / R0) ** eps_use
    ratio = float(np.max(sup / env))
    rep = GrowthReport(R0, eps, (lo, tmax), int(sel.sum()), constant, ratio <= constant,
                       ratio <= 4.0, ratio, N, K_d, None if N is None else 1.0 / N,
                       float(sup[-1]))
    return rep


def symmetric_sup(forward: Trajectory, backward: Trajectory) -> Trajectory:
    """Combine runs forward and backward from the same datum into one record
    indexed by elapsed time |tau|, with sup over |tau| <= t."""
    tf = forward.times - forward.times[0]
    tb = backward.times - backward.times[0]
    j = np.searchsorted(tb, tf, side="right") - 1
    if np.any(j < 0):
        raise ValueError("backward run must start at elapsed time 0")
    if tb[-1] < tf[-1] * (1 - 1e-12):
        raise ValueError("backward run is shorter than the forward run")
    sup = np.maximum(forward.sup, backward.sup[j])
    return Trajectory(forward.times.copy(), forward.actions, forward.angles, sup, forward.H,
                      {"forward": forward.audit, "backward": backward.audit})


def integrate_symmetric(H, start: PhasePoint, T: float, settings: IntegratorSettings | None = None):
    """Forward and backward runs of length T; returns (forward, backward, combined)."""
    from .dynamics import reverse_system
    settings = settings or IntegratorSettings()
    fw = Integrator(H).run(start, start.time + T, settings)
    rev = PhasePoint(start.actions, start.angles, -start.time)
    bw = Integrator(reverse_system(H)).run(rev, rev.time + T, settings)
    return fw, bw, symmetric_sup(fw, bw)


# ---------------------------------------------------------------- envelope

@dataclass(frozen=True)
class Envelope:
    K_d: float
    N: float
    R0: float

    def __post_init__(self):
        if not self.K_d > 0:
            raise ValueError("K_d must be positive")
        if not self.N >= 1:
            raise ValueError("N must be >= 1")
        if not self.R0 > 0:
            raise ValueError("R0 must be positive")

    def R(self, k):
        return self.R0 * 2.0 ** np.asarray(k, dtype=float)

    def tau(self, k):
        """tau_0 = 0, tau_{k+1} = (R_0 2^k)^N / (2 K_d)."""
        k = np.asarray(k)
        out = (self.R0 * 2.0 ** (k - 1.0)) ** self.N / (2 * self.K_d)
        return np.where(k == 0, 0.0, out)

    @property
    def tau1(self) -> float:
        return self.R0 ** self.N / (2 * self.K_d)

    def interpolant(self, t):
        """4 (2K_d)^(1/N) t^(1/N)."""
        return 4 * (2 * self.K_d) ** (1 / self.N) * np.asarray(t, dtype=float) ** (1 / self.N)

    def __call__(self, t):
        return envelope_eval(self, t)

    def scaled(self, t):
        """4 R_0 max{1, (t / tau_1)^(1/N)}."""
        t = np.asarray(t, dtype=float)
        return 4 * self.R0 * np.maximum(1.0, (t / self.tau1) ** (1 / self.N))

    def smooth(self, t):
        """4 R_0 <t / tau_1>^(1/N), which dominates the max form."""
        return 4 * self.R0 * japanese(np.asarray(t, dtype=float) / self.tau1) ** (1 / self.N)

    def theta(self, t):
        """Doubling staircase R_0 prod_k 2 H(t - tau_k) (H = Heaviside, H(0) = 0)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty_like(t)
        for i, ti in enumerate(t):
            if ti <= 0:
                out[i] = self.R0
                continue
            # number of k >= 0 with tau_k < ti
            if ti <= self.tau1:
                n = 1
            else:
                kk = math.floor(math.log2((2 * self.K_d * ti) ** (1 / self.N) / self.R0)) + 1
                n = kk + 1
                while self.tau(n) < ti:
                    n += 1
                while n > 1 and self.tau(n - 1) >= ti:
                    n -= 1
            out[i] = self.R0 * 2.0 ** n
        return out

    def to_dict(self):
        return {"K_d": self.K_d, "N": self.N, "R0": self.R0, "tau1": self.tau1}


def envelope_eval(env: Envelope, t):
    """max{4 R_0, 4 (2K_d)^(1/N) t^(1/N)}."""
    t = np.asarray(t, dtype=float)
    return np.maximum(4 * env.R0, env.interpolant(np.maximum(t, 0.0)))


def envelope_from_doubles(taus, R0: float) -> Envelope:
    """Fit (K_d, N) from observed tau_1, tau_2, ... via
    log tau_{k+1} = N log R_k - log(2 K_d)."""
    taus = np.asarray(taus, dtype=float)
    if taus.size < 2:
        raise InsufficientData("need at least 2 observed doubling times")
    if np.any(taus <= 0):
        raise ValueError("doubling times must be positive")
    k = np.arange(taus.size)
    x = np.log(R0 * 2.0 ** k)
    y = np.log(taus)
    N, c = np.polyfit(x, y, 1)
    K = math.exp(-c) / 2
    return Envelope(K, float(N), R0)


def doubling_times(traj: Trajectory, R0: float | None = None) -> np.ndarray:
    """First sampled times at which sup|a| reaches 2 R_k = R_0 2^(k+1)."""
    R0 = float(np.linalg.norm(traj.actions[0])) if R0 is None else R0
    out = []
    k = 0
    for t, s in zip(traj.times, traj.sup):
        while s >= R0 * 2.0 ** (k + 1):
            out.append(t)
            k += 1
    return np.array(out)


# ------------------------------------------------------------ confinement

@dataclass
class ConfinementReport:
    label: dict
    R0: float
    horizon: float
    sup: float
    bound_ok: bool
    plane_ok: bool
    first_exit: float | None
    K_s_empirical: float | None
    drift_rate: float
    samples: int
    audit: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def drift_rate(traj: Trajectory) -> float:
    """max over consecutive samples of |a_{i+1} - a_i| / (t_{i+1} - t_i)."""
    da = np.linalg.norm(np.diff(traj.actions, axis=0), axis=1)
    dt = np.diff(traj.times)
    return float(np.max(da / dt)) if da.size else 0.0


def in_extended_plane(a, a0, label, params) -> bool:
    """Approximate membership of a in the extended fast-drift plane of a0."""
    from .geometry import delta_s
    a = np.asarray(a, dtype=float)
    a0 = np.asarray(a0, dtype=float)
    s = label.s
    n0 = float(np.linalg.norm(a0))
    rad = n0 ** delta_s(s + 1, params) if s + 1 <= params.d else n0 ** params.delta
    if s == 0:
        return float(np.linalg.norm(a - a0)) <= rad
    P = label.M.projector
    perp = (np.eye(a.size) - P) @ (a - a0)
    along = P @ a
    return float(np.linalg.norm(perp)) <= rad and \
        float(np.linalg.norm(along)) <= params.plane_constant(s) * float(np.linalg.norm(a)) ** delta_s(s + 1, params) + rad


def nekhoroshev_confinement(system, start: PhasePoint, params, horizon: float,
                            N: float, nf=None, settings: IntegratorSettings | None = None) -> ConfinementReport:
    """Integrate (in normal-form coordinates when ``nf`` is given) up to ``horizon``.

    Checks sup|a| <= 2|a_0| and membership in the extended plane of the
    initial label; K_s is calibrated as horizon / |a_0|^(N + delta) at the
    first exit, if any.
    """
    from .geometry import classify
    from .dynamics import transformed_initial_datum
    if nf is not None:
        start = transformed_initial_datum(nf, start)
        from .symbols import h0 as _h0
        H = (nf.h0 if nf.h0 is not None else _h0(start.d)) + nf.Z + nf.R + nf.R_tilde
    else:
        H = system.H if isinstance(system, HamiltonianSystem) else system
    label = classify(start.actions, params)
    settings = settings or IntegratorSettings(n_samples=4000, spacing="uniform")
    traj = Integrator(H).run(start, start.time + horizon, settings)
    a0 = start.actions
    R0 = float(np.linalg.norm(a0))
    inside = np.array([in_extended_plane(a, a0, label, params) for a in traj.actions])
    first_exit = None
    if not inside.all():
        first_exit = float(traj.times[int(np.argmin(inside))] - start.time)
    K_s = None if first_exit is None else first_exit / R0 ** (N + params.delta)
    sup = float(traj.sup.max())
    return ConfinementReport(label.to_dict(), R0, horizon, sup, sup <= 2 * R0, bool(inside.all()),
                             first_exit, K_s, drift_rate(traj), len(traj), traj.audit)


def drift_ratio(N_probe: float, r: float, d: int = 2, t_span: float = 50.0, dt: float = 0.005,
                n_samples: int = 20000) -> dict:
    """Measure max |da/dt| under P = <a>^-N cos(phi_1) at radii r and 2r."""
    from . import expr as ex
    from .symbols import cos_mode
    k = tuple(1 if j == 0 else 0 for j in range(d))
    P = cos_mode(d, k, ex.power(ex.jac(), -float(N_probe)))
    H = HamiltonianSystem(P).H
    I = Integrator(H)
    rates = []
    for rad in (r, 2 * r):
        direction = np.ones(d) / math.sqrt(d)
        st = PhasePoint(direction * rad, np.full(d, 0.3), 0.0)
        traj = I.run(st, t_span, IntegratorSettings(dt=dt, n_samples=n_samples, spacing="uniform",
                                                     n_audits=1))
        rates.append(drift_rate(traj))
    return {"N": N_probe, "r": r, "rate_r": rates[0], "rate_2r": rates[1],
            "ratio": rates[1] / rates[0], "expected": 2.0 ** (-N_probe)}


# --------------------------------------------------------------- manifest

def sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_manifest(command: str, params: dict, seed, inputs=(), outputs=(), argv=None) -> dict:
    """Everything needed to rerun: params, seed, versions, input/output hashes."""
    import numba
    import scipy
    from . import __version__
    canon = json.dumps(params, sort_keys=True, default=str)
    return {
        "command": command,
        "argv": list(argv) if argv is not None else None,
        "params": params,
        "params_sha256": sha256_bytes(canon.encode()),
        "seed": seed,
        "versions": {"nekhlab": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__},
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
    }


def manifest_hash(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k not in ("outputs",)}
    return sha256_bytes(json.dumps(body, sort_keys=True, default=str).encode())


# ----------------------------------------------------------- verify suite

def _timed(fn):
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as err:  # report, don't crash the suite
        ok, detail = False, f"{type(err).__name__}: {err}"
    return {"pass": bool(ok), "detail": detail, "seconds": round(time.perf_counter() - t0, 3)}


def verify_suite(seed: int = 0, cutoff=None, zone=None, quick: bool = True) -> dict:
    """Compact property suite: splitting, cohomology, symplecticity, zones,
    Giorgilli, classification uniqueness."""
    from . import expr as ex
    from .cutoffs import CutoffParams
    from .cohomology import split, cohomological_residual
    from .geometry import ZoneParams, max_rank_batch, classify_many
    from .lattice import giorgilli_bound
    from .lie import GeneratorFlow, generator_defect, sphere_points
    from .symbols import trig_time, cos_mode
    from .cohomology import solve_cohomological
    from .dynamics import em_example
    rng = np.random.default_rng(seed)
    cut = cutoff or CutoffParams()
    zp = zone or ZoneParams()
    n = 2000 if quick else 10000
    d = 2
    P = em_example(d).P + cos_mode(d, (1, 1), ex.power(ex.jac(), -1.0)) + \
        trig_time(d, (0, 2), ex.action(2), 0.7)
    r_sat = cut.saturation_radius(2 * math.sqrt(2))

    def pts(lo, hi, m):
        r = np.exp(rng.uniform(math.log(lo), math.log(hi), m))
        th = rng.uniform(0, 2 * math.pi, m)
        A = np.c_[r * np.cos(th), r * np.sin(th)]
        return A, rng.uniform(0, 2 * math.pi, (m, 2))

    def check_split():
        A, Ph = pts(1.0, 1e6, n)
        s = split(P, cut)
        err = np.abs(P.values(A, Ph, 0.4) - s.total().values(A, Ph, 0.4)).max()
        return err <= 1e-12 * max(1.0, np.abs(P.values(A, Ph, 0.4)).max()), f"max error {err:.3g}"

    def check_cohom():
        A, Ph = pts(r_sat, 100 * r_sat, n)
        res = cohomological_residual(P, cut, A, Ph, 0.3).max()
        return res <= 1e-10, f"max relative residual {res:.3g}"

    def check_symp():
        g = solve_cohomological(P, cut)
        A, Ph = sphere_points(2, 60.0, 8, 3)
        dfc = generator_defect(g, A, Ph, t=0.2, tol=1e-10)
        return dfc <= 1e-8, f"defect {dfc:.3g}"

    def check_zones():
        A, _ = pts(zp.R, 100 * zp.R, 20 * n)
        mr = max_rank_batch(A, zp)
        full = int((mr >= zp.d).sum())
        return full == 0, f"{full} full-rank members in {A.shape[0]} points"

    def check_giorgilli():
        viol = 0
        for _ in range(n):
            dd = int(rng.integers(1, 5))
            s = int(rng.integers(1, dd + 1))
            U = rng.integers(-5, 6, (s, dd)).astype(float)
            if np.linalg.matrix_rank(U) < s:
                continue
            w = rng.standard_normal(s) @ U
            alpha = float(np.max(np.abs(U @ w)))
            N = float(np.max(np.linalg.norm(U, axis=1)))
            viol += not giorgilli_bound(U, w, alpha, N).holds
        return viol == 0, f"{viol} violations"

    def check_unique():
        A, _ = pts(zp.R / 4, 100 * zp.R, n)
        s, _ = classify_many(A, zp)
        bad = int(((s == -2) | (s == -3)).sum())
        return bad == 0, f"{bad} points without a unique label, {int((s == -1).sum())} in boundary band"

    checks = {"splitting": check_split, "cohomology": check_cohom, "symplecticity": check_symp,
              "zones": check_zones, "giorgilli": check_giorgilli, "uniqueness": check_unique}
    results = {k: _timed(fn) for k, fn in checks.items()}
    return {"seed": seed, "all_pass": all(r["pass"] for r in results.values()), "checks": results}
