"""Long-horizon symplectic integration of H = |a|^2/2 + P(a, phi, t).

The scheme is the implicit midpoint rule with the time frozen at the step
midpoint,

    z_{n+1} = z_n + dt X_H((z_n + z_{n+1}) / 2, t_n + dt / 2),

solved by fixed-point iteration.  If the iteration fails to converge the
step is split into two half steps (recursively, a few times) before a
:class:`FixedPointDivergence` is raised.  The time loop runs inside numba
on a kernel compiled from the symbol DAGs (:mod:`nekhlab.codegen`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json
import math
import time as _time

import numpy as np
from numba import njit

from . import expr as ex
from .codegen import compile_hamiltonian
from .symbols import SymbolFunction, PhasePoint, h0 as make_h0, trig_time, constant, fit_order

TWO_PI = 2.0 * math.pi


class FixedPointDivergence(RuntimeError):
    pass


class RuntimeBudgetExceeded(RuntimeError):
    pass


# ----------------------------------------------------------- systems

@dataclass(frozen=True)
class HamiltonianSystem:
    """H = h0 + P with h0 = |a|^2 / 2."""

    P: SymbolFunction

    @property
    def d(self) -> int:
        return self.P.d

    @property
    def h0(self) -> SymbolFunction:
        return make_h0(self.d, self.P.kmax)

    @property
    def H(self) -> SymbolFunction:
        return self.h0 + self.P

    def perturbation_order(self, radii) -> float:
        return fit_order(self.P, radii)

    def to_dict(self) -> dict:
        return {"d": self.d, "P": self.P.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "HamiltonianSystem":
        if "field" in doc:
            return em_system(EMField.from_dict(doc["field"]))
        if "P" not in doc:
            raise ValueError("system document needs a 'P' symbol or an EM 'field'")
        return cls(SymbolFunction.from_dict(doc["P"]))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "HamiltonianSystem":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class EMField:
    """Vector potential A (d symbols) and scalar potential V, action-free."""

    A: tuple
    V: SymbolFunction

    def __post_init__(self):
        d = self.V.d
        if len(self.A) != d or any(Aj.d != d for Aj in self.A):
            raise ValueError("A needs d components of dimension d")
        for f in (*self.A, self.V):
            for _, e in f.items():
                if any(ex.depends_on(e, f"a{j}") for j in range(1, d + 1)) or \
                        ex.depends_on(e, "|a|"):
                    raise ValueError("potentials must not depend on the actions")

    @property
    def d(self):
        return self.V.d

    def to_dict(self):
        return {"A": [Aj.to_dict() for Aj in self.A], "V": self.V.to_dict()}

    @classmethod
    def from_dict(cls, doc):
        return cls(tuple(SymbolFunction.from_dict(x) for x in doc["A"]),
                   SymbolFunction.from_dict(doc["V"]))


def em_system(field: EMField, kmax: int = 32) -> HamiltonianSystem:
    """P = -a.A + |A|^2 / 2 + V."""
    d = field.d
    P = SymbolFunction(d, {}, kmax=kmax)
    for j, Aj in enumerate(field.A, start=1):
        if Aj.is_zero:
            continue
        P = P + Aj.times_expr(ex.neg(ex.action(j)))
        P = P + Aj.multiply(Aj, kmax=kmax).scale(0.5)
    P = P + field.V
    return HamiltonianSystem(P)


def em_example(d: int = 2, kmax: int = 32) -> HamiltonianSystem:
    """A = (cos(phi_1 - t), 0, ...), V = 0."""
    zero = SymbolFunction(d, {}, kmax=kmax)
    k = tuple(1 if j == 0 else 0 for j in range(d))
    A = (trig_time(d, k, 1.0, 1.0, kmax),) + tuple(zero for _ in range(d - 1))
    return em_system(EMField(A, zero), kmax)


# ---------------------------------------------------------- kernels

@njit
def _field(kernel, z, t, d, buf, out):
    kernel(z[:d], z[d:], t, buf)
    for j in range(d):
        out[j] = -buf[1 + d + j]     # a' = -dH/dphi
        out[d + j] = buf[1 + j]      # phi' = dH/da


@njit
def _mid_solve(kernel, z0, t, dt, d, tol, maxit, w, buf, F, mid):
    """Fixed point of w = z0 + dt X((z0 + w)/2, t + dt/2). Returns (iters, ok)."""
    n = 2 * d
    tm = t + 0.5 * dt
    _field(kernel, z0, tm, d, buf, F)
    for i in range(n):
        w[i] = z0[i] + dt * F[i]
    scale = 1.0
    for i in range(d):
        scale = max(scale, abs(z0[i]))
    prev = 1e300
    for it in range(1, maxit + 1):
        for i in range(n):
            mid[i] = 0.5 * (z0[i] + w[i])
        _field(kernel, mid, tm, d, buf, F)
        err = 0.0
        for i in range(n):
            nw = z0[i] + dt * F[i]
            e = abs(nw - w[i])
            if e > err:
                err = e
            w[i] = nw
        if not (err == err) or err > 1e6 * scale:
            return it, False
        if tol > 0.0:
            if err <= tol * scale:
                return it, True
        else:
            # tight mode: iterate to the round-off floor
            if err == 0.0 or (err >= prev and err < 1e-12 * scale):
                return it, True
        prev = err
    return maxit, tol <= 0.0 and prev < 1e-12 * scale


@njit
def _step(kernel, z, t, dt, d, tol, maxit, depth, w, buf, F, mid, stats):
    """One midpoint step in place, halving on failure. Returns ok flag."""
    it, ok = _mid_solve(kernel, z, t, dt, d, tol, maxit, w, buf, F, mid)
    stats[0] += it
    if it > stats[1]:
        stats[1] = it
    if ok:
        for i in range(2 * d):
            z[i] = w[i]
        return True
    if depth <= 0:
        return False
    stats[2] += 1
    if not _step(kernel, z, t, 0.5 * dt, d, tol, maxit, depth - 1, w, buf, F, mid, stats):
        return False
    return _step(kernel, z, t + 0.5 * dt, 0.5 * dt, d, tol, maxit, depth - 1, w, buf, F, mid, stats)


@njit
def _run(kernel, z, t0, dt, n_steps, d, tol, maxit, depth, rec_steps, rec_t, rec_z,
         rec_sup, rec_H, sup_in, stats, nvals):
    """Advance n_steps; record at (sorted, chunk-local) step indices."""
    w = np.empty(2 * d)
    F = np.empty(2 * d)
    mid = np.empty(2 * d)
    buf = np.empty(nvals)
    sup = sup_in
    r = 0
    nrec = rec_steps.shape[0]
    while r < nrec and rec_steps[r] == 0:
        kernel(z[:d], z[d:], t0, buf)
        rec_t[r] = t0
        rec_z[r, :] = z
        rec_sup[r] = sup
        rec_H[r] = buf[0]
        r += 1
    for s in range(1, n_steps + 1):
        t = t0 + (s - 1) * dt
        if not _step(kernel, z, t, dt, d, tol, maxit, depth, w, buf, F, mid, stats):
            return s - 1, sup, False
        for j in range(d, 2 * d):
            x = z[j]
            if x >= 6.283185307179586 or x < 0.0:
                z[j] = x - 6.283185307179586 * math.floor(x / 6.283185307179586)
        n2 = 0.0
        for j in range(d):
            n2 += z[j] * z[j]
        nn = math.sqrt(n2)
        if nn > sup:
            sup = nn
        while r < nrec and rec_steps[r] == s:
            tt = t0 + s * dt
            kernel(z[:d], z[d:], tt, buf)
            rec_t[r] = tt
            rec_z[r, :] = z
            rec_sup[r] = sup
            rec_H[r] = buf[0]
            r += 1
    return n_steps, sup, True


# ------------------------------------------------------------ integrate

@dataclass
class Trajectory:
    """Sampled trajectory with running sup of |a| and integrator audit."""

    times: np.ndarray
    actions: np.ndarray
    angles: np.ndarray
    sup: np.ndarray
    H: np.ndarray
    audit: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.actions.shape[1]

    def __len__(self):
        return self.times.size

    @property
    def a0(self):
        return self.actions[0]

    def point(self, i) -> PhasePoint:
        return PhasePoint(self.actions[i], self.angles[i], float(self.times[i]))

    def csv_header(self):
        d = self.d
        return ["t"] + [f"a{j + 1}" for j in range(d)] + [f"phi{j + 1}" for j in range(d)] + ["sup_norm_a", "H"]

    def to_csv(self, path):
        data = np.column_stack([self.times, self.actions, self.angles, self.sup, self.H])
        with open(path, "w") as fh:
            fh.write(",".join(self.csv_header()) + "\n")
            for row in data:
                fh.write(",".join(repr(float(x)) for x in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path) as fh:
            head = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        d = sum(1 for h in head if h.startswith("a") and h[1:].isdigit())
        return cls(data[:, 0], data[:, 1:1 + d], data[:, 1 + d:1 + 2 * d],
                   data[:, 1 + 2 * d], data[:, 2 + 2 * d])


def sample_steps(n_steps: int, n_samples: int, spacing: str = "log") -> np.ndarray:
    """Distinct step indices in [0, n_steps] at which to record."""
    if n_samples < 2 or n_steps <= n_samples:
        return np.arange(n_steps + 1, dtype=np.int64)
    if spacing == "uniform":
        idx = np.linspace(0, n_steps, n_samples)
    elif spacing == "log":
        idx = np.concatenate([[0], np.geomspace(1, n_steps, n_samples - 1)])
    else:
        raise ValueError("spacing must be 'log' or 'uniform'")
    return np.unique(np.round(idx).astype(np.int64))


@dataclass
class IntegratorSettings:
    dt: float = 0.01
    tol_fp: float = 1e-14
    maxit: int = 60
    max_halvings: int = 4
    n_samples: int = 2000
    spacing: str = "log"
    n_audits: int = 10
    audit_h: float = 1e-6
    audit_threshold: float = 1e-8
    max_seconds: float | None = None


class Integrator:
    """Compiled implicit-midpoint integrator for a Hamiltonian symbol."""

    def __init__(self, H: SymbolFunction):
        self.H = H
        self.d = H.d
        self.compiled = compile_hamiltonian(H)
        self.kernel = self.compiled.scalar

    def step(self, z, t, dt, tol=1e-14, maxit=60, depth=4):
        """One (possibly subdivided) step; returns the new state (no wrapping)."""
        z = np.array(z, dtype=float)
        d = self.d
        stats = np.zeros(3, dtype=np.int64)
        ok = _step(self.kernel, z, float(t), float(dt), d, float(tol), int(maxit), int(depth),
                   np.empty(2 * d), np.empty(2 * d + 1), np.empty(2 * d), np.empty(2 * d), stats)
        if not ok:
            raise FixedPointDivergence(f"fixed-point iteration diverged at t={t:g} (dt={dt:g}); reduce dt")
        return z

    def step_jacobian(self, z, t, dt, h=1e-6):
        z = np.asarray(z, dtype=float)
        n = z.size
        J = np.empty((n, n))
        for i in range(n):
            hi = h * max(1.0, abs(z[i]))
            zp = z.copy()
            zm = z.copy()
            zp[i] += hi
            zm[i] -= hi
            J[:, i] = (self.step(zp, t, dt, tol=0.0, maxit=200, depth=0)
                       - self.step(zm, t, dt, tol=0.0, maxit=200, depth=0)) / (2 * hi)
        return J

    def symplectic_defect(self, z, t, dt, h=1e-6) -> float:
        from .lie import omega
        J = self.step_jacobian(z, t, dt, h)
        W = omega(self.d)
        return float(np.max(np.abs(J.T @ W @ J - W)))

    def run(self, start: PhasePoint, t_end: float, settings: IntegratorSettings = IntegratorSettings(),
            record_steps=None) -> Trajectory:
        if settings.dt <= 0:
            raise ValueError("dt must be positive")
        if start.d != self.d:
            raise ValueError("dimension mismatch")
        d = self.d
        dt = settings.dt
        n_steps = int(round((t_end - start.time) / dt))
        if n_steps < 0:
            raise ValueError("t_end must not precede the start time (use a negative-time system instead)")
        rec = (np.asarray(record_steps, dtype=np.int64) if record_steps is not None
               else sample_steps(n_steps, settings.n_samples, settings.spacing))
        nrec = rec.size
        rec_t = np.empty(nrec)
        rec_z = np.empty((nrec, 2 * d))
        rec_sup = np.empty(nrec)
        rec_H = np.empty(nrec)
        z = np.concatenate([start.actions, start.angles]).astype(float)
        stats = np.zeros(3, dtype=np.int64)
        sup = float(np.linalg.norm(start.actions))
        n_chunks = max(1, settings.n_audits)
        bounds = np.linspace(0, n_steps, n_chunks + 1).round().astype(np.int64)
        audits = []
        t_wall = _time.perf_counter()
        done = 0
        r_off = 0
        for c in range(n_chunks):
            lo, hi = int(bounds[c]), int(bounds[c + 1])
            sel = (rec >= lo) & (rec <= hi) if c == 0 else (rec > lo) & (rec <= hi)
            idx = np.nonzero(sel)[0]
            local = rec[idx] - lo
            t0 = start.time + lo * dt
            sub_t = np.empty(idx.size)
            sub_z = np.empty((idx.size, 2 * d))
            sub_s = np.empty(idx.size)
            sub_H = np.empty(idx.size)
            nd, sup, ok = _run(self.kernel, z, t0, dt, hi - lo, d, settings.tol_fp, settings.maxit,
                               settings.max_halvings, local, sub_t, sub_z, sub_s, sub_H, sup, stats,
                               2 * d + 1)
            rec_t[idx], rec_z[idx], rec_sup[idx], rec_H[idx] = sub_t, sub_z, sub_s, sub_H
            done = lo + nd
            if not ok:
                raise FixedPointDivergence(
                    f"fixed-point iteration diverged at t={start.time + done * dt:g} (dt={dt:g}); reduce dt")
            if settings.n_audits > 0:
                audits.append(self.symplectic_defect(z, start.time + hi * dt, dt, settings.audit_h))
            if settings.max_seconds is not None and _time.perf_counter() - t_wall > settings.max_seconds:
                if hi < n_steps:
                    raise RuntimeBudgetExceeded(f"stopped after {hi} of {n_steps} steps")
        audit = {
            "steps": int(n_steps),
            "fp_iterations": int(stats[0]),
            "fp_iterations_max": int(stats[1]),
            "halvings": int(stats[2]),
            "mean_fp_iterations": float(stats[0]) / max(1, n_steps),
            "symplectic_defects": audits,
            "symplectic_defect_max": max(audits) if audits else None,
            "symplectic_ok": all(x <= settings.audit_threshold for x in audits),
            "wall_seconds": _time.perf_counter() - t_wall,
            "final_state": z.tolist(),
        }
        return Trajectory(rec_t, rec_z[:, :d], rec_z[:, d:], rec_sup, rec_H, audit)


def integrate(system, start: PhasePoint, t_end: float, dt: float = 0.01, tol_fp: float = 1e-14,
              **kw) -> Trajectory:
    """Implicit-midpoint trajectory of ``system`` (HamiltonianSystem or H symbol)."""
    H = system.H if isinstance(system, HamiltonianSystem) else system
    settings = IntegratorSettings(dt=dt, tol_fp=tol_fp, **kw)
    return Integrator(H).run(start, t_end, settings)


def reverse_system(H: SymbolFunction) -> SymbolFunction:
    """Hamiltonian generating the time-reversed motion: (a, phi, t) -> (-a, phi, -t)
    is avoided; instead H_rev(a, phi, s) = -H(a, phi, -s) in forward time s."""
    return H.map_coeffs(lambda k, e: ex.neg(_subs_t(e)))


def _subs_t(e):
    """e with t replaced by -t."""
    memo = {}
    for node in ex.topo_order([e]):
        if node.op == "var" and node.param == "t":
            memo[node.uid] = ex.neg(ex.T)
        elif node.args:
            memo[node.uid] = ex._rebuild(node, [memo[c.uid] for c in node.args])
        else:
            memo[node.uid] = node
    return memo[e.uid]


def transformed_initial_datum(nf, start: PhasePoint, tol: float = 1e-12) -> PhasePoint:
    """Map a datum to normal-form coordinates (composed inverse Lie flows)."""
    from .lie import compose_inverse
    gens = list(getattr(nf, "generators", nf))
    if not gens:
        return start
    a, phi = compose_inverse(gens, start.actions[None, :], start.angles[None, :], start.time, tol)
    return PhasePoint(a[0], phi[0], start.time)


def original_coordinates(nf, point: PhasePoint, tol: float = 1e-12) -> PhasePoint:
    from .lie import compose_forward
    gens = list(getattr(nf, "generators", nf))
    if not gens:
        return point
    a, phi = compose_forward(gens, point.actions[None, :], point.angles[None, :], point.time, tol)
    return PhasePoint(a[0], phi[0], point.time)
