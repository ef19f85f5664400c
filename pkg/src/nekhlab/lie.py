"""Flows of generating functions and time-dependent Lie transforms.

The flow of g at frozen time t solves

    d phi / d tau = dg/da,    d a / d tau = -dg/dphi,

so that d/dtau (f o Phi^tau) = {f; g} o Phi^tau.  The Lie transform is the
tau = 1 map, and the transformed Hamiltonian is

    H' = H o Phi_g - Psi_g,    Psi_g = int_0^1 (dg/dt) o Phi^tau dtau.

A batch of points is integrated as one flattened system with scipy's DOP853,
so every point shares the same step sequence.  Sharing the steps makes the
numerical map a fixed smooth function of the initial data, which is what
finite difference Jacobians (canonicity audits) need.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.integrate import solve_ivp

from . import expr as ex
from .symbols import SymbolFunction, OrderProbe, DEFAULT_PROBE, sphere_directions, angle_samples, slope_loglog

TWO_PI = 2.0 * math.pi

class FlowError(RuntimeError):
    pass


class MultiEval:
    """Evaluate several real symbols at paired points in one shared pass."""

    def __init__(self, fields):
        self.fields = list(fields)
        self.d = self.fields[0].d
        exprs, self._slices, modes = [], [], []
        for f in self.fields:
            start = len(exprs)
            for k, e in f.items():
                exprs.append(e)
                modes.append(k)
            self._slices.append((start, len(exprs)))
        self._exprs = exprs
        self._modes = np.array(modes, dtype=float).reshape(-1, self.d)

    def __call__(self, a, phi, t) -> np.ndarray:
        a = np.atleast_2d(a)
        n = a.shape[0]
        out = np.zeros((len(self.fields), n))
        if not self._exprs:
            return out
        vals = ex.evaluate_many(self._exprs, a, t)
        E = np.exp(1j * (np.atleast_2d(phi) @ self._modes.T))
        for i, (lo, hi) in enumerate(self._slices):
            acc = np.zeros(n, dtype=complex)
            for m in range(lo, hi):
                acc += vals[m] * E[:, m]
            out[i] = acc.real
        return out


@dataclass
class FlowStats:
    steps: int = 0
    rejected: int = 0


class GeneratorFlow:
    """Flow of a generating function g at frozen time ``t``."""

    def __init__(self, g: SymbolFunction, t: float = 0.0, tol: float = 1e-10,
                 max_steps: int = 100000):
        if not g.real:
            raise ValueError("generator must be real")
        self.g = g
        self.d = g.d
        self.t = float(t)
        self.tol = float(tol)
        self.max_steps = max_steps
        d = g.d
        self._fields = [g.derive_action(j) for j in range(1, d + 1)] + \
                       [g.derive_angle(j) for j in range(1, d + 1)] + [g.derive_time()]
        self._eval = MultiEval(self._fields)
        self.stats = FlowStats()

    @property
    def is_identity(self) -> bool:
        return self.g.is_zero

    def _rhs(self, y, t):
        d = self.d
        a, phi = y[:, :d], y[:, d:2 * d]
        v = self._eval(a, phi, t)
        out = np.empty_like(y)
        out[:, :d] = -v[d:2 * d].T
        out[:, d:2 * d] = v[:d].T
        out[:, 2 * d] = v[2 * d]
        return out

    def integrate(self, a, phi, tau: float = 1.0, t=None, tol=None):
        """Flow rows of (a, phi) by ``tau``; returns (a', phi', psi).

        ``psi`` is int_0^tau (dg/dt) o Phi^s ds.  Angles are not wrapped.
        """
        a = np.atleast_2d(np.asarray(a, dtype=float))
        phi = np.atleast_2d(np.asarray(phi, dtype=float))
        n, d = a.shape
        if d != self.d or phi.shape != a.shape:
            raise ValueError("shape mismatch between a, phi and the generator dimension")
        t = self.t if t is None else t
        tvec = np.broadcast_to(np.asarray(t, dtype=float), (n,))
        tol = self.tol if tol is None else tol
        y = np.concatenate([a, phi, np.zeros((n, 1))], axis=1)
        if self.g.is_zero or tau == 0:
            return y[:, :d].copy(), y[:, d:2 * d].copy(), y[:, 2 * d].copy()
        sgn = 1.0 if tau > 0 else -1.0
        shape = y.shape

        def rhs(_, yf):
            return (sgn * self._rhs(yf.reshape(shape), tvec)).ravel()

        sol = solve_ivp(rhs, (0.0, abs(tau)), y.ravel(), method="DOP853", rtol=tol, atol=tol)
        if not sol.success or sol.nfev > 12 * self.max_steps:
            raise FlowError(f"flow integration failed: {sol.message}")
        y = sol.y[:, -1].reshape(shape)
        self.stats.steps += sol.t.size - 1
        self.stats.rejected += max(0, (sol.nfev - 1) // 12 - (sol.t.size - 1))
        psi = sgn * y[:, 2 * d]
        return y[:, :d].copy(), y[:, d:2 * d].copy(), psi

    def __call__(self, a, phi, tau=1.0, t=None):
        a2, p2, _ = self.integrate(a, phi, tau, t)
        return a2, p2


def flow(g: SymbolFunction, point, tau: float = 1.0, tol: float = 1e-10):
    """Flow a single :class:`~nekhlab.symbols.PhasePoint` by ``tau``."""
    from .symbols import PhasePoint
    if point.d != g.d:
        raise ValueError("dimension mismatch")
    F = GeneratorFlow(g, t=point.time, tol=tol)
    a, phi, _ = F.integrate(point.actions[None, :], point.angles[None, :], tau)
    return PhasePoint(a[0], phi[0], point.time)


def psi_correction(g: SymbolFunction, point, t=None, tol: float = 1e-10) -> float:
    """int_0^1 (dg/dt) o Phi^tau dtau at a phase point (integrated with the flow)."""
    t = point.time if t is None else t
    F = GeneratorFlow(g, t=t, tol=tol)
    _, _, psi = F.integrate(point.actions[None, :], point.angles[None, :], 1.0)
    return float(psi[0])


class LieTransform:
    """tau = 1 map of a generator: forward (new -> old) and inverse."""

    def __init__(self, g: SymbolFunction, tol: float = 1e-10):
        self.g = g
        self.tol = tol
        self._flows = {}

    def _flow(self, t):
        F = self._flows.get(t)
        if F is None:
            F = self._flows[t] = GeneratorFlow(self.g, t=t, tol=self.tol)
        return F

    def forward(self, a, phi, t=0.0):
        return self._flow(float(t))(a, phi, 1.0)

    def inverse(self, a, phi, t=0.0):
        return self._flow(float(t))(a, phi, -1.0)

    def psi(self, a, phi, t=0.0):
        return self._flow(float(t)).integrate(a, phi, 1.0)[2]


def compose_inverse(generators, a, phi, t=0.0, tol=1e-10):
    """Old -> new coordinates for old = Phi_g1(Phi_g2(...(new)))."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    for g in generators:
        a, phi = LieTransform(g, tol).inverse(a, phi, t)
    return a, phi


def compose_forward(generators, a, phi, t=0.0, tol=1e-10):
    """New -> old coordinates."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    for g in reversed(list(generators)):
        a, phi = LieTransform(g, tol).forward(a, phi, t)
    return a, phi


# --------------------------------------------------------- Taylor series

@dataclass
class TaylorPushforward:
    terms: list          # f_0 .. f_L
    series: SymbolFunction

    def remainder(self, g, a, phi, t=0.0, tol=1e-12) -> np.ndarray:
        """|f o Phi^1_g - sum_l f_l / l!| at paired points."""
        f = self.terms[0]
        F = GeneratorFlow(g, t=t, tol=tol)
        a2, p2, _ = F.integrate(a, phi, 1.0)
        lhs = f.values(a2, p2, t)
        rhs = self.series.values(a, phi, t)
        return np.abs(lhs - rhs)


def pushforward_taylor(f: SymbolFunction, g: SymbolFunction, L: int, kmax=None,
                       on_overflow="flag") -> TaylorPushforward:
    """f_0 = f, f_l = {f_(l-1); g}; series sum f_l / l!."""
    from .symbols import poisson_bracket
    terms = [f]
    total = f
    cur = f
    fact = 1.0
    for l in range(1, L + 1):
        if g.is_zero:
            break
        cur = poisson_bracket(cur, g, kmax=kmax, on_overflow=on_overflow)
        fact *= l
        terms.append(cur)
        total = total + cur.scale(1.0 / fact)
    return TaylorPushforward(terms, total)


def sphere_points(d, r, n_dirs=64, n_angles=6, seed=7):
    dirs = sphere_directions(d, n_dirs)
    ang = angle_samples(d, n_angles, seed)
    A = np.repeat(dirs * r, ang.shape[0], axis=0)
    P = np.tile(ang, (dirs.shape[0], 1))
    return A, P


def taylor_remainder_order(f, g, L, radii, t=0.0, tol=1e-12, n_dirs=64, n_angles=6):
    """Fitted order of the Lie-series remainder over ``radii`` (and the sups)."""
    tp = pushforward_taylor(f, g, L)
    sups = []
    for r in radii:
        A, P = sphere_points(f.d, r, n_dirs, n_angles)
        sups.append(float(np.max(tp.remainder(g, A, P, t, tol))))
    return slope_loglog(radii, sups), np.array(sups)


# --------------------------------------------------------- conjugation

def conjugate_hamiltonian(H_parts, g: SymbolFunction, tol: float = 1e-11):
    """Evaluator (a', phi', t) -> H(Phi_g(a', phi'), t) - Psi_g(a', phi', t).

    ``H_parts`` is a SymbolFunction or a sequence of them (summed).
    """
    parts = [H_parts] if isinstance(H_parts, SymbolFunction) else list(H_parts)
    H = parts[0]
    for p in parts[1:]:
        H = H + p

    def Hprime(a, phi, t=0.0):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        phi = np.atleast_2d(np.asarray(phi, dtype=float))
        if g.is_zero:
            return H.values(a, phi, t)
        F = GeneratorFlow(g, t=t, tol=tol)
        a2, p2, psi = F.integrate(a, phi, 1.0)
        return H.values(a2, p2, t) - psi

    Hprime.H = H
    Hprime.g = g
    return Hprime


def hamiltonian_vector_field_fd(Hfun, d, h=1e-5):
    """Vector field of a pointwise evaluator by central differences.

    Returns rhs(t, y) for y = (a, phi) suited to scipy's solve_ivp; all
    perturbed points go through one evaluator call (shared flow steps).
    """
    def rhs(t, y):
        y = np.asarray(y, dtype=float)
        pts = np.repeat(y[None, :], 4 * d, axis=0)
        for i in range(2 * d):
            hi = h * max(1.0, abs(y[i]))
            pts[2 * i, i] += hi
            pts[2 * i + 1, i] -= hi
        v = Hfun(pts[:, :d], pts[:, d:], t)
        grad = np.empty(2 * d)
        for i in range(2 * d):
            hi = h * max(1.0, abs(y[i]))
            grad[i] = (v[2 * i] - v[2 * i + 1]) / (2 * hi)
        return np.concatenate([-grad[d:], grad[:d]])
    return rhs


# ------------------------------------------------------- canonicity audit

def omega(d: int) -> np.ndarray:
    I = np.eye(d)
    Z = np.zeros((d, d))
    return np.block([[Z, I], [-I, Z]])


def jacobian_fd(transform, a, phi, h=1e-6):
    """Central-difference Jacobians (n, 2d, 2d) of (a, phi) -> transform(a, phi)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    n, d = a.shape
    y = np.concatenate([a, phi], axis=1)
    hs = h * np.maximum(1.0, np.abs(y))
    pts = np.repeat(y, 4 * d, axis=0).reshape(n, 4 * d, 2 * d)
    for i in range(2 * d):
        pts[:, 2 * i, i] += hs[:, i]
        pts[:, 2 * i + 1, i] -= hs[:, i]
    flat = pts.reshape(-1, 2 * d)
    a2, p2 = transform(flat[:, :d], flat[:, d:])
    out = np.concatenate([a2, p2], axis=1).reshape(n, 4 * d, 2 * d)
    J = np.empty((n, 2 * d, 2 * d))
    for i in range(2 * d):
        J[:, :, i] = (out[:, 2 * i] - out[:, 2 * i + 1]) / (2 * hs[:, i][:, None])
    return J


def symplectic_defect(transform, a, phi, h=1e-6) -> float:
    """max over points of |J^T Omega J - Omega| (max-abs entry)."""
    J = jacobian_fd(transform, a, phi, h)
    d = J.shape[1] // 2
    W = omega(d)
    D = np.einsum("nji,jk,nkl->nil", J, W, J) - W
    return float(np.max(np.abs(D)))


def generator_defect(g: SymbolFunction, a, phi, t=0.0, tol=1e-10, h=1e-5) -> float:
    F = GeneratorFlow(g, t=t, tol=tol)
    return symplectic_defect(lambda x, y: F(x, y, 1.0), a, phi, h)


@dataclass
class DisplacementFit:
    slope: float
    radii: np.ndarray
    sups: np.ndarray


def displacement_bound_check(g: SymbolFunction, radii, t=0.0, tol=1e-10, n_dirs=48,
                             n_angles=6, transform=None) -> DisplacementFit:
    """Slope of log sup |a - a'| against log |a| with (a', phi') = Phi_g(a, phi)."""
    radii = np.asarray(radii, dtype=float)
    sups = np.zeros(radii.size)
    F = transform or GeneratorFlow(g, t=t, tol=tol)
    for i, r in enumerate(radii):
        A, P = sphere_points(g.d, r, n_dirs, n_angles)
        a2, _ = F(A, P) if transform is not None else F(A, P, 1.0)
        sups[i] = float(np.max(np.linalg.norm(a2 - A, axis=1)))
    return DisplacementFit(slope_loglog(radii, sups) if np.any(sups > 0) else -math.inf, radii, sups)
