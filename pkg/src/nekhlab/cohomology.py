"""Splitting, the cohomological equation, and the iterative normal form.

Conventions
-----------
* ``split`` multiplies the k-th coefficient by the cutoffs
  (1 - chi_k) chi~_k  (nonresonant), chi_k chi~_k (resonant) and
  1 - chi~_k (smoothing); the k = 0 coefficient is always resonant.
* ``solve_cohomological(f)`` returns g = i sum_k d_k chi~_k f_k e^{ik.phi},
  for which {h0; g} = -a.d_phi g equals the nonresonant part exactly.
* A normal-form step conjugates with the Lie transform of
  ``-solve_cohomological(R_n)``, so that {h0; g_{n+1}} cancels R_n^(nr).
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
import math

import numpy as np

from . import expr as ex
from .cutoffs import CutoffParams
from .symbols import (SymbolFunction, poisson_bracket, fit_order, OrderProbe,
                      DEFAULT_PROBE, h0 as make_h0)

# Degree of h0 = |a|^2 / 2; enters e_1 = m - (3 delta - H0_DEGREE).
H0_DEGREE = 2.0


class BudgetExhausted(RuntimeError):
    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


class ParameterError(ValueError):
    pass


# ------------------------------------------------------- cutoff expressions

def _knorm(k):
    return math.sqrt(sum(x * x for x in k))


def resonance_arg_expr(k, params: CutoffParams) -> ex.Expr:
    """(a.k) / (|a|^delta |k|) as an expression."""
    ak = ex.dot(k, [ex.action(j + 1) for j in range(len(k))])
    return ex.mul(1.0 / _knorm(k), ak, ex.power(ex.norm(), -params.delta))


def chi_res_expr(k, params: CutoffParams) -> ex.Expr:
    return ex.bump(resonance_arg_expr(k, params))


def chi_uv_expr(k, params: CutoffParams) -> ex.Expr:
    return ex.bump(ex.mul(_knorm(k), ex.power(ex.norm(), -params.mu)))


def d_k_expr(k, params: CutoffParams) -> ex.Expr:
    """(1 - chi_k) / (a.k) written as ibump(x) / (|a|^delta |k|)."""
    return ex.mul(1.0 / _knorm(k), ex.ibump(resonance_arg_expr(k, params)),
                  ex.power(ex.norm(), -params.delta))


# ----------------------------------------------------------------- split

@dataclass(frozen=True)
class SplitResult:
    nonresonant: SymbolFunction
    resonant: SymbolFunction
    smoothing: SymbolFunction

    @property
    def f_nr(self):
        return self.nonresonant

    @property
    def f_res(self):
        return self.resonant

    @property
    def f_S(self):
        return self.smoothing

    def total(self) -> SymbolFunction:
        return self.nonresonant + self.resonant + self.smoothing


def split(f: SymbolFunction, params: CutoffParams) -> SplitResult:
    nr, res, sm = {}, {}, {}
    for k, c in f.items():
        if not any(k):
            res[k] = c
            continue
        chi = chi_res_expr(k, params)
        uv = chi_uv_expr(k, params)
        nr[k] = ex.mul(ex.add(1.0, ex.neg(chi)), uv, c)
        res[k] = ex.mul(chi, uv, c)
        sm[k] = ex.mul(ex.add(1.0, ex.neg(uv)), c)
    mk = lambda co: SymbolFunction(f.d, co, kmax=f.kmax, real=f.real, truncated=f.truncated)
    return SplitResult(mk(nr), mk(res), mk(sm))


def solve_cohomological(f: SymbolFunction, params: CutoffParams) -> SymbolFunction:
    """Generator g with {h0; g} = f^(nr) (order drops by delta)."""
    out = {}
    for k, c in f.items():
        if not any(k):
            continue
        out[k] = ex.mul(1j, d_k_expr(k, params), chi_uv_expr(k, params), c)
    return SymbolFunction(f.d, out, kmax=f.kmax, real=f.real, truncated=f.truncated)


# ---------------------------------------------------------- the ledger

def sigma(beta: float, delta: float) -> float:
    return min(2 * delta - beta, delta)


@dataclass
class LedgerEntry:
    step: int
    m: float
    beta: float
    delta: float
    eta: float
    sigma: float
    e: tuple
    sigmas: tuple
    fitted_before: float | None = None
    fitted_after: float | None = None
    generator_order: float | None = None
    truncated: bool = False
    nodes: int = 0

    def as_dict(self):
        return asdict(self)


def exponent_ledger(n: int, beta: float, delta: float, td: float = H0_DEGREE) -> dict:
    """Class exponents e_1..e_4 of the new remainder at step n -> n+1."""
    s = sigma(beta, delta)
    m = beta - n * s
    s1 = 3 * delta - td
    s2 = 2 * delta - beta
    s3 = 2 * (n * s + 2 * delta - beta)
    s4 = delta
    return {"m": m, "eta": m - delta, "sigma": s, "sigmas": (s1, s2, s3, s4),
            "e": (m - s1, m - s2, m - s3, m - s4)}


# ------------------------------------------------------------ the step

@dataclass(frozen=True)
class NFBudget:
    kmax: int = 32
    lie_order: int = 2
    max_nodes: int = 400_000


@dataclass
class StepResult:
    Z: SymbolFunction
    R: SymbolFunction
    g: SymbolFunction
    entry: LedgerEntry
    smoothing: SymbolFunction

    def __iter__(self):
        return iter((self.Z, self.R, self.g, self.entry))


def _zero(d, kmax):
    return SymbolFunction(d, {}, kmax=kmax)


def normal_form_step(h0_spec: SymbolFunction, Z_n: SymbolFunction, R_n: SymbolFunction,
                     params: CutoffParams, budget: NFBudget = NFBudget(), n: int = 0,
                     beta: float = 1.0, radii=None, probe: OrderProbe = DEFAULT_PROBE) -> StepResult:
    """One conjugation step: R_n -> (Z_{n+1}, R_{n+1}, g_{n+1}).

    The returned ``g`` generates the coordinate change (old = Phi_g(new)).
    ``R`` collects the Lie-series terms up to ``budget.lie_order`` brackets
    plus the time-derivative correction; the smoothing part of ``R_n`` is
    returned separately (it belongs to the flat remainder).
    """
    d = R_n.d
    kmax = budget.kmax
    led = exponent_ledger(n, beta, params.delta)
    if R_n.is_zero:
        entry = LedgerEntry(n, led["m"], beta, params.delta, led["eta"], led["sigma"],
                            led["e"], led["sigmas"])
        return StepResult(Z_n, _zero(d, kmax), _zero(d, kmax), entry, _zero(d, kmax))

    parts = split(R_n, params)
    g = -solve_cohomological(R_n, params)
    br = lambda f, h: poisson_bracket(f, h, kmax=kmax, on_overflow="flag")

    K = Z_n + R_n
    first = br(K, g)                          # {Z_n + R_n, g}
    cur = first - parts.nonresonant           # ad_g(h0 + K), using {h0, g} = -R^(nr)
    R_next = first
    fact = 1.0
    for l in range(2, budget.lie_order + 1):
        cur = br(cur, g)
        fact *= l
        R_next = R_next + cur.scale(1.0 / fact)
        _check_nodes(R_next, budget, n)
    if g.time_dependent():
        dg = g.derive_time()
        cur = dg
        psi = dg
        fact = 1.0
        for l in range(1, budget.lie_order):
            cur = br(cur, g)
            fact *= l + 1
            psi = psi + cur.scale(1.0 / fact)
        R_next = R_next - psi
    _check_nodes(R_next, budget, n)

    Z_next = Z_n + parts.resonant
    entry = LedgerEntry(n, led["m"], beta, params.delta, led["eta"], led["sigma"],
                        led["e"], led["sigmas"], truncated=R_next.truncated,
                        nodes=R_next.node_count())
    if radii is not None:
        entry.fitted_before = fit_order(R_n, radii, probe)
        entry.fitted_after = fit_order(R_next, radii, probe)
        entry.generator_order = fit_order(g, radii, probe)
    return StepResult(Z_next, R_next, g, entry, parts.smoothing)


def _check_nodes(f, budget, n):
    if f.node_count() > budget.max_nodes:
        raise BudgetExhausted(f"step {n}: remainder DAG exceeds {budget.max_nodes} nodes", partial=f)


# ------------------------------------------------------- full iteration

@dataclass
class NormalFormResult:
    Z: SymbolFunction
    R: SymbolFunction
    R_tilde: SymbolFunction
    generators: list
    ledger: list
    params: CutoffParams
    beta: float
    planned_steps: int
    status: str = "max_steps"
    h0: SymbolFunction | None = None

    @property
    def steps(self) -> int:
        return len(self.generators)

    def to_dict(self) -> dict:
        return {
            "params": {"delta": self.params.delta, "mu": self.params.mu},
            "beta": self.beta,
            "sigma": sigma(self.beta, self.params.delta),
            "planned_steps": self.planned_steps,
            "steps": self.steps,
            "status": self.status,
            "Z": self.Z.to_dict(),
            "R": self.R.to_dict(),
            "R_tilde": self.R_tilde.to_dict(),
            "generators": [g.to_dict() for g in self.generators],
            "ledger": [e.as_dict() for e in self.ledger],
        }

    def ledger_table(self) -> str:
        head = f"{'step':>4} {'m':>7} {'e1':>7} {'e2':>7} {'e3':>7} {'e4':>7} {'sigma':>6} {'fit R_n':>8} {'fit R_n+1':>9} {'fit g':>7}"
        rows = [head, "-" * len(head)]
        fmt = lambda v: "    n/a" if v is None else f"{v:7.3f}"
        for e in self.ledger:
            rows.append(f"{e.step:>4} {e.m:7.3f} " + " ".join(f"{x:7.3f}" for x in e.e)
                        + f" {e.sigma:6.3f} {fmt(e.fitted_before):>8} {fmt(e.fitted_after):>9} {fmt(e.generator_order)}")
        return "\n".join(rows)


def check_parameters(beta: float, params: CutoffParams, d: int | None = None):
    if beta >= H0_DEGREE:
        raise ParameterError(f"perturbation order beta={beta} must be < {H0_DEGREE}")
    lo = max(2.0 / 3.0, beta / 2.0)
    if not lo < params.delta < 1.0:
        raise ParameterError(f"delta={params.delta} must lie in ({lo:.4g}, 1) for beta={beta}")
    if d is not None:
        try:
            params.validate(d)
        except ValueError as err:
            raise ParameterError(str(err)) from None


def normal_form(H, params: CutoffParams, N_target: float = 1.0, max_steps: int = 3,
                budget: NFBudget = NFBudget(), beta: float | None = None, radii=None,
                probe: OrderProbe = DEFAULT_PROBE) -> NormalFormResult:
    """Iterate normal-form steps on H = (h0, P).

    Stops when the fitted remainder order is <= -N_target (needs ``radii``),
    after ``max_steps`` steps, or when the node budget is exhausted.
    """
    h0_spec, P = H
    if beta is None:
        if radii is None:
            raise ParameterError("pass beta or radii to determine the perturbation order")
        beta = fit_order(P, radii, probe)
    check_parameters(beta, params, P.d)
    s = sigma(beta, params.delta)
    planned = int(math.floor(N_target / s)) + 1
    d, kmax = P.d, budget.kmax
    Z = _zero(d, kmax)
    R = P
    Rt = _zero(d, kmax)
    gens, ledger = [], []
    status = "max_steps"
    if P.is_zero:
        return NormalFormResult(Z, R, Rt, gens, ledger, params, beta, planned, "zero", h0_spec)
    for n in range(max_steps):
        try:
            st = normal_form_step(h0_spec, Z, R, params, budget, n=n, beta=beta,
                                  radii=radii, probe=probe)
        except BudgetExhausted:
            status = "budget"
            break
        Z, R = st.Z, st.R
        Rt = Rt + st.smoothing
        gens.append(st.g)
        ledger.append(st.entry)
        if R.is_zero:
            status = "zero"
            break
        if st.entry.truncated:
            status = "truncated"
            break
        if st.entry.fitted_after is not None and st.entry.fitted_after <= -N_target:
            status = "target"
            break
        if n + 1 >= planned:
            status = "planned"
            break
    return NormalFormResult(Z, R, Rt, gens, ledger, params, beta, planned, status, h0_spec)


def cohomological_residual(f: SymbolFunction, params: CutoffParams, a, phi, t=0.0) -> np.ndarray:
    """|{h0; g} - f^(nr)| / (1 + |f^(nr)|) pointwise."""
    g = solve_cohomological(f, params)
    lhs = poisson_bracket(make_h0(f.d, f.kmax), g, kmax=f.kmax)
    nr = split(f, params).nonresonant
    v1 = lhs.values(a, phi, t, complex_out=True)
    v2 = nr.values(a, phi, t, complex_out=True)
    return np.abs(v1 - v2) / (1.0 + np.abs(v2))
