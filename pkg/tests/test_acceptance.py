"""The twelve acceptance criteria at their stated tolerances and runtime limits.

Each test prints one ``criterion N: PASS|FAIL`` line; the lines are repeated in
the terminal summary.  Run standalone with ``python tests/test_acceptance.py``.
"""
import math
import time

import numpy as np
import pytest

from nekhlab import expr as ex
from nekhlab import symbols as sy
from nekhlab.symbols import PhasePoint, SymbolFunction, OrderProbe
from nekhlab.cutoffs import CutoffParams
from nekhlab.cohomology import (split, solve_cohomological, cohomological_residual, normal_form_step,
                                normal_form, sigma)
from nekhlab.lie import generator_defect, displacement_bound_check, sphere_points
from nekhlab.geometry import ZoneParams, max_rank_batch, classify_many, separation_sweep
from nekhlab.lattice import giorgilli_bound
from nekhlab.dynamics import em_example, Integrator, IntegratorSettings
from nekhlab.harness import Envelope, envelope_eval, envelope_from_doubles, growth_fit, drift_ratio

from strategies import random_symbol

CUT = CutoffParams(0.75, 0.08)
PROBE = OrderProbe(n_dirs=180, n_angles=16)
RADII = sy.dyadic_radii(2.0 ** 13, 64)
RESULTS = {}


def _record(n, ok, detail, elapsed, limit):
    ok_time = elapsed < limit
    status = "PASS" if ok and ok_time else "FAIL"
    line = f"criterion {n:2d}: {status}  {detail}  [{elapsed:.1f}s / limit {limit:.0f}s]"
    RESULTS[n] = line
    print(line)
    assert ok, line
    assert ok_time, line


def _annulus(rng, lo, hi, n, d=2):
    r = np.exp(rng.uniform(math.log(lo), math.log(hi), n))
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * r[:, None], rng.uniform(0, 2 * math.pi, (n, d))


def test_criterion_01_splitting_partition():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = rel = 0.0
    for _ in range(20):
        f = random_symbol(rng, n_modes=int(rng.integers(1, 9)), kbound=4)
        A, PH = _annulus(rng, 1.0, 1e6, 10_000)
        s = split(f, CUT)
        ref = f.values(A, PH, 0.3)
        err = np.abs(ref - s.total().values(A, PH, 0.3))
        worst = max(worst, float(err.max()))
        rel = max(rel, float((err / np.maximum(np.abs(ref), 1e-300)).max()))
    _record(1, worst <= 1e-12, f"max |f - (f_nr+f_res+f_S)| = {worst:.3g} (relative {rel:.2g})",
            time.perf_counter() - t0, 10)


def test_criterion_02_cohomological_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    f = random_symbol(rng, n_modes=8, kbound=3)
    R = CUT.saturation_radius(3 * math.sqrt(2))
    A, PH = _annulus(rng, R, 100 * R, 10_000)
    res = float(cohomological_residual(f, CUT, A, PH, 0.4).max())
    _record(2, res <= 1e-10, f"max relative residual {res:.3g} on |a| in [{R:.3g}, 100R]",
            time.perf_counter() - t0, 30)


def test_criterion_03_order_ledger(em):
    t0 = time.perf_counter()
    st = normal_form_step(em.h0, SymbolFunction(2, {}), em.P, CUT, beta=1.0, radii=RADII, probe=PROBE)
    drop = st.entry.fitted_before - st.entry.fitted_after
    need = sigma(1.0, 0.75) - 0.1
    _record(3, drop >= need, f"order {st.entry.fitted_before:.3f} -> {st.entry.fitted_after:.3f}, "
            f"drop {drop:.3f} (need >= {need:.2f})", time.perf_counter() - t0, 300)


def test_criterion_04_smoothing_flatness():
    # test symbol <a> cos(k.phi) with |k| >= 2 |a_min|^mu, fitted over [a_min, 100 a_min]
    t0 = time.perf_counter()
    a_min, m = 2.0 ** 13, 1.0
    kn = math.ceil(2 * a_min ** CUT.mu)
    f = sy.cos_mode(2, (kn, 0), ex.jac())
    radii = sy.dyadic_radii(a_min, 100)
    order = sy.fit_order(split(f, CUT).f_S, radii, PROBE)
    _record(4, order <= m - 3, f"f_S fitted order {order:.3f} (need <= {m - 3:.1f}), |k| = {kn}",
            time.perf_counter() - t0, 60)


def test_criterion_05_lie_canonicity(em):
    t0 = time.perf_counter()
    res = normal_form((em.h0, em.P), CUT, N_target=5, max_steps=2, radii=RADII, probe=PROBE)
    worst_def, worst_gap, parts = 0.0, -math.inf, []
    for i, g in enumerate(res.generators):
        for r in (30.0, 500.0, 8192.0):
            A, PH = sphere_points(2, r, 8, 3)
            worst_def = max(worst_def, generator_defect(g, A, PH, t=0.7, tol=1e-10))
        eta = sy.fit_order(g, RADII, PROBE)
        slope = displacement_bound_check(g, RADII, t=0.3, tol=1e-10, n_dirs=24, n_angles=4).slope
        worst_gap = max(worst_gap, slope - eta)
        parts.append(f"g{i + 1}: eta {eta:.3f} slope {slope:.3f}")
    ok = worst_def <= 1e-8 and worst_gap <= 0.1
    _record(5, ok, f"max defect {worst_def:.3g}; " + ", ".join(parts), time.perf_counter() - t0, 120)


def test_criterion_06_full_rank_emptiness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    parts, ok = [], True
    for d in (2, 3):
        zp = ZoneParams(d=d)
        A, _ = _annulus(rng, zp.R, 100 * zp.R, 100_000, d)
        full = int((max_rank_batch(A, zp) >= d).sum())
        ok &= full == 0
        parts.append(f"d={d}: {full} rank-d members (R = 2^{math.log2(zp.R):.0f})")
    _record(6, ok, "; ".join(parts), time.perf_counter() - t0, 60)


def test_criterion_07_giorgilli():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    viol = done = 0
    while done < 10_000:
        d = int(rng.integers(1, 5))
        s = int(rng.integers(1, d + 1))
        U = rng.integers(-6, 7, (s, d)).astype(float)
        if np.linalg.matrix_rank(U) < s:
            continue
        w = rng.standard_normal(s) @ U
        alpha = float(np.max(np.abs(U @ w)))
        N = float(np.max(np.linalg.norm(U, axis=1)))
        viol += not giorgilli_bound(U, w, alpha, N).holds
        done += 1
    _record(7, viol == 0, f"{viol} violations in {done} instances", time.perf_counter() - t0, 10)


def test_criterion_08_classification_uniqueness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    zp = ZoneParams()
    A, _ = _annulus(rng, zp.R, 100 * zp.R, 10_000)
    s, _ = classify_many(A, zp)
    out = s != -1
    one = int((s[out] >= 0).sum())
    none = int((s[out] == -2).sum())
    frac = one / max(1, int(out.sum()))
    _record(8, frac >= 0.999 and none == 0,
            f"{frac:.4%} of {int(out.sum())} points off the band uniquely labelled, {none} unlabelled, "
            f"{int((s == -1).sum())} in band", time.perf_counter() - t0, 300)


def test_criterion_09_separation_sweep():
    t0 = time.perf_counter()
    row = separation_sweep(4.0, [4.0], 10_000, seed=9)[0]
    _record(9, row["violations"] == 0 and row["pairs"] > 0,
            f"{row['violations']} violations over {row['pairs']} pairs (C2/C~ = 4, R = {row['R']:.3g})",
            time.perf_counter() - t0, 120)


@pytest.mark.slow
def test_criterion_10_long_run_growth(em):
    t0 = time.perf_counter()
    a0 = np.array([16.0, 12.0])
    traj = Integrator(em.H).run(PhasePoint(a0, np.zeros(2), 0.0), 1e6,
                                IntegratorSettings(dt=0.01, n_samples=4000, spacing="log", n_audits=20))
    rep = growth_fit(traj, R0=20.0)
    sup = float(traj.sup[-1])
    ok = sup <= 2 * 20.0 and rep.eps_hat <= 0.1 and traj.audit["symplectic_ok"]
    _record(10, ok, f"sup {sup:.4f} (bound 40), eps_hat {rep.eps_hat:.4g}, max symplectic defect "
            f"{traj.audit['symplectic_defect_max']:.3g}", time.perf_counter() - t0, 1800)


def test_criterion_11_envelope_algebra():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        env = Envelope(10 ** rng.uniform(-3, 3), rng.uniform(1, 8), 10 ** rng.uniform(0, 3))
        t = 10 ** rng.uniform(-6, 12)
        ref = max(4 * env.R0, 4 * (2 * env.K_d * t) ** (1 / env.N))
        worst = max(worst, abs(envelope_eval(env, t) - ref) / ref)
    env = Envelope(0.37, 2.5, 12.0)
    back = envelope_from_doubles(env.tau(np.arange(1, 8)), env.R0)
    rt = max(abs(back.K_d / env.K_d - 1), abs(back.N / env.N - 1))
    _record(11, worst <= 1e-12 and rt <= 1e-9, f"identity rel. error {worst:.3g}, round-trip {rt:.3g}",
            time.perf_counter() - t0, 1)


def test_criterion_12_drift_scaling():
    t0 = time.perf_counter()
    parts, ok = [], True
    for N in (2.0, 3.0):
        r = drift_ratio(N, 20.0)
        dev = abs(r["ratio"] / r["expected"] - 1)
        ok &= dev <= 0.2
        parts.append(f"N={N:g}: ratio {r['ratio']:.5f} vs {r['expected']:.5f}")
    _record(12, ok, "; ".join(parts), time.perf_counter() - t0, 300)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
