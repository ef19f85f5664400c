import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nekhlab import expr as ex
from nekhlab import symbols as sy
from nekhlab.symbols import PhasePoint, SymbolFunction

from strategies import real_symbols, fd_bracket


def test_phase_point_wraps_angles():
    p = PhasePoint([1.0, 2.0], [7.0, -1.0])
    assert np.all((p.angles >= 0) & (p.angles < 2 * np.pi))
    with pytest.raises(ValueError):
        PhasePoint([1.0], [1.0, 2.0])


def test_evaluate_examples():
    p = PhasePoint([3.0, 4.0], [0.3, 1.1])
    assert sy.evaluate(sy.constant(2, 1.0), p) == 1.0
    assert sy.evaluate(sy.h0(2), p) == pytest.approx(12.5)
    f = sy.mode(2, (1, 0), ex.action(1))
    assert sy.evaluate(f, PhasePoint([2.0, 0.0], [0.0, 0.0])) == pytest.approx(2.0)


def test_derive_angle_examples(rng):
    f = sy.mode(2, (1, 0), 1.0)
    p = PhasePoint([1.0, 1.0], [0.4, 0.0])
    assert sy.evaluate(sy.derive_angle(f, 1), p) == pytest.approx(1j * np.exp(0.4j))
    assert sy.derive_angle(sy.constant(2, 3.0), 1).is_zero
    c = sy.cos_mode(2, (1, 0), 1.0)
    A = rng.uniform(-5, 5, (100, 2))
    PH = rng.uniform(0, 2 * np.pi, (100, 2))
    np.testing.assert_allclose(sy.derive_angle(c, 1).values(A, PH), -np.sin(PH[:, 0]), atol=1e-14)


def test_derive_action_examples(rng):
    p = PhasePoint([3.0, 4.0], [0.0, 0.0])
    assert sy.evaluate(sy.derive_action(sy.h0(2), 1), p) == pytest.approx(3.0)
    f = sy.from_coefficient(2, ex.jac())
    A = rng.uniform(-20, 20, (50, 2))
    PH = np.zeros((50, 2))
    h = 1e-5
    fd = (f.values(A + [h, 0], PH) - f.values(A - [h, 0], PH)) / (2 * h)
    np.testing.assert_allclose(sy.derive_action(f, 1).values(A, PH), fd, rtol=1e-7)
    assert sy.derive_time(sy.h0(2)).is_zero


@given(real_symbols())
@settings(max_examples=25)
def test_ad_matches_finite_differences(f):
    rng = np.random.default_rng(1)
    A = rng.uniform(1, 10, (40, 2))
    PH = rng.uniform(0, 2 * np.pi, (40, 2))
    t, h = 0.4, 1e-5
    scale = 1 + np.abs(f.values(A, PH, t)).max()
    for j in (1, 2):
        E = np.zeros(2)
        E[j - 1] = h
        fd = (f.values(A + E, PH, t) - f.values(A - E, PH, t)) / (2 * h)
        assert np.abs(f.derive_action(j).values(A, PH, t) - fd).max() <= 1e-6 * scale
    fd = (f.values(A, PH, t + h) - f.values(A, PH, t - h)) / (2 * h)
    assert np.abs(f.derive_time().values(A, PH, t) - fd).max() <= 1e-6 * scale


@given(real_symbols())
@settings(max_examples=25)
def test_reality(f):
    rng = np.random.default_rng(2)
    A = rng.uniform(-10, 10, (50, 2))
    PH = rng.uniform(0, 2 * np.pi, (50, 2))
    z = f.values(A, PH, 0.3, complex_out=True)
    mag = sum(np.abs(ex.evaluate(e, A, 0.3)) for _, e in f.items())
    assert np.all(np.abs(z.imag) <= 1e-12 * (mag + 1e-300))


def test_bracket_with_h0_oracle(rng):
    k = (2, -1)
    c = ex.mul(ex.action(1), ex.power(ex.jac(), -1.0))
    g = sy.mode(2, k, c)
    br = sy.poisson_bracket(sy.h0(2), g)
    A = rng.uniform(-10, 10, (200, 2))
    PH = rng.uniform(0, 2 * np.pi, (200, 2))
    expect = -1j * (A @ np.array(k)) * ex.evaluate(c, A) * np.exp(1j * PH @ np.array(k))
    np.testing.assert_allclose(br.values(A, PH, complex_out=True), expect, atol=1e-12 * np.abs(expect).max())


@given(real_symbols(), real_symbols())
@settings(max_examples=20)
def test_bracket_matches_finite_differences(f, g):
    rng = np.random.default_rng(3)
    A = rng.uniform(1, 6, (30, 2))
    PH = rng.uniform(0, 2 * np.pi, (30, 2))
    br = sy.poisson_bracket(f, g).values(A, PH, 0.2)
    fd = fd_bracket(f, g, A, PH, 0.2)
    scale = 1 + np.abs(fd).max()
    assert np.abs(br - fd).max() <= 1e-5 * scale


@given(real_symbols())
def test_bracket_antisymmetry(f):
    assert sy.poisson_bracket(f, f).is_zero
    g = sy.cos_mode(2, (1, 1), ex.action(2))
    assert sy.poisson_bracket(f, g) == -sy.poisson_bracket(g, f)


def test_bracket_action_with_angle_free():
    g = sy.from_coefficient(2, ex.mul(ex.action(1), ex.jac()))
    assert sy.poisson_bracket(sy.from_coefficient(2, ex.action(1)), g).is_zero


@given(real_symbols(max_modes=2, kbound=2), real_symbols(max_modes=2, kbound=2),
       real_symbols(max_modes=2, kbound=2))
@settings(max_examples=15)
def test_jacobi_identity(f, g, h):
    pb = sy.poisson_bracket
    J = pb(f, pb(g, h)) + pb(g, pb(h, f)) + pb(h, pb(f, g))
    rng = np.random.default_rng(4)
    A = rng.uniform(1, 6, (30, 2))
    PH = rng.uniform(0, 2 * np.pi, (30, 2))
    terms = [np.abs(pb(x, pb(y, z)).values(A, PH, 0.1)) for x, y, z in ((f, g, h), (g, h, f), (h, f, g))]
    scale = 1 + max(t.max() for t in terms)
    assert np.abs(J.values(A, PH, 0.1)).max() <= 1e-9 * scale


def test_truncation_flag():
    f = sy.cos_mode(2, (3, 0), 1.0, kmax=4)
    g = sy.cos_mode(2, (1, 0), ex.action(1), kmax=4)
    br = sy.poisson_bracket(f, sy.cos_mode(2, (2, 1), ex.action(1), kmax=4))
    assert br.truncated
    with pytest.raises(sy.TruncationError):
        sy.poisson_bracket(f, sy.cos_mode(2, (2, 1), ex.action(1), kmax=4), on_overflow="fail")
    assert not sy.poisson_bracket(f, g).truncated


def test_seminorm_examples():
    grid = np.c_[np.geomspace(1, 1e6, 200), np.zeros(200)]
    est = sy.estimate_seminorm(sy.h0(2), 2, 0.75, 0, 0, grid)
    assert 0.49 < est.value <= 0.5
    assert sy.estimate_seminorm(SymbolFunction(2, {}), 1, 0.75, 0, 0, grid).value == 0.0
    f = sy.mode(2, (1, 0), ex.jac(), real=False)
    assert sy.estimate_seminorm(f, 1, 0.75, 0, 3, grid).value == pytest.approx(1.0)


def test_fit_order_examples():
    radii = sy.dyadic_radii(64.0, 256)
    assert sy.fit_order(sy.h0(2), radii) == pytest.approx(2.0, abs=0.05)
    f = sy.mode(2, (1, 0), ex.power(ex.jac(), -3.0))
    assert sy.fit_order(f, radii) == pytest.approx(-3.0, abs=0.05)
    g = sy.cos_mode(2, (1, 0), ex.action(1))
    assert sy.fit_order(g, radii) == pytest.approx(1.0, abs=0.05)
    with pytest.raises(ValueError):
        sy.fit_order(g, [1, 2])


def test_bracket_order_gain():
    from nekhlab.cutoffs import CutoffParams
    from nekhlab.cohomology import d_k_expr
    p = CutoffParams(0.75, 0.08)
    f = sy.cos_mode(2, (1, 0), ex.action(1))             # order 1
    g = SymbolFunction(2, {(0, 1): d_k_expr((0, 1), p), (0, -1): d_k_expr((0, -1), p)})  # order -delta
    radii = sy.dyadic_radii(2.0 ** 13, 64)
    m1, m2 = sy.fit_order(f, radii), sy.fit_order(g, radii)
    assert sy.fit_order(sy.poisson_bracket(f, g), radii) <= m1 + m2 - 0.75 + 0.1


@given(real_symbols())
@settings(max_examples=20)
def test_json_roundtrip(f):
    back = SymbolFunction.from_json(f.to_json())
    assert back == f


def test_grid_values_match_values(rng):
    f = sy.cos_mode(2, (1, -2), ex.mul(ex.T, ex.action(2))) + sy.h0(2)
    A = rng.uniform(-5, 5, (7, 2))
    PH = rng.uniform(0, 6, (5, 2))
    G = f.grid_values(A, 0.3, PH)
    for i in range(7):
        np.testing.assert_allclose(G[i], f.values(np.repeat(A[i:i + 1], 5, 0), PH, 0.3), rtol=1e-13)
