import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nekhlab.cutoffs import CutoffParams, chi, ibump, chi_res, chi_uv, d_k, resonance_ratio
from nekhlab import symbols as sy
from nekhlab import expr as ex
from nekhlab.cohomology import d_k_expr, chi_res_expr, chi_uv_expr

P = CutoffParams(0.75, 0.08)


def test_chi_examples():
    assert chi(0.25) == 1.0
    assert chi(1.5) == 0.0
    assert chi(0.5) == 1.0 and chi(1.0) == 0.0


@given(st.floats(-3, 3))
def test_chi_symmetric_bounded(x):
    assert chi(x) == chi(-x)
    assert 0.0 <= chi(x) <= 1.0


def test_chi_monotone_on_transition():
    x = np.linspace(0.5, 1.0, 2001)
    assert np.all(np.diff(chi(x)) <= 0)


def test_chi_second_differences_bounded():
    h = 1e-4
    x = np.linspace(-1.2, 1.2, 20001)
    d2 = (chi(x + h) - 2 * chi(x) + chi(x - h)) / h ** 2
    assert np.all(np.isfinite(d2)) and np.abs(d2).max() < 100


def test_ibump_is_one_minus_chi_over_x():
    x = np.array([-3.0, -0.9, -0.7, 0.6, 0.8, 2.0])
    np.testing.assert_allclose(ibump(x), (1 - chi(x)) / x, rtol=1e-13)
    assert ibump(0.0) == 0.0


def test_params_validation():
    with pytest.raises(ValueError, match="must exceed 2/3"):
        CutoffParams(0.5, 0.01)
    with pytest.raises(ValueError):
        CutoffParams(0.75, 0.0)
    with pytest.raises(ValueError):
        CutoffParams(0.75, 0.1).validate(3)
    CutoffParams(0.75, 0.02).validate(3)


def test_chi_res_examples():
    assert chi_res((10.0, 0.0), (0, 1), P) == 1.0
    assert chi_res((10.0, 0.0), (1, 0), P) == 0.0


def test_chi_res_transition_smooth():
    # first differences across the transition stay bounded
    a1 = np.linspace(1, 10, 4001)
    A = np.c_[a1, np.full_like(a1, 40.0)]
    v = chi_res(A, (1, 0), P)
    assert np.abs(np.diff(v) / np.diff(a1)).max() < 5


def test_chi_uv_examples():
    assert chi_uv((1e30, 0.0), (1, 0), P) == 1.0
    a = (2.0, 0.0)
    assert chi_uv(a, (3, 0), P) == 0.0  # |k| > |a|^mu
    p = CutoffParams(0.75, 0.02)
    n = math.exp(100.0)
    v = chi_uv((n, 0.0), (5, 0), p)
    ratio = 5 / n ** 0.02
    assert (0 < v < 1) == (0.5 < ratio < 1)


def test_d_k_examples(rng):
    assert d_k((10.0, 0.0), (0, 1), P) == 0.0
    assert d_k((100.0, 0.0), (1, 0), P) == pytest.approx(0.01, rel=1e-14)
    A = rng.uniform(-1e3, 1e3, (10_000, 2))
    K = rng.integers(-6, 7, (10_000, 2))
    K[~K.any(axis=1)] = (1, 0)
    vals = np.array([d_k(a, k, P) for a, k in zip(A, K)])
    bound = 2 * np.linalg.norm(A, axis=1) ** -0.75 / np.linalg.norm(K, axis=1)
    assert np.all(np.abs(vals) <= bound * (1 + 1e-12))


def _coeff_symbol(e):
    return sy.from_coefficient(2, e)


def test_symbol_classes():
    radii = sy.dyadic_radii(2.0 ** 13, 64)
    k = (1, 0)
    d = sy.SymbolFunction(2, {k: d_k_expr(k, P)})
    assert sy.fit_order(d, radii) <= -0.75 + 0.1
    for e in (chi_res_expr(k, P), chi_uv_expr(k, P)):
        f = sy.SymbolFunction(2, {k: e})
        vals = f.values(np.c_[radii, radii * 0.3], np.zeros((radii.size, 2)))
        assert np.all((vals >= -1e-15) & (vals <= 1 + 1e-15))
        assert sy.fit_order(f, radii) <= 0.1


def test_expression_cutoffs_match_numeric(rng):
    A = rng.uniform(-500, 500, (200, 2))
    for k in [(1, 0), (1, -2), (3, 1)]:
        vals = ex.evaluate(d_k_expr(k, P), A)
        np.testing.assert_allclose(vals, [d_k(a, k, P) for a in A], rtol=1e-12, atol=1e-300)
        vals = ex.evaluate(chi_res_expr(k, P), A)
        np.testing.assert_allclose(vals, chi(resonance_ratio(A, k, P)), atol=1e-14)
