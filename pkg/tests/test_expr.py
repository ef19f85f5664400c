import numpy as np
import pytest
from hypothesis import given, strategies as st

from nekhlab import expr as ex


def test_interning_shares_nodes():
    a = ex.mul(ex.action(1), ex.jac())
    b = ex.mul(ex.action(1), ex.jac())
    assert a is b


def test_constant_folding():
    assert ex.add(1.0, 2.0).param == 3.0
    assert ex.mul(ex.ZERO, ex.action(1)).is_zero
    assert ex.mul(ex.ONE, ex.action(1)) is ex.action(1)


@pytest.mark.parametrize("build", [
    lambda a1, a2: ex.mul(a1, ex.power(ex.jac(), -3.0)),
    lambda a1, a2: ex.exp(ex.mul(-0.1, a1, a2)),
    lambda a1, a2: ex.bump(ex.mul(0.2, a1)),
    lambda a1, a2: ex.ibump(ex.mul(ex.add(a1, a2), ex.power(ex.norm(), -0.75))),
    lambda a1, a2: ex.mul(ex.T, ex.power(ex.add(a1, 3.0), 2.5)),
])
def test_derivatives_match_finite_differences(build, rng):
    e = build(ex.action(1), ex.action(2))
    A = rng.uniform(0.5, 8, (300, 2))
    t = 0.7
    h = 1e-5
    for name, j in (("a1", 0), ("a2", 1)):
        de = ex.evaluate(ex.diff(e, name), A, t)
        E = np.zeros(2)
        E[j] = h
        fd = (ex.evaluate(e, A + E, t) - ex.evaluate(e, A - E, t)) / (2 * h)
        np.testing.assert_allclose(de, fd, rtol=1e-6, atol=1e-8)
    dt = ex.evaluate(ex.diff(e, "t"), A, t)
    fd = (ex.evaluate(e, A, t + h) - ex.evaluate(e, A, t - h)) / (2 * h)
    np.testing.assert_allclose(dt, fd, rtol=1e-6, atol=1e-8)


def test_second_derivative_exact():
    e = ex.power(ex.action(1), 3.0)
    d2 = ex.diff(ex.diff(e, "a1"), "a1")
    np.testing.assert_allclose(ex.evaluate(d2, np.array([[2.0, 0.0]])), [12.0])


def test_jac_and_norm_derivatives():
    A = np.array([[3.0, 4.0]])
    assert ex.evaluate(ex.diff(ex.norm(), "a1"), A)[0] == pytest.approx(0.6)
    assert ex.evaluate(ex.diff(ex.jac(), "a2"), A)[0] == pytest.approx(4 / np.sqrt(26))


def test_depends_on():
    e = ex.mul(ex.T, ex.norm())
    assert ex.depends_on(e, "t") and ex.depends_on(e, "a2")
    assert not ex.depends_on(ex.action(1), "t")


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_text_roundtrip(x, y):
    e = ex.add(ex.mul(x, ex.action(1)), ex.exp(ex.mul(y, ex.T)), ex.ibump(ex.action(2), 1))
    s = ex.to_string(e)
    assert ex.parse(s) is e


def test_shared_defs_roundtrip():
    sub = ex.power(ex.jac(), -0.5)
    e1 = ex.mul(sub, ex.action(1))
    e2 = ex.add(sub, ex.action(2))
    defs, refs = ex.shared_defs([e1, e2])
    assert defs
    parsed = []
    for text in defs:
        parsed.append(ex.parse(text, parsed))
    assert ex.parse(ex.to_string(e1, refs), parsed) is e1


def test_parse_errors():
    with pytest.raises(ValueError):
        ex.parse("(+ a1")
    with pytest.raises(ValueError):
        ex.parse("(foo a1)")
    with pytest.raises(ValueError):
        ex.parse("$0")
