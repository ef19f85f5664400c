import json

import numpy as np
import pytest

from nekhlab import expr as ex
from nekhlab import symbols as sy
from nekhlab.symbols import PhasePoint, SymbolFunction
from nekhlab.dynamics import (HamiltonianSystem, EMField, em_system, em_example, Integrator,
                              IntegratorSettings, integrate, reverse_system, Trajectory,
                              sample_steps, FixedPointDivergence, RuntimeBudgetExceeded,
                              transformed_initial_datum, original_coordinates)

ZERO = SymbolFunction(2, {})


def _pt(a, phi=(0.1, 0.2), t=0.0):
    return PhasePoint(np.array(a, float), np.array(phi, float), t)


def test_em_system_examples(em, rng):
    assert em_system(EMField((ZERO, ZERO), ZERO)).P.is_zero
    A = rng.uniform(-50, 50, (100, 2))
    PH = rng.uniform(0, 2 * np.pi, (100, 2))
    t = 0.9
    c = np.cos(PH[:, 0] - t)
    np.testing.assert_allclose(em.P.values(A, PH, t), -A[:, 0] * c + c ** 2 / 2, atol=1e-12)
    assert em.P.time_dependent()
    assert em.perturbation_order(sy.dyadic_radii(2.0 ** 10, 64)) == pytest.approx(1.0, abs=0.05)
    with pytest.raises(ValueError):
        EMField((sy.cos_mode(2, (1, 0), ex.action(1)), ZERO), ZERO)


def test_system_json_roundtrip(em):
    back = HamiltonianSystem.from_json(em.to_json())
    assert back.P == em.P
    doc = {"field": EMField((sy.cos_mode(2, (1, 0), 1.0), ZERO), ZERO).to_dict()}
    assert HamiltonianSystem.from_dict(json.loads(json.dumps(doc))).d == 2
    with pytest.raises(ValueError):
        HamiltonianSystem.from_dict({})


def test_free_motion_exact():
    st = _pt([3.0, -1.5])
    tr = integrate(HamiltonianSystem(ZERO), st, 1e4, dt=0.01, n_samples=200)
    assert tr.audit["steps"] == 10 ** 6
    assert np.abs(tr.actions - st.actions).max() <= 1e-13
    expect = np.mod(st.angles + tr.times[:, None] * st.actions, 2 * np.pi)
    diff = np.abs(np.angle(np.exp(1j * (tr.angles - expect))))
    assert diff.max() <= 1e-7
    assert tr.sup.max() == pytest.approx(np.linalg.norm(st.actions))


def test_energy_no_secular_drift():
    P = sy.cos_mode(2, (1, 0), ex.mul(0.5, ex.action(2))) + sy.cos_mode(2, (1, -1), 1.0)
    tr = integrate(HamiltonianSystem(P), _pt([1.0, 0.5]), 1e4, dt=0.01, n_samples=4000, spacing="uniform")
    err = np.abs(tr.H - tr.H[0])
    half = err.size // 2
    assert err.max() < 1e-3
    assert err[half:].max() <= 1.5 * err[:half].max()


def test_reversibility(em):
    st = _pt([20.0, 3.0])
    I = Integrator(em.H)
    fw = I.run(st, 10.0, IntegratorSettings(dt=0.01, n_samples=10))
    end = fw.point(len(fw) - 1)
    back = Integrator(reverse_system(em.H)).run(PhasePoint(end.actions, end.angles, -10.0), 0.0,
                                                IntegratorSettings(dt=0.01, n_samples=10))
    fin = back.point(len(back) - 1)
    assert np.abs(fin.actions - st.actions).max() <= 100 * 1e-14 * 20
    dphi = np.angle(np.exp(1j * (fin.angles - st.angles)))
    assert np.abs(dphi).max() <= 100 * 1e-14 * 20


def test_second_order_convergence(em):
    st = _pt([5.0, 1.0])
    I = Integrator(em.H)
    end = lambda dt: I.run(st, 2.0, IntegratorSettings(dt=dt, n_samples=2, n_audits=0)).audit["final_state"]
    ref = np.array(end(1e-4))
    e1 = np.abs(np.array(end(0.02)) - ref)[:2].max()
    e2 = np.abs(np.array(end(0.01)) - ref)[:2].max()
    assert 3.5 < e1 / e2 < 4.5


def test_step_symplectic_on_random_em_systems(rng):
    for _ in range(3):
        A1 = sy.trig_time(2, (1, int(rng.integers(-2, 3))), float(rng.uniform(0.2, 1.5)), float(rng.uniform(0.5, 2)))
        V = sy.cos_mode(2, (0, 1), float(rng.uniform(-1, 1)))
        I = Integrator(em_system(EMField((A1, ZERO), V)).H)
        z = np.r_[rng.uniform(-30, 30, 2), rng.uniform(0, 6, 2)]
        assert I.symplectic_defect(z, 0.3, 0.01) <= 1e-8


def test_audit_and_halving(em):
    tr = Integrator(em.H).run(_pt([200.0, 3.0]), 10.0,
                              IntegratorSettings(dt=0.02, maxit=6, n_samples=10, n_audits=2))
    assert tr.audit["halvings"] > 0 and tr.audit["symplectic_ok"]
    assert len(tr.audit["symplectic_defects"]) == 2


def test_divergence_raises(em):
    with pytest.raises(FixedPointDivergence):
        Integrator(em.H).run(_pt([1e6, 3.0]), 100.0, IntegratorSettings(dt=5.0, maxit=2, max_halvings=0))


def test_runtime_budget(em):
    with pytest.raises(RuntimeBudgetExceeded):
        Integrator(em.H).run(_pt([20.0, 3.0]), 1e5, IntegratorSettings(n_audits=50, max_seconds=1e-6))


def test_sample_steps():
    assert np.array_equal(sample_steps(5, 100), np.arange(6))
    s = sample_steps(10 ** 6, 100, "log")
    assert s[0] == 0 and s[-1] == 10 ** 6 and np.all(np.diff(s) > 0)
    u = sample_steps(1000, 11, "uniform")
    assert np.array_equal(u, np.arange(0, 1001, 100))
    with pytest.raises(ValueError):
        sample_steps(1000, 10, "cubic")


def test_trajectory_csv_roundtrip(em, tmp_path):
    tr = integrate(em, _pt([20.0, 3.0]), 5.0, n_samples=50)
    tr.to_csv(tmp_path / "t.csv")
    head = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert head == "t,a1,a2,phi1,phi2,sup_norm_a,H"
    back = Trajectory.from_csv(tmp_path / "t.csv")
    for name in ("times", "actions", "angles", "sup", "H"):
        assert np.array_equal(getattr(back, name), getattr(tr, name))
    tr.to_csv(tmp_path / "u.csv")
    assert (tmp_path / "t.csv").read_bytes() == (tmp_path / "u.csv").read_bytes()


def test_transformed_initial_datum(em):
    from nekhlab.cutoffs import CutoffParams
    from nekhlab.cohomology import normal_form
    st = _pt([300.0, 40.0], t=0.5)
    assert transformed_initial_datum([], st) is st
    nf = normal_form((em.h0, em.P), CutoffParams(), beta=1.0, max_steps=1)
    new = transformed_initial_datum(nf, st)
    old = original_coordinates(nf, new)
    assert np.abs(old.actions - st.actions).max() <= 1e-8
    assert np.linalg.norm(new.actions - st.actions) <= 2 * 300.0 ** (1 - 0.75) + 2
