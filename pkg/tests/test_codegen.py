import numpy as np
import pytest

from nekhlab import symbols as sy
from nekhlab.codegen import compile_symbols, compile_hamiltonian, hamiltonian_fields

from strategies import random_symbol


def test_compiled_values_match_symbols(rng):
    fs = [random_symbol(rng, n_modes=5, kbound=3) for _ in range(3)]
    cs = compile_symbols(fs, 2)
    A = rng.uniform(-30, 30, (200, 2))
    PH = rng.uniform(0, 2 * np.pi, (200, 2))
    T = rng.uniform(-2, 2, 200)
    out = cs(A, PH, T)
    for i, f in enumerate(fs):
        ref = f.values(A, PH, T)
        np.testing.assert_allclose(out[:, i], ref, rtol=1e-12, atol=1e-12 * (1 + np.abs(ref).max()))


def test_hamiltonian_fields_and_cache(em):
    H = em.H
    cs = compile_hamiltonian(H)
    assert cs is compile_hamiltonian(H)
    assert cs.m == 1 + 2 * H.d
    A = np.array([[20.0, 3.0]])
    PH = np.array([[0.4, 1.2]])
    vals = cs(A, PH, 0.3)[0]
    ref = [f.values(A, PH, 0.3)[0] for f in hamiltonian_fields(H)]
    np.testing.assert_allclose(vals, ref, rtol=1e-13)


def test_compile_rejects_bad_input():
    with pytest.raises(ValueError):
        compile_symbols([])
    with pytest.raises(ValueError):
        compile_symbols([sy.mode(2, (1, 0), 1.0)])
    with pytest.raises(ValueError):
        compile_symbols([sy.h0(2), sy.h0(3)])
