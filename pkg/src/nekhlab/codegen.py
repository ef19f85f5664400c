"""Compile lists of real symbols into numba kernels.

``compile_symbols([f_1, .., f_m], d)`` emits straight-line source for one
phase point (every DAG node becomes a local), compiles it with numba and
returns a :class:`CompiledSymbols` holding

* ``scalar(a, phi, t, out)`` writing Re f_i(a, phi, t) into out[i];
* ``batch(A, PHI, T, OUT)`` looping the scalar kernel over rows.

Kernels are cached per tuple of symbol keys for the life of the process.
"""
from __future__ import annotations

import cmath
import math
import threading

import numpy as np
from numba import njit

from . import expr as ex
from .cutoffs import bump_scalar, ibump_scalar
from .symbols import SymbolFunction

_CACHE: dict = {}
_LOCK = threading.Lock()


def _lit(v, real):
    if real:
        return repr(float(complex(v).real))
    v = complex(v)
    return f"complex({v.real!r}, {v.imag!r})"


def _source(fields, d, name="kernel"):
    roots = [e for f in fields for _, e in f.items()]
    order = ex.topo_order(roots)
    lines = [f"def {name}(a, phi, t, out):"]
    for j in range(d):
        lines.append(f"    a{j + 1} = a[{j}]")
    lines.append("    nrm2 = " + " + ".join(f"a{j + 1} * a{j + 1}" for j in range(d)))
    lines.append("    nrm = math.sqrt(nrm2)")
    lines.append("    jac = math.sqrt(1.0 + nrm2)")
    var = {}
    for node in order:
        v = f"v{node.uid}"
        op = node.op
        if op == "const":
            rhs = _lit(node.param, node.is_real)
        elif op == "var":
            rhs = "t" if node.param == "t" else node.param
        elif op == "norm":
            rhs = "nrm"
        elif op == "jac":
            rhs = "jac"
        else:
            args = [var[ch.uid] for ch in node.args]
            if op == "add":
                rhs = " + ".join(args)
            elif op == "mul":
                rhs = " * ".join(args)
            elif op == "pow":
                p = node.param
                x = args[0]
                if p == 2.0:
                    rhs = f"{x} * {x}"
                elif p == -1.0:
                    rhs = f"1.0 / {x}"
                elif p == 0.5:
                    rhs = f"math.sqrt({x})" if node.args[0].is_real else f"cmath.sqrt({x})"
                else:
                    rhs = f"{x} ** {float(p)!r}"
            elif op == "exp":
                rhs = f"math.exp({args[0]})" if node.args[0].is_real else f"cmath.exp({args[0]})"
            elif op in ("bump", "ibump"):
                x = args[0] if node.args[0].is_real else f"({args[0]}).real"
                fn = "bump_scalar" if op == "bump" else "ibump_scalar"
                rhs = f"{fn}({int(node.param)}, {x})"
            else:  # pragma: no cover - grammar is closed
                raise ValueError(f"unsupported op {op}")
        lines.append(f"    {v} = {rhs}")
        var[node.uid] = v
    # Fourier factors, one per distinct mode
    modes = sorted({k for f in fields for k, _ in f.items() if any(k)})
    for idx, k in enumerate(modes):
        arg = " + ".join(f"{float(kj)!r} * phi[{j}]" for j, kj in enumerate(k) if kj)
        lines.append(f"    th{idx} = {arg}")
        lines.append(f"    e{idx} = complex(math.cos(th{idx}), math.sin(th{idx}))")
    mid = {k: idx for idx, k in enumerate(modes)}
    for i, f in enumerate(fields):
        terms = []
        for k, e in f.items():
            ve = var[e.uid]
            if any(k):
                terms.append(f"({ve} * e{mid[k]}).real")
            else:
                terms.append(f"({ve}).real" if not e.is_real else ve)
        lines.append(f"    out[{i}] = " + (" + ".join(terms) if terms else "0.0"))
    lines.append("    return 0")
    return "\n".join(lines) + "\n"


class CompiledSymbols:
    def __init__(self, fields, d, scalar, batch, source):
        self.fields = tuple(fields)
        self.d = d
        self.m = len(fields)
        self.scalar = scalar
        self.batch = batch
        self.source = source

    def __call__(self, A, PHI, T=0.0) -> np.ndarray:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        PHI = np.atleast_2d(np.asarray(PHI, dtype=float))
        T = np.ascontiguousarray(np.broadcast_to(np.asarray(T, dtype=float), (A.shape[0],)))
        out = np.empty((A.shape[0], self.m))
        self.batch(np.ascontiguousarray(A), np.ascontiguousarray(PHI), T, out)
        return out


def _make_batch(kernel):
    @njit
    def batch(A, PHI, T, OUT):
        for i in range(A.shape[0]):
            kernel(A[i], PHI[i], T[i], OUT[i])
    return batch


def compile_symbols(fields, d: int | None = None) -> CompiledSymbols:
    fields = list(fields)
    if not fields:
        raise ValueError("nothing to compile")
    d = d or fields[0].d
    for f in fields:
        if not isinstance(f, SymbolFunction) or f.d != d:
            raise ValueError("all fields must be SymbolFunctions of the same dimension")
        if not f.real:
            raise ValueError("only real symbols can be compiled")
    key = (d, tuple(f.key() for f in fields))
    with _LOCK:
        hit = _CACHE.get(key)
    if hit is not None:
        return hit
    src = _source(fields, d)
    ns = {"math": math, "cmath": cmath, "bump_scalar": bump_scalar, "ibump_scalar": ibump_scalar}
    exec(compile(src, f"<nekhlab-kernel-{len(_CACHE)}>", "exec"), ns)
    scalar = njit(fastmath=False)(ns["kernel"])
    batch = _make_batch(scalar)
    cs = CompiledSymbols(fields, d, scalar, batch, src)
    with _LOCK:
        _CACHE[key] = cs
    return cs


def hamiltonian_fields(H: SymbolFunction) -> list:
    """[H, dH/da_1..d, dH/dphi_1..d]."""
    d = H.d
    return [H] + [H.derive_action(j) for j in range(1, d + 1)] + \
        [H.derive_angle(j) for j in range(1, d + 1)]


def compile_hamiltonian(H: SymbolFunction) -> CompiledSymbols:
    return compile_symbols(hamiltonian_fields(H), H.d)
