"""Coefficient expressions: hash-consed DAGs in the actions a_1..a_d and time t.

Every node is interned, so structurally equal subexpressions are the same
object and derivative/evaluation work is shared.  Differentiation is a
forward-mode source transformation: ``diff(e, "a2")`` returns a new DAG whose
nodes are built from ``e``'s nodes by the chain rule, and second derivatives
are obtained by differentiating again.

Text grammar (prefix notation, used by the JSON symbol format)::

    expr   := number | a1 .. ad | t | $N | "(" op expr* ")"
    op     := "+" | "*" | "^" | "exp" | "bump" | "bump:n" | "ibump" | "ibump:n"
              | "norm" | "jac"

``(^ x p)`` takes a real constant exponent, ``(norm)`` is |a|, ``(jac)`` is
<a> = sqrt(1 + |a|^2), ``(bump:n x)`` is the n-th derivative of the canonical
cutoff, ``(ibump:n x)`` the n-th derivative of (1 - chi(x)) / x.  Numbers are
anything ``complex()`` accepts (``-0.5``, ``2j``, ``(1-3j)``).  ``$N`` refers to
entry N of an accompanying ``defs`` list, which lets shared subexpressions be
written once.
"""
from __future__ import annotations

import itertools
import re
import sys
from typing import Iterable

import numpy as np

from .cutoffs import bump_ufunc, ibump_ufunc, MAX_JET_ORDER

sys.setrecursionlimit(max(sys.getrecursionlimit(), 20000))

_uid = itertools.count()
_TABLE: dict = {}
_DIFF: dict = {}
_CONJ: dict = {}
_FREE: dict = {}


class Expr:
    __slots__ = ("op", "args", "param", "uid", "is_real", "__weakref__")

    def __init__(self, op, args, param, is_real):
        self.op = op
        self.args = args
        self.param = param
        self.uid = next(_uid)
        self.is_real = is_real

    # arithmetic sugar
    def __add__(self, other):
        return add(self, as_expr(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __repr__(self):
        s = to_string(self)
        return f"Expr({s if len(s) < 200 else s[:200] + '...'})"

    @property
    def is_const(self):
        return self.op == "const"

    @property
    def is_zero(self):
        return self.op == "const" and self.param == 0

    def size(self) -> int:
        return len(topo_order([self]))


def _intern(op, args, param, is_real):
    key = (op, param, tuple(a.uid for a in args))
    node = _TABLE.get(key)
    if node is None:
        node = Expr(op, tuple(args), param, is_real)
        _TABLE[key] = node
    return node


def const(value) -> Expr:
    value = complex(value)
    if value.imag == 0:
        v = float(value.real) + 0.0  # folds -0.0
        return _intern("const", (), v, True)
    return _intern("const", (), complex(value.real + 0.0, value.imag + 0.0), False)


ZERO = const(0.0)
ONE = const(1.0)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return const(x)


def var(name: str) -> Expr:
    if name != "t" and not re.fullmatch(r"a[1-9][0-9]*", name):
        raise ValueError(f"unknown variable {name!r}")
    return _intern("var", (), name, True)


def action(j: int) -> Expr:
    """The action coordinate a_j (1-based)."""
    return var(f"a{j}")


T = var("t")


def norm() -> Expr:
    return _intern("norm", (), None, True)


def jac() -> Expr:
    return _intern("jac", (), None, True)


def add(*xs) -> Expr:
    terms = []
    c = 0.0
    stack = list(xs)
    while stack:
        x = as_expr(stack.pop())
        if x.op == "add":
            stack.extend(x.args)
        elif x.op == "const":
            c += x.param
        else:
            terms.append(x)
    if c != 0:
        terms.append(const(c))
    if not terms:
        return ZERO
    if len(terms) == 1:
        return terms[0]
    terms.sort(key=lambda e: e.uid)
    return _intern("add", terms, None, all(t.is_real for t in terms))


def mul(*xs) -> Expr:
    factors = []
    c = 1.0
    stack = list(xs)
    while stack:
        x = as_expr(stack.pop())
        if x.op == "mul":
            stack.extend(x.args)
        elif x.op == "const":
            c *= x.param
        else:
            factors.append(x)
    if c == 0:
        return ZERO
    if not factors:
        return const(c)
    factors.sort(key=lambda e: e.uid)
    if c != 1:
        factors.insert(0, const(c))
    if len(factors) == 1:
        return factors[0]
    return _intern("mul", factors, None, all(f.is_real for f in factors))


def neg(x) -> Expr:
    return mul(const(-1.0), x)


def power(x, p) -> Expr:
    x = as_expr(x)
    p = float(p)
    if p == 0:
        return ONE
    if p == 1:
        return x
    if x.op == "const":
        return const(np.power(x.param, p))
    if x.op == "pow" and x.args[0].op in ("norm", "jac"):
        return power(x.args[0], x.param * p)
    return _intern("pow", (x,), p, x.is_real)


def exp(x) -> Expr:
    x = as_expr(x)
    if x.op == "const":
        return const(np.exp(x.param))
    return _intern("exp", (x,), None, x.is_real)


def bump(x, order: int = 0) -> Expr:
    return _prim("bump", x, order)


def ibump(x, order: int = 0) -> Expr:
    return _prim("ibump", x, order)


def _prim(name, x, order):
    x = as_expr(x)
    order = int(order)
    if order > MAX_JET_ORDER:
        raise ValueError(f"{name} derivative order {order} exceeds {MAX_JET_ORDER}")
    if x.op == "const" and x.is_real:
        fn = bump_ufunc if name == "bump" else ibump_ufunc
        return const(float(fn(np.int64(order), float(x.param))))
    return _intern(name, (x,), order, x.is_real)


def dot(coeffs, exprs) -> Expr:
    return add(*(mul(c, e) for c, e in zip(coeffs, exprs) if c != 0))


# ---------------------------------------------------------------- analysis

def topo_order(roots: Iterable[Expr]) -> list:
    """Nodes reachable from ``roots``, children before parents."""
    seen = set()
    order = []
    for root in roots:
        if root.uid in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if node.uid in seen:
                continue
            seen.add(node.uid)
            stack.append((node, True))
            for ch in node.args:
                if ch.uid not in seen:
                    stack.append((ch, False))
    return order


def free_vars(e: Expr) -> frozenset:
    cached = _FREE.get(e.uid)
    if cached is not None:
        return cached
    for node in topo_order([e]):
        if node.uid in _FREE:
            continue
        if node.op == "var":
            fv = frozenset([node.param])
        elif node.op in ("norm", "jac"):
            fv = frozenset(["|a|"])
        else:
            fv = frozenset().union(*(_FREE[ch.uid] for ch in node.args)) if node.args else frozenset()
        _FREE[node.uid] = fv
    return _FREE[e.uid]


def depends_on(e: Expr, name: str) -> bool:
    fv = free_vars(e)
    if name in fv:
        return True
    return name.startswith("a") and "|a|" in fv


def diff(e: Expr, name: str) -> Expr:
    """Exact partial derivative of ``e`` in the variable ``name``."""
    key = (e.uid, name)
    hit = _DIFF.get(key)
    if hit is not None:
        return hit
    for node in topo_order([e]):
        k = (node.uid, name)
        if k in _DIFF:
            continue
        _DIFF[k] = _diff_node(node, name)
    return _DIFF[key]


def _diff_node(node: Expr, name: str) -> Expr:
    op = node.op
    if not depends_on(node, name):
        return ZERO
    if op == "var":
        return ONE if node.param == name else ZERO
    if op in ("norm", "jac"):
        return mul(var(name), power(node, -1.0))
    d = [_DIFF[(ch.uid, name)] for ch in node.args]
    if op == "add":
        return add(*d)
    if op == "mul":
        terms = []
        for i, di in enumerate(d):
            if di.is_zero:
                continue
            others = node.args[:i] + node.args[i + 1:]
            terms.append(mul(di, *others))
        return add(*terms)
    x, dx = node.args[0], d[0]
    if op == "pow":
        return mul(const(node.param), power(x, node.param - 1.0), dx)
    if op == "exp":
        return mul(node, dx)
    if op in ("bump", "ibump"):
        return mul(_prim(op, x, node.param + 1), dx)
    raise ValueError(f"cannot differentiate op {op!r}")


def conj(e: Expr) -> Expr:
    """Complex conjugate, assuming a and t are real."""
    if e.is_real:
        return e
    hit = _CONJ.get(e.uid)
    if hit is not None:
        return hit
    for node in topo_order([e]):
        if node.uid in _CONJ:
            continue
        if node.is_real:
            out = node
        elif node.op == "const":
            out = const(np.conj(node.param))
        else:
            args = [_CONJ[ch.uid] for ch in node.args]
            out = _rebuild(node, args)
        _CONJ[node.uid] = out
    return _CONJ[e.uid]


def _rebuild(node, args):
    op = node.op
    if op == "add":
        return add(*args)
    if op == "mul":
        return mul(*args)
    if op == "pow":
        return power(args[0], node.param)
    if op == "exp":
        return exp(args[0])
    if op in ("bump", "ibump"):
        return _prim(op, args[0], node.param)
    raise ValueError(op)


# --------------------------------------------------------------- evaluation

def evaluate_many(exprs, a, t=0.0) -> list:
    """Evaluate several expressions on the same points, sharing subresults.

    ``a`` has shape (n, d) (or (d,)), ``t`` is a scalar or shape (n,).
    Returns one array of shape (n,) per expression (complex unless real).
    """
    a = np.asarray(a, dtype=float)
    single = a.ndim == 1
    a2 = a[None, :] if single else a
    n = a2.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    memo = {}
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for node in topo_order(exprs):
            memo[node.uid] = _eval_node(node, memo, a2, t)
    out = []
    for e in exprs:
        v = memo[e.uid]
        v = np.broadcast_to(v, (n,)) if np.ndim(v) == 0 else v
        out.append(v[0] if single else v)
    return out


def evaluate(e: Expr, a, t=0.0):
    return evaluate_many([e], a, t)[0]


def _eval_node(node, memo, a, t):
    op = node.op
    if op == "const":
        return node.param
    if op == "var":
        if node.param == "t":
            return t
        j = int(node.param[1:]) - 1
        if j >= a.shape[1]:
            raise ValueError(f"variable {node.param} used with d={a.shape[1]}")
        return a[:, j]
    if op == "norm":
        return np.sqrt(np.einsum("ij,ij->i", a, a))
    if op == "jac":
        return np.sqrt(1.0 + np.einsum("ij,ij->i", a, a))
    vals = [memo[ch.uid] for ch in node.args]
    if op == "add":
        acc = vals[0]
        for v in vals[1:]:
            acc = acc + v
        return acc
    if op == "mul":
        acc = vals[0]
        for v in vals[1:]:
            acc = acc * v
        return acc
    x = vals[0]
    if op == "pow":
        p = node.param
        if p == -1.0:
            return 1.0 / x
        if p == 2.0:
            return x * x
        return np.power(x, p)
    if op == "exp":
        return np.exp(x)
    if op in ("bump", "ibump"):
        fn = bump_ufunc if op == "bump" else ibump_ufunc
        if np.iscomplexobj(x):
            x = np.real(x)
        return fn(np.int64(node.param), np.asarray(x, dtype=float))
    raise ValueError(f"unknown op {op!r}")


# ----------------------------------------------------------------- grammar

def _fmt_number(v) -> str:
    if isinstance(v, complex):
        return repr(v).replace(" ", "")
    return repr(float(v))


def to_string(e: Expr, refs: dict | None = None) -> str:
    """Prefix-notation text; nodes listed in ``refs`` (uid -> index) print as $N."""
    refs = refs or {}
    text = {}
    for node in topo_order([e]):
        if node.uid in refs and node is not e:
            text[node.uid] = f"${refs[node.uid]}"
            continue
        op = node.op
        if op == "const":
            s = _fmt_number(node.param)
        elif op == "var":
            s = node.param
        elif op in ("norm", "jac"):
            s = f"({op})"
        else:
            inner = " ".join(text[ch.uid] for ch in node.args)
            if op == "add":
                s = f"(+ {inner})"
            elif op == "mul":
                s = f"(* {inner})"
            elif op == "pow":
                s = f"(^ {inner} {_fmt_number(node.param)})"
            elif op == "exp":
                s = f"(exp {inner})"
            else:
                name = op if node.param == 0 else f"{op}:{node.param}"
                s = f"({name} {inner})"
        if node.uid in refs and node is not e:
            s = f"${refs[node.uid]}"
        text[node.uid] = s
    return text[e.uid]


def shared_defs(roots) -> tuple:
    """Pick nodes used more than once (non-leaf) and return (defs, refs).

    ``defs`` is a list of strings (each may reference earlier entries),
    ``refs`` maps node uid -> index into ``defs``.
    """
    order = topo_order(roots)
    uses = {}
    for node in order:
        for ch in node.args:
            uses[ch.uid] = uses.get(ch.uid, 0) + 1
    refs = {}
    defs = []
    for node in order:
        if node.args and uses.get(node.uid, 0) > 1:
            defs.append(to_string(node, refs))
            refs[node.uid] = len(defs) - 1
    return defs, refs


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse(text: str, defs: list | None = None) -> Expr:
    """Parse the prefix grammar; ``defs`` are already-parsed shared nodes."""
    tokens = _TOKEN.findall(text)
    pos = 0

    def atom(tok):
        if tok.startswith("$"):
            if defs is None:
                raise ValueError(f"reference {tok} without defs")
            return defs[int(tok[1:])]
        if tok == "t" or re.fullmatch(r"a[1-9][0-9]*", tok):
            return var(tok)
        try:
            return const(complex(tok))
        except ValueError:
            raise ValueError(f"bad token {tok!r}") from None

    def walk():
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError("unexpected end of expression")
        tok = tokens[pos]
        pos += 1
        if tok == ")":
            raise ValueError("unexpected ')'")
        if tok != "(":
            return atom(tok)
        if pos < len(tokens) and tokens[pos] == "(":
            # parenthesised complex literal such as (1-3j)
            raise ValueError("operator expected after '('")
        head = tokens[pos]
        pos += 1
        if re.fullmatch(r"[-+0-9.eEj]+", head) and head not in ("+",):
            # '(1-3j)' style literal
            if tokens[pos] != ")":
                raise ValueError(f"bad literal near {head!r}")
            pos += 1
            return const(complex(head))
        args = []
        while True:
            if pos >= len(tokens):
                raise ValueError("missing ')'")
            if tokens[pos] == ")":
                pos += 1
                break
            args.append(walk())
        return _apply(head, args)

    out = walk()
    if pos != len(tokens):
        raise ValueError("trailing tokens in expression")
    return out


def _apply(head, args):
    if head == "+":
        return add(*args)
    if head == "*":
        return mul(*args)
    if head == "^":
        if len(args) != 2 or not args[1].is_const:
            raise ValueError("(^ x p) needs a constant exponent")
        return power(args[0], complex(args[1].param).real)
    if head == "exp":
        return exp(*args)
    if head in ("norm", "jac"):
        if args:
            raise ValueError(f"({head}) takes no arguments")
        return norm() if head == "norm" else jac()
    m = re.fullmatch(r"(bump|ibump)(?::(\d+))?", head)
    if m:
        if len(args) != 1:
            raise ValueError(f"({head} x) takes one argument")
        return _prim(m.group(1), args[0], int(m.group(2) or 0))
    raise ValueError(f"unknown operator {head!r}")
