"""Shared test helpers: independent oracles and random expression trees."""

from fractions import Fraction

import numpy as np
import pytest
import sympy as sp

from sdesym import expr as ex


# ---------------------------------------------------------------------------
# sympy bridge (independent symbolic oracle)

def to_sympy(e):
    k = e.kind
    if k == ex.CONST:
        v = e.value
        if isinstance(v, Fraction):
            return sp.Rational(v.numerator, v.denominator)
        return sp.Float(v, 17)
    if k in (ex.VAR, ex.PARAM):
        return sp.Symbol(e.name)
    args = [to_sympy(c) for c in e.children]
    if k == ex.SUM:
        return sp.Add(*args)
    if k == ex.PRODUCT:
        return sp.Mul(*args)
    if k == ex.POWER:
        return sp.Pow(args[0], args[1])
    if k == ex.QUOTIENT:
        return args[0] / args[1]
    if k == ex.EXP:
        return sp.exp(args[0])
    if k == ex.LOG:
        return sp.log(args[0])
    if k == ex.NEG:
        return -args[0]
    raise AssertionError(f"unhandled kind {k}")


def collection_nullspace_dim(residuals, unknowns, param_values=None):
    """Exhaustive symbolic coefficient collection: expand each residual,
    write it as sum_k c_k * E_k(t, x), decompose every E_k into canonical
    (monomial x exponential) terms, and equate the per-term coefficients to
    zero.  Returns the exact nullspace dimension of that linear system."""
    param_values = param_values or {}
    cs = [sp.Symbol(u) for u in unknowns]
    subs = {sp.Symbol(k): sp.nsimplify(v) for k, v in param_values.items()}
    rows = {}
    for ridx, res in enumerate(residuals):
        expr = sp.expand(to_sympy(res).subs(subs))
        const_part = expr.subs({c: 0 for c in cs})
        assert sp.simplify(const_part) == 0, "oracle expects homogeneous systems"
        for k, c in enumerate(cs):
            coeff_fn = sp.expand(sp.diff(expr, c))
            assert not coeff_fn.free_symbols & set(cs), "system is not affine"
            for term in sp.Add.make_args(coeff_fn):
                num, fn = term.as_coeff_Mul()
                key = (ridx, sp.srepr(fn))
                if key not in rows:
                    rows[key] = [sp.Integer(0)] * len(cs)
                rows[key][k] += num
    if not rows:
        return len(unknowns)
    M = sp.Matrix(list(rows.values()))
    return len(M.nullspace())


# ---------------------------------------------------------------------------
# random expression trees (grammar-shaped, kept away from singularities)

LEAVES = ("t", "x", "a", 1, 2, 3, Fraction(1, 2), 0.7)


def random_expr(rng: np.random.Generator, depth: int):
    if depth <= 0 or rng.random() < 0.25:
        leaf = LEAVES[rng.integers(len(LEAVES))]
        if leaf == "t" or leaf == "x":
            return ex.var(leaf)
        if leaf == "a":
            return ex.param("a")
        return ex.const(leaf)
    kind = rng.integers(7)
    if kind == 0:
        return ex.add(random_expr(rng, depth - 1), random_expr(rng, depth - 1))
    if kind == 1:
        return ex.mul(random_expr(rng, depth - 1), random_expr(rng, depth - 1))
    if kind == 2:
        return ex.pow_(random_expr(rng, depth - 1), ex.const(int(rng.integers(2, 4))))
    if kind == 3:
        den = (ex.var("x"), ex.add(ex.var("t"), ex.const(1)),
               ex.const(2))[rng.integers(3)]
        return ex.div(random_expr(rng, depth - 1), den)
    if kind == 4:
        arg = ex.mul(ex.const(Fraction(rng.integers(-2, 3), 2)),
                     (ex.var("t"), ex.var("x"))[rng.integers(2)])
        return ex.exp(arg)
    if kind == 5:
        arg = (ex.var("x"), ex.add(ex.var("t"), ex.const(2)))[rng.integers(2)]
        return ex.log(arg)
    return ex.negate(random_expr(rng, depth - 1))


def random_point(rng: np.random.Generator):
    return {"t": float(rng.uniform(0.3, 1.5)),
            "x": float(rng.uniform(0.6, 1.8)),
            "a": float(rng.uniform(0.5, 1.5))}


def horner(coeffs, x: float) -> float:
    """Independent polynomial evaluation, highest degree first."""
    acc = 0.0
    for c in coeffs:
        acc = acc * x + c
    return acc


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
