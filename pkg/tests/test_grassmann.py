import numpy as np
import pytest
from hypothesis import given, strategies as st

from susylangevin.grassmann import (
    Derivation,
    GrassmannPoly,
    Kind,
    SuperFunction,
    apply_derivation,
    c,
    canonicalize,
    cbar,
    compose_square,
    left_derivative,
    monomial_basis,
    multiply,
    random_test_function,
)

GENS = [c(1, 1), c(1, 2), c(2, 1), cbar(1, 1), cbar(1, 2), cbar(2, 1)]
gen_st = st.sampled_from(GENS)
mono_st = st.lists(gen_st, max_size=4)


def poly_st():
    return st.dictionaries(mono_st.map(tuple), st.floats(-3, 3, allow_nan=False), max_size=5).map(GrassmannPoly)


def gp(g):
    return GrassmannPoly.generator(g)


def test_square_of_generator_vanishes():
    assert (gp(c(1, 1)) * gp(c(1, 1))).is_zero()


def test_anticommutation():
    a, b = gp(c(1, 1)), gp(cbar(1, 2))
    assert a * b == -(b * a)


def test_canonical_order_and_sign():
    sign, key = canonicalize([cbar(1, 1), c(1, 1)])
    assert key == (c(1, 1), cbar(1, 1)) and sign == -1
    assert canonicalize([c(1, 1), c(1, 1)]) is None


def test_four_term_product():
    p = GrassmannPoly.product_of([cbar(2, 1), c(1, 2), cbar(1, 1), c(1, 1)])
    # moving c(1,1) to the front takes 3 swaps, c(1,2) then 2 more: sign (-1)^... checked by reordering
    q = gp(cbar(2, 1)) * gp(c(1, 2)) * gp(cbar(1, 1)) * gp(c(1, 1))
    assert p == q
    assert p.coefficient([c(1, 1), c(1, 2), cbar(1, 1), cbar(2, 1)]) in (1.0, -1.0)


@given(poly_st(), poly_st(), poly_st())
def test_product_associative(p, q, r):
    lhs, rhs = (p * q) * r, p * (q * r)
    assert (lhs - rhs).max_abs() < 1e-9


@given(poly_st(), poly_st())
def test_graded_commutativity(p, q):
    # even parts commute with everything
    pe = sum((p.part(d) for d in p.degrees() if d % 2 == 0), GrassmannPoly.zero())
    assert (pe * q - q * pe).max_abs() < 1e-9


@given(poly_st(), poly_st(), gen_st)
def test_left_derivative_leibniz(p, q, g):
    # d(pq) = (dp) q + (-1)^{|p|} p (dq) on homogeneous p
    for d in p.degrees():
        pd = p.part(d)
        lhs = left_derivative(pd * q, g)
        rhs = left_derivative(pd, g) * q + (-1) ** d * (pd * left_derivative(q, g))
        assert (lhs - rhs).max_abs() < 1e-9


@given(poly_st(), gen_st)
def test_derivative_nilpotent(p, g):
    assert left_derivative(left_derivative(p, g), g).is_zero()


def test_constant_odd_derivation_squares_to_zero(rng):
    # D = sum c_j d/dx_j - sum p_i d/dcbar_i on two bosonic pairs
    D = Derivation(
        grassmann=((cbar(1, 1), SuperFunction.linear(2, -1.0)), (cbar(1, 2), SuperFunction.linear(3, -1.0))),
        bosonic=((0, SuperFunction.constant(gp(c(1, 1)))), (1, SuperFunction.constant(gp(c(1, 2))))),
    )
    gens = [c(1, 1), c(1, 2), cbar(1, 1), cbar(1, 2)]
    for _ in range(20):
        f = random_test_function(rng, gens, 4, max_degree=3, n_terms=8)
        assert compose_square(D, f.as_superfunction(), rng.normal(size=4)).max_abs() < 1e-12


def test_apply_derivation_uses_fd_without_gradient():
    f = SuperFunction(lambda s: GrassmannPoly.scalar(s[0] ** 3))
    D = Derivation(bosonic=((0, SuperFunction.constant(gp(c(1, 1)))),))
    out = apply_derivation(D, f, np.array([2.0]))
    assert abs(out.coefficient([c(1, 1)]) - 12.0) < 1e-5


def test_monomial_basis_counts():
    basis = monomial_basis(GENS, 2)
    assert len(basis) == 1 + 6 + 15
    assert all(canonicalize(m) is not None for m in basis)


def test_kind_order():
    assert Kind.C < Kind.CBAR
