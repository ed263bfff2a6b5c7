import numpy as np
import pytest
from hypothesis import given, strategies as st

from susylangevin import susy
from susylangevin.grassmann import GrassmannPoly, SuperFunction, apply_derivation, c, cbar, compose_square, monomial_basis
from susylangevin.model import (
    ConstFriction,
    Poly,
    ProcessSpec,
    TimeGrid,
    cubic_force,
    first_order,
    kramers,
    linear_force,
    reduce_to_first_order,
)

F = cubic_force(1.0, 0.7)
SPECS = {1: (first_order(F), ()), 2: (kramers(0.8, F), (0.3,)),
         3: (ProcessSpec(3, ConstFriction((0.5, 1.2, 1.0)), F), (0.2, 0.25))}


@given(st.sampled_from([1, 2, 3]), st.integers(2, 6), st.sampled_from([0.0, 0.5, 1.0]), st.integers(0, 2**31))
def test_canonical_action_is_invariant(N, M, a, seed):
    spec, sig = SPECS[N]
    S, Q = susy.build_canonical(spec, sig, TimeGrid(0.1, M), a, x0=np.linspace(0.1, 0.3, N))
    assert susy.check_invariance(Q, S, trials=3, seed=seed) < 1e-12


@pytest.mark.parametrize("N", [1, 2, 3])
def test_canonical_charge_nilpotent_on_monomial_basis(N):
    spec, sig = SPECS[N]
    S, Q = susy.build_canonical(spec, sig, TimeGrid(0.1, 2), 0.5)
    state = np.random.default_rng(N).normal(size=Q.layout.size)
    x = SuperFunction.linear(0)
    for mono in monomial_basis(Q.layout.generators(), 3):
        f = GrassmannPoly.product_of(mono)
        assert compose_square(Q.derivation, f, state).max_abs() < 1e-12
        fx = SuperFunction(lambda s, f=f: f * float(s[0]), lambda s, f=f: {0: f}, lambda s: {})
        assert compose_square(Q.derivation, fx, state).max_abs() < 1e-12
    assert x is not None


def test_charge_on_cbar_x_example():
    S, Q = susy.build_canonical(*SPECS[1], TimeGrid(0.1, 4), 0.5)
    lay = Q.layout
    i, j = 2, 3
    phi = SuperFunction(
        lambda s: GrassmannPoly.generator(cbar(1, i), s[lay.x(1, j)]),
        lambda s: {lay.x(1, j): GrassmannPoly.generator(cbar(1, i))},
        lambda s: {},
    )
    state = np.random.default_rng(0).normal(size=lay.size)
    out = apply_derivation(Q.derivation, phi, state)
    # Q(cbar_i x_j) = -p'_i x_j - cbar_i c_j
    assert out.scalar_part() == pytest.approx(-state[lay.p(1, i)] * state[lay.x(1, j)])
    assert out.coefficient([cbar(1, i), c(1, j)]) == pytest.approx(-1.0)
    assert len(out) == 2


def test_charge_twice_on_basic_fields():
    S, Q = susy.build_canonical(*SPECS[2], TimeGrid(0.1, 3), 0.0)
    state = np.random.default_rng(1).normal(size=Q.layout.size)
    assert compose_square(Q.derivation, SuperFunction.linear(Q.layout.x(1, 2)), state).is_zero()
    assert compose_square(Q.derivation, GrassmannPoly.generator(cbar(2, 1)), state).is_zero()


def test_corrupted_fermion_action_detected():
    S, Q = susy.build_canonical(*SPECS[2], TimeGrid(0.1, 4), 0.5, corrupt_fprime=0.3)
    assert susy.check_invariance(Q, S, trials=3) > 1e-3


def test_tag_mismatch_rejected():
    S, _ = susy.build_canonical(*SPECS[1], TimeGrid(0.1, 3), 0.5)
    _, Q = susy.build_lagrangian_N(kramers(1.0, F), TimeGrid(0.1, 3), 0.5)
    with pytest.raises(susy.TagMismatch):
        susy.invariance_residual(Q, S, np.zeros(S.layout.size))


@pytest.mark.parametrize("a", [0.0, 0.5])
def test_lagrangian_kramers_ladder_first_order(a):
    lad = susy.invariance_ladder(lambda g: susy.build_lagrangian_N(kramers(1.0, cubic_force(1.0, 1.0)), g, a), 1.0)
    assert all(abs(r - 2.0) < 0.2 for r in lad["ratios"])
    assert lad["order"] > 0.9


def test_lagrangian_third_order_converges():
    spec = ProcessSpec(3, ConstFriction((0.4, 0.9, 1.0)), F)
    lad = susy.invariance_ladder(lambda g: susy.build_lagrangian_N(spec, g, 0.5), 1.0)
    assert lad["order"] > 0.9


@pytest.mark.parametrize("a", [0.0, 0.5])
def test_xfriction_ladder(a):
    lad = susy.invariance_ladder(
        lambda g: susy.build_lagrangian_xfriction(Poly((1.0, 0.0, 3.0)), linear_force(1.0), g, a), 1.0)
    assert all(abs(r - 2.0) < 0.2 for r in lad["ratios"])


def test_lagrangian_exact_at_a_one():
    S, Q = susy.build_lagrangian_N(kramers(0.7, F), TimeGrid(1 / 16, 16), 1.0)
    assert susy.check_invariance(Q, S, trials=3) < 1e-9


def test_xfriction_corrupted_coupling_does_not_converge():
    """A wrong (F' - gamma + 1) coupling leaves an O(1) residual under refinement."""
    gamma, force = Poly((1.0, 0.0, 3.0)), linear_force(1.0)
    lad = susy.invariance_ladder(
        lambda g: susy.build_lagrangian_xfriction(gamma, force, g, 0.5, corrupt_fprime=0.5), 1.0)
    assert lad["order"] < 0.2


def test_lagrangian_nilpotency_defect_is_linearised_equation():
    S, Q = susy.build_lagrangian_N(kramers(0.7, F), TimeGrid(0.1, 6), 0.5)
    rep = susy.lagrangian_nilpotency_defect(S, Q, S.sample_state(np.random.default_rng(0)))
    assert rep["max_coefficient"] > 1.0  # not nilpotent off shell
    assert rep["deviation_from_KC"] < 1e-9


def test_structural_reductions_exact():
    s = susy.structural_check(0.37)
    assert s["charge_difference"] == 0.0 and s["fermion_action_difference"] == 0.0


@pytest.mark.parametrize("a", [0.0, 0.5, 1.0])
def test_general_N_fermion_action_matches_kramers_slicing(a):
    grid = TimeGrid(0.1, 5)
    S, _ = susy.build_lagrangian_N(kramers(0.9, F), grid, a)
    x = S.sample_state(np.random.default_rng(2))
    Fp = F.deriv()(np.concatenate([[S.info["history"][-1]], x]))
    assert (S.fermionic(x) - susy.sliced_kramers_fermion_action(0.9, Fp, grid, a)).max_abs() < 1e-14


def test_mq_general_coefficients():
    ent = susy.mq_entries([0.1, 0.2, 0.3, 1.0])
    assert np.allclose(ent[0], [0.2, -0.3, 1.0])
    assert np.allclose(ent[2], [1.0])


@pytest.mark.parametrize("a", [0.0, 0.5])
def test_green_column_matches_dense_inverse(a):
    grid = TimeGrid(0.05, 20)
    sysm = reduce_to_first_order(first_order(F))
    rng = np.random.default_rng(3)
    states = rng.normal(size=(2, grid.M + 1, 1))
    Fp = F.deriv()(states[0, 1:, 0])
    G = susy.fermion_green(Fp, grid=grid, a=a)
    col = susy.green_column(sysm, states[:1], 5, 1, a, grid.epsilon)
    assert np.allclose(col[0, 1:, 0], G[:, 4])


def test_green_column_kramers_block():
    grid = TimeGrid(0.05, 12)
    sysm = reduce_to_first_order(kramers(0.8, F), [0.0])
    states = np.random.default_rng(4).normal(size=(1, grid.M + 1, 2))
    Fp = F.deriv()(states[0, 1:, 0])
    G = susy.fermion_green(Fp, 0.8, "kramers", grid, 0.5)
    col = susy.green_column(sysm, states, 3, 2, 0.5, grid.epsilon)
    # interleaved (v_i, x_i): column of v_3 is index 2*(3-1); row x_j is 2*(j-1)+1
    assert np.allclose(col[0, 1:, 0], G[1::2, 4])
    assert np.allclose(col[0, 1:, 1], G[0::2, 4])


def test_ward_small_linear():
    grid = TimeGrid(0.01, 100)
    rep = susy.ward_check(first_order(linear_force(1.0)), grid, 8000, 5, 0.5, 1.0)
    assert abs(rep.z) < 4
    assert rep.fermionic == pytest.approx(0.99 ** 49)


def test_ward_kramers_small():
    grid = TimeGrid(0.02, 75)
    rep = susy.ward_check(kramers(1.0, linear_force(1.0)), grid, 8000, 6, 0.5, 1.5, sigma=[0.0])
    assert abs(rep.z) < 4
