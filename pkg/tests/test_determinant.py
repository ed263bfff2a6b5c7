import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from susylangevin import determinant as det
from susylangevin.model import TimeGrid

M = 24
GRID = TimeGrid(0.05, M)
fp_st = arrays(np.float64, M, elements=st.floats(-5, 5))
gam_st = arrays(np.float64, M, elements=st.floats(0.05, 4))
a_st = st.sampled_from([0.0, 0.25, 0.5, 1.0])


@given(gam_st, fp_st, a_st)
def test_three_way_identity(g, fp, a):
    rep = det.identity_report(g, fp, GRID, a)
    assert rep["max_relative_difference"] < 1e-10


@given(gam_st, fp_st, a_st)
def test_band_logdet_matches_dense(g, fp, a):
    op = det.build_block_kramers(g, fp, a, GRID)
    ld = det.logdet(op)
    s, v = np.linalg.slogdet(op.dense())
    assert ld.sign == s
    assert ld.value == pytest.approx(v, abs=1e-9)


@given(fp_st, gam_st)
def test_ito_is_exactly_zero(fp, g):
    assert det.logdet(det.build_first_order(fp, 0.0, GRID)).value == 0.0
    assert det.logdet(det.build_block_kramers(g, fp, 0.0, GRID)).value == 0.0


def test_free_kramers_equals_friction_factor():
    g = np.full(M, 0.8)
    block = det.logdet(det.build_block_kramers(g, np.zeros(M), 0.5, GRID)).value
    first = det.logdet(det.build_first_order(g, 0.5, GRID)).value
    assert block == pytest.approx(first, abs=1e-13)


def test_first_order_closed_form():
    fp = np.linspace(-1, 2, M)
    a = 0.5
    expect = np.sum(np.log(1 + GRID.epsilon * a * fp))
    assert det.logdet(det.build_first_order(fp, a, GRID)).value == pytest.approx(expect, abs=1e-13)


def test_degenerate_reported():
    fp = np.zeros(M)
    fp[3] = -1 / GRID.epsilon  # 1 + eps F' = 0 at a = 1
    ld = det.logdet(det.build_first_order(fp, 1.0, GRID))
    assert ld.degenerate and ld.sign == 0


def test_band_layout_round_trip(rng):
    A = np.tril(np.triu(rng.normal(size=(10, 10)), -3), 1)
    op = det.SlicedOperator.from_dense(A, 3, 1)
    assert np.array_equal(op.dense(), A)


def test_length_checked():
    with pytest.raises(ValueError, match="length"):
        det.build_first_order(np.zeros(M + 1), 0.5, GRID)
    with pytest.raises(ValueError, match="non-finite"):
        det.build_first_order(np.full(M, np.nan), 0.5, GRID)


def test_stratonovich_ladder_first_order():
    errs = []
    for eps in (0.04, 0.02, 0.01):
        grid = TimeGrid(eps, int(round(4 / eps)))
        t = grid.times[1:]
        fp = 1 + 0.8 * np.sin(1.5 * t)
        errs.append(abs(det.logdet(det.build_first_order(fp, 0.5, grid)).value - det.stratonovich_reference(fp, eps)))
    r = np.array(errs[:-1]) / errs[1:]
    assert np.all(np.abs(r - 2) < 0.3)


def test_kramers_linear_continuum_limit():
    """(1/T) logdet at a = 1/2 and constant F' tends to (gamma + k)/2 ... via the factor product."""
    # eigen-rates of d^2 + gamma d + k are r1, r2 with r1 + r2 = gamma: logdet/T -> gamma / 2
    gamma, k = 1.0, 0.7
    vals = []
    for eps in (0.04, 0.02, 0.01):
        grid = TimeGrid(eps, int(round(8 / eps)))
        g = np.full(grid.M, gamma)
        vals.append(det.logdet(det.build_block_kramers(g, np.full(grid.M, k), 0.5, grid)).value / grid.T)
    errs = np.abs(np.array(vals) - gamma / 2)
    assert errs[-1] < errs[0]
    assert errs[-1] < 0.01


def test_naive_second_order_depends_on_boundary_row():
    fp = np.ones(M)
    a = det.naive_second_order_logdet(1.0, fp, GRID, (1.0, 0.0)).value
    b = det.naive_second_order_logdet(1.0, fp, GRID, (2.0, 0.0)).value
    assert abs(a - b) == pytest.approx(np.log(2.0))
