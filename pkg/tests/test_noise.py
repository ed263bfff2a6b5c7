import numpy as np
import pytest
from hypothesis import given, strategies as st

from susylangevin.model import ConstFriction, ProcessSpec, TimeGrid, linear_force, reduce_to_first_order
from susylangevin.noise import (
    NoiseSample,
    apply_lambda,
    ar1_noise,
    assemble_combined,
    aux_covariance,
    draw_driving_noise,
    householder,
    orthogonal_mix,
    sample_aux,
    sample_white,
    sliced_lambda_matrix,
    sliced_lambda_taps,
    solve_lambda,
    stream,
    whiteness_test,
)

GRID = TimeGrid(0.05, 16)


def test_stream_determinism_and_independence():
    a = stream(1, 2, 3).standard_normal(5)
    b = stream(1, 2, 3).standard_normal(5)
    c = stream(1, 2, 4).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


def test_white_variance_scaling():
    w = sample_white(GRID, stream(0, 0), 20000)
    assert w.values.shape == (20000, GRID.M)
    assert np.var(w.values) == pytest.approx(1 / GRID.epsilon, rel=0.03)


def test_noise_sample_grid_mismatch():
    with pytest.raises(ValueError, match="slices"):
        NoiseSample(1, np.zeros(3), GRID)


@given(st.lists(st.floats(0.1, 3.0), min_size=1, max_size=3), st.integers(0, 2**32 - 1))
def test_lambda_inverse_identity_exact(lower, seed):
    lam = tuple(lower) + (1.0,)
    w = stream(seed).standard_normal((4, GRID.M))
    nu = solve_lambda(lam, w, GRID.epsilon)
    assert np.max(np.abs(apply_lambda(lam, nu, GRID.epsilon) - w)) < 1e-10 * (1 + np.max(np.abs(w)))


def test_lambda_matrix_matches_taps():
    lam = (0.4, 1.2, 1.0)
    L = sliced_lambda_matrix(lam, GRID)
    taps = sliced_lambda_taps(lam, GRID.epsilon)
    assert np.allclose(L[5, 5::-1][: len(taps)], taps)
    assert L[0, 0] == pytest.approx(GRID.epsilon ** -2)


def test_aux_covariance_matches_samples():
    lam = (0.7, 1.0)
    nu = sample_aux(GRID, 0.3, lam, stream(5), 100_000)
    rep = whiteness_test(nu.values, target=aux_covariance(0.3, lam, GRID))
    assert rep.max_abs_z < 5


def test_sample_aux_rejects_zero_weight():
    with pytest.raises(ValueError, match="sigma_n"):
        sample_aux(GRID, 0.0, (1.0, 1.0), stream(0))


@pytest.mark.parametrize("sig", [(0.2,), (0.5,)])
def test_combined_noise_is_white(sig):
    lam = (0.9, 1.0)
    K = 50_000
    nu_N = sample_white(GRID, stream(3, 1), K)
    nu_N = NoiseSample(2, np.sqrt(1 - sig[0]) * nu_N.values, GRID)
    aux = sample_aux(GRID, sig[0], lam, stream(3, 2), K, channel=1)
    eta = assemble_combined(nu_N, [aux], [lam])
    assert whiteness_test(eta).passed


def test_ar1_fault_detected():
    X = ar1_noise(GRID, stream(9), 50_000, rho=0.3)
    rep = whiteness_test(X, GRID.epsilon)
    assert not rep.passed and rep.max_abs_z > 20


def test_whiteness_requires_samples():
    with pytest.raises(ValueError, match="samples"):
        whiteness_test(np.zeros((10, 4)), 0.1)


@given(st.lists(st.floats(-1, 1), min_size=GRID.M, max_size=GRID.M).filter(lambda v: np.linalg.norm(v) > 0.1))
def test_orthogonal_mix_preserves_whiteness_exactly(v):
    A = householder(np.array(v))
    X = stream(11).standard_normal((2000, GRID.M))
    Y = orthogonal_mix(X, A)
    # second-moment matrices are related by the congruence A C A^T
    assert np.allclose(Y.T @ Y, A @ (X.T @ X) @ A.T)


def test_orthogonal_mix_rejects_non_orthogonal():
    with pytest.raises(ValueError, match="orthogonal"):
        orthogonal_mix(np.zeros((3, 2)), np.array([[1.0, 0.1], [0.0, 1.0]]))


@pytest.mark.parametrize("a", [0.0, 0.5, 1.0])
def test_driving_noise_satisfies_weighted_lambda_equation(a):
    """Auxiliary drives obey ``Lambda_a nu = sqrt(sigma) W^K w`` slice by slice."""
    from scipy import signal

    from susylangevin.noise import weight_taps

    spec = ProcessSpec(3, ConstFriction((0.0, 0.8, 1.5)), linear_force(1.0))
    sysm = reduce_to_first_order(spec, [0.2, 0.3])
    grid = TimeGrid(0.02, 64)
    dn = draw_driving_noise(sysm, grid, 4, 0, 8, a)
    for ch in sysm.channels:
        drive = dn.drive[:, :, ch.component]
        w = dn.white[ch.component + 1]
        if ch.is_white:
            assert np.allclose(drive, np.sqrt(ch.weight) * w)
            continue
        K = len(ch.lambda_coeffs) - 1
        lhs = signal.lfilter(sliced_lambda_taps(ch.lambda_coeffs, grid.epsilon, a), [1.0], drive, axis=-1)
        rhs = np.sqrt(ch.weight) * signal.lfilter(weight_taps(K, a), [1.0], w, axis=-1)
        assert np.allclose(lhs, rhs, atol=1e-9 * np.max(np.abs(rhs)))
