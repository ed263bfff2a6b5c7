import numpy as np
import pytest
from hypothesis import given, strategies as st

from susylangevin import simulate as sm
from susylangevin.model import (
    ConstFriction,
    ProcessSpec,
    TimeGrid,
    cubic_force,
    first_order,
    kramers,
    linear_force,
    reduce_to_first_order,
)


@given(st.floats(0.0, 1.0), st.floats(-2, 2), st.floats(-30, 30))
def test_sliced_step_solves_implicit_equation(a, x0, noise):
    sysm = reduce_to_first_order(kramers(0.9, cubic_force(1.0, 2.0)), [0.3])
    eps = 0.05
    xp = np.array([[x0, -0.5 * x0]])
    nz = np.array([[0.2 * noise, noise]])
    x = sm.step_sliced(sysm, a, xp, nz, eps)
    res = (x - xp) / eps + a * sysm.drift(x) + (1 - a) * sysm.drift(xp) - nz
    assert np.max(np.abs(res)) < 1e-9


def test_direct_recurrence_equals_sigma_zero_reduction_pathwise():
    spec = kramers(0.8, cubic_force(1.0, 0.5))
    grid = TimeGrid(0.02, 100)
    for a in (0.0, 0.5):
        red = sm.run_ensemble(reduce_to_first_order(spec, [0.0]), grid, a, 64, 3)
        direct = sm.simulate_direct(spec, grid, a, 64, 3)
        assert np.max(np.abs(red.states[:, :, 0] - direct.states[:, :, 0])) < 1e-9


def test_ensembles_reproducible_across_thread_counts(monkeypatch):
    sysm = reduce_to_first_order(kramers(1.0, linear_force(1.0)), [0.25])
    grid = TimeGrid(0.05, 40)
    monkeypatch.setenv(sm.THREADS_ENV, "1")
    one = sm.run_ensemble(sysm, grid, 0.5, 300, 9, block_size=64)
    monkeypatch.setenv(sm.THREADS_ENV, "4")
    four = sm.run_ensemble(sysm, grid, 0.5, 300, 9, block_size=64)
    assert np.array_equal(one.states, four.states)


def test_block_size_changes_streams_not_statistics():
    sysm = reduce_to_first_order(first_order(linear_force(1.0)))
    grid = TimeGrid(0.05, 20)
    e = sm.run_ensemble(sysm, grid, 0.0, 10, 1, block_size=4)
    assert e.states.shape == (10, 21, 1)


def test_ou_variance_at_midpoint_matches_lyapunov():
    # midpoint slicing of dx = -k x dt + dW keeps the stationary variance 1/(2k)
    k = 1.5
    sysm = reduce_to_first_order(first_order(linear_force(k)))
    ens = sm.run_ensemble(sysm, TimeGrid(0.05, 200), 0.5, 4000, 21, burn_in=5.0)
    est = sm.stationary_second_moment(ens)
    assert abs(est.z_against(1 / (2 * k))) < 4


def test_ou_autocorrelation():
    sysm = reduce_to_first_order(first_order(linear_force(1.0)))
    ens = sm.run_ensemble(sysm, TimeGrid(0.02, 50), 0.5, 8000, 2, burn_in=6.0)
    (c0, c1) = sm.correlate(ens, [(0.0, 0.0), (0.0, 1.0)])
    assert abs(c0.z_against(0.5)) < 4
    assert abs(c1.z_against(0.5 * np.exp(-1.0))) < 4


def test_response_matches_decay():
    sysm = reduce_to_first_order(first_order(linear_force(1.0)))
    ens = sm.run_ensemble(sysm, TimeGrid(0.01, 100), 0.0, 20000, 4, record_noise=True)
    r = sm.response(ens, 1.0, 0.5)
    assert abs(r.z_against(np.exp(-0.5), 0.0)) < 4
    with pytest.raises(sm.SimulationError, match="noise"):
        sm.response(sm.run_ensemble(sysm, TimeGrid(0.01, 10), 0.0, 5, 4), 0.1, 0.05)


def test_third_order_sigma_split_agrees():
    spec = ProcessSpec(3, ConstFriction((1.0, 2.0, 2.0)), linear_force(0.0))
    grid = TimeGrid(0.02, 100)
    vals = []
    for k, sig in enumerate([(0.0, 0.0), (0.3, 0.2)]):
        ens = sm.run_ensemble(reduce_to_first_order(spec, sig), grid, 0.5, 6000, 40 + k, burn_in=15.0, keep=[100])
        vals.append(sm.correlate(ens, [(2.0, 2.0)])[0])
    se = np.hypot(vals[0].stderr, vals[1].stderr)
    assert abs(vals[0].value - vals[1].value) < 4 * se


def test_jackknife_helpers():
    v = np.arange(10.0)
    m, se = sm.jackknife_mean(v)
    assert m == 4.5 and se == pytest.approx(np.std(v, ddof=1) / np.sqrt(10))
    m2, se2 = sm.jackknife(v, np.mean, n_blocks=10)
    assert m2 == 4.5 and se2 == pytest.approx(se)


def test_write_csv_header(tmp_path):
    p = tmp_path / "o.csv"
    sm.write_csv(p, [sm.CorrelationEstimate(0.5, 0.01, 0.0, 0.0, "x^2")], {"seed": 3, "config_hash": "ab"})
    text = p.read_text().splitlines()
    assert text[0] == "# config_hash=ab" and text[1] == "# seed=3"
    assert text[3].startswith("x^2,")


def test_invalid_slicing_rejected():
    sysm = reduce_to_first_order(first_order(linear_force(1.0)))
    with pytest.raises(ValueError):
        sm.run_ensemble(sysm, TimeGrid(0.1, 5), 1.2, 4, 0)
