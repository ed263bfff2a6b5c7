"""The ten acceptance criteria as functions returning report dictionaries.

Each function takes ``quick`` (smaller ensembles, for smoke runs) and a
``seed``; every report has ``criterion``, ``name``, ``pass`` and the numbers
the verdict rests on.  Full-size runs use the stated sample sizes and
tolerances.
"""

from __future__ import annotations

import itertools
import math
import time

import numpy as np

from . import determinant as det
from . import simulate as sm
from . import susy
from .model import (
    ConstFriction,
    Poly,
    ProcessSpec,
    SigmaVector,
    StateFriction,
    TimeGrid,
    cubic_force,
    first_order,
    kramers,
    lambda_operator_coeffs,
    linear_force,
    reduce_to_first_order,
    split_state_friction,
)
from .noise import assemble_combined, sample_aux, sample_white, stream, whiteness_test


def _report(number: int, name: str, passed: bool, started: float, **details) -> dict:
    return {"criterion": number, "name": name, "pass": bool(passed),
            "seconds": round(time.perf_counter() - started, 2), **details}


def _z(a: float, sa: float, b: float, sb: float) -> float:
    se = math.hypot(sa, sb)
    return (a - b) / se if se > 0 else (0.0 if a == b else math.inf)


# 1 ---------------------------------------------------------------------------


def combined_noise(N: int, sigma: SigmaVector, grid: TimeGrid, K: int, seed: int) -> np.ndarray:
    """``nu_N + sum_n Lambda_n nu_n`` for ``K`` samples (spec form, zero initial data)."""
    spec = ProcessSpec(N, ConstFriction(tuple([0.3 * (n + 1) for n in range(N - 1)] + [1.0])), linear_force(1.0))
    nu_N = sample_white(grid, stream(seed, 0, N), K, channel=N)
    nu_N = type(nu_N)(N, math.sqrt(sigma.main_weight) * nu_N.values, grid)
    aux, lams = [], []
    for n in range(1, N):
        if sigma.values[n - 1] <= 0.0:
            continue
        lam = lambda_operator_coeffs(spec, n)
        aux.append(sample_aux(grid, sigma.values[n - 1], lam, stream(seed, 0, n), K, channel=n))
        lams.append(lam)
    return assemble_combined(nu_N, aux, lams).values


def criterion_1(quick: bool = False, seed: int = 1) -> dict:
    t0 = time.perf_counter()
    K = 20_000 if quick else 100_000
    threshold = 6.0 if quick else 5.0
    grid = TimeGrid(0.05, 32)
    cases = [(2, (0.1,)), (2, (0.5,)), (3, (0.1, 0.3)), (3, (0.3, 0.2)), (3, (0.0, 0.5))]
    rows = []
    for k, (N, sig) in enumerate(cases):
        X = combined_noise(N, SigmaVector(sig), grid, K, seed + 101 * k)
        rep = whiteness_test(X, grid.epsilon, threshold=threshold)
        rows.append({"N": N, "sigma": list(sig), **rep.summary()})
    worst = max(r["max_abs_z"] for r in rows)
    return _report(1, "combined-noise whiteness", worst < threshold, t0,
                   K=K, M=grid.M, threshold=threshold, max_abs_z=worst, cases=rows)


# 2 ---------------------------------------------------------------------------


def criterion_2(quick: bool = False, seed: int = 2) -> dict:
    """Stationary ``<x^2>`` for Kramers (gamma = 1, F = x) at a = 1/2.

    The midpoint slicing reproduces the continuum stationary covariance of a
    linear system exactly, so every estimate targets 0.5 without
    discretisation bias.
    """
    t0 = time.perf_counter()
    K = 4_000 if quick else 20_000
    eps = 0.01
    grid = TimeGrid(eps, 500 if quick else 2000)
    burn = 20.0
    spec = kramers(1.0, linear_force(1.0))
    target = 0.5
    rows = []
    for k, s in enumerate((0.0, 0.25, 0.5)):
        ens = sm.run_ensemble(reduce_to_first_order(spec, [s]), grid, 0.5, K, seed + k, burn_in=burn)
        est = sm.stationary_second_moment(ens)
        rows.append({"method": f"coupled sigma={s}", "value": est.value, "stderr": est.stderr})
    ens = sm.simulate_direct(spec, grid, 0.5, K, seed + 10, burn_in=burn)
    est = sm.stationary_second_moment(ens)
    rows.append({"method": "direct", "value": est.value, "stderr": est.stderr})
    for r in rows:
        r["z_vs_target"] = (r["value"] - target) / r["stderr"]
    pair = [
        {"pair": [p["method"], q["method"]], "z": _z(p["value"], p["stderr"], q["value"], q["stderr"])}
        for p, q in itertools.combinations(rows, 2)
    ]
    worst = max([abs(r["z_vs_target"]) for r in rows] + [abs(p["z"]) for p in pair])
    return _report(2, "sigma independence and order reduction", worst < 3.0, t0,
                   K=K, epsilon=eps, a=0.5, target=target, estimates=rows, pairs=pair, max_abs_z=worst)


# 3 ---------------------------------------------------------------------------


def criterion_3(quick: bool = False, seed: int = 3) -> dict:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    grid = TimeGrid(0.01, 256)
    n = 10 if quick else 50
    worst = 0.0
    ok = True
    for _ in range(n):
        g = rng.uniform(0.2, 2.0, grid.M)
        Fp = rng.normal(0.0, 2.0, grid.M)
        a = float(rng.choice([0.0, 0.5, 1.0]))
        rep = det.identity_report(g, Fp, grid, a, rtol=1e-10)
        worst = max(worst, rep["max_relative_difference"])
        ok &= rep["pass"]
    return _report(3, "determinant identities", ok and worst < 1e-10, t0,
                   configurations=n, M=grid.M, max_relative_difference=worst)


# 4 ---------------------------------------------------------------------------


def criterion_4(quick: bool = False, seed: int = 4) -> dict:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for M in (8, 64, 256):
        grid = TimeGrid(0.02, M)
        for _ in range(5 if quick else 20):
            Fp = rng.normal(0.0, 3.0, M)
            g = rng.uniform(0.1, 3.0, M)
            worst = max(worst, abs(det.logdet(det.build_first_order(Fp, 0.0, grid)).value),
                        abs(det.logdet(det.build_block_kramers(g, Fp, 0.0, grid)).value))
    return _report(4, "Ito determinant constancy", worst < 1e-14, t0, max_abs_logdet=worst)


# 5 ---------------------------------------------------------------------------


def stratonovich_ladder(epsilons=(0.04, 0.02, 0.01), T: float = 4.0) -> list[dict]:
    rows = []
    for eps in epsilons:
        M = int(round(T / eps))
        grid = TimeGrid(eps, M)
        t = grid.times[1:]
        Fp = 1.0 + 0.8 * np.sin(1.5 * t) + 0.3 * np.cos(0.4 * t)
        ld = det.logdet(det.build_first_order(Fp, 0.5, grid)).value
        rows.append({"epsilon": eps, "M": M, "logdet": ld, "reference": det.stratonovich_reference(Fp, eps),
                     "error": abs(ld - det.stratonovich_reference(Fp, eps))})
    return rows


def criterion_5(quick: bool = False, seed: int = 5) -> dict:
    t0 = time.perf_counter()
    rows = stratonovich_ladder()
    ratios = [rows[k]["error"] / rows[k + 1]["error"] for k in range(len(rows) - 1)]
    ok = all(abs(r - 2.0) <= 0.3 for r in ratios)
    return _report(5, "Stratonovich determinant limit", ok, t0, ladder=rows, ratios=ratios)


# 6 ---------------------------------------------------------------------------


def canonical_cases():
    """Processes for N = 1, 2, 3 with a nonlinear force and a sigma split."""
    F = cubic_force(1.0, 0.7)
    return [
        (first_order(F), ()),
        (kramers(0.8, F), (0.3,)),
        (ProcessSpec(3, ConstFriction((0.5, 1.2, 1.0)), F), (0.2, 0.25)),
    ]


def criterion_6(quick: bool = False, seed: int = 6) -> dict:
    t0 = time.perf_counter()
    trials = 10 if quick else 100
    worst_qs = worst_qq = 0.0
    configs = 0
    for k, (spec, sig) in enumerate(canonical_cases()):
        for M in range(2, 7):
            for a in (0.0, 0.5, 1.0):
                grid = TimeGrid(0.1, M)
                S, Q = susy.build_canonical(spec, sig, grid, a, x0=np.full(spec.order, 0.3))
                worst_qs = max(worst_qs, susy.check_invariance(Q, S, trials, seed + configs))
                worst_qq = max(worst_qq, susy.check_nilpotent(Q, trials, seed + configs, max_degree=2))
                configs += 1
    ok = worst_qs < 1e-12 and worst_qq < 1e-12
    return _report(6, "exact sliced supersymmetry", ok, t0, configurations=configs, samples_each=trials,
                   max_QS=worst_qs, max_QQ=worst_qq)


# 7 ---------------------------------------------------------------------------

LADDER_MS = (32, 64, 128)
LADDER_T = 1.0


def criterion_7(quick: bool = False, seed: int = 7) -> dict:
    t0 = time.perf_counter()
    cases = {
        "kramers cubic": lambda a: (lambda gr: susy.build_lagrangian_N(kramers(1.0, cubic_force(1.0, 1.0)), gr, a)),
        "x-friction 1+3x^2": lambda a: (lambda gr: susy.build_lagrangian_xfriction(Poly((1.0, 0.0, 3.0)),
                                                                                   linear_force(1.0), gr, a)),
    }
    rows = []
    ok = True
    for name, make in cases.items():
        for a in (0.0, 0.5):
            lad = susy.invariance_ladder(make(a), LADDER_T, LADDER_MS, seed)
            good = all(abs(r - 2.0) <= 0.2 * 2.0 for r in lad["ratios"])
            ok &= good
            rows.append({"case": name, "a": a, "pass": good, **lad})
    return _report(7, "Lagrangian invariance convergence", ok, t0, T=LADDER_T, Ms=list(LADDER_MS),
                   window=susy.BULK_WINDOW, ladders=rows)


# 8 ---------------------------------------------------------------------------


def criterion_8(quick: bool = False, seed: int = 8) -> dict:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_c = worst_f = 0.0
    for gamma in rng.uniform(0.1, 3.0, 5):
        s = susy.structural_check(float(gamma))
        worst_c = max(worst_c, s["charge_difference"])
        worst_f = max(worst_f, s["fermion_action_difference"])
    # the sliced general-N fermion action at N = 2 against a direct slicing of the Kramers one
    sliced = 0.0
    for a in (0.0, 0.5, 1.0):
        grid = TimeGrid(0.1, 6)
        F = cubic_force(1.0, 0.5)
        S, _ = susy.build_lagrangian_N(kramers(0.9, F), grid, a)
        x = S.sample_state(rng)
        Fp = F.deriv()(np.concatenate([[S.info["history"][-1]], x]))
        d = S.fermionic(x) - susy.sliced_kramers_fermion_action(0.9, Fp, grid, a)
        sliced = max(sliced, d.max_abs())
    ok = worst_c < 1e-14 and worst_f < 1e-14 and sliced < 1e-14
    return _report(8, "structural reductions", ok, t0, charge_difference=worst_c,
                   fermion_action_difference=worst_f, sliced_fermion_difference=sliced)


# 9 ---------------------------------------------------------------------------


def criterion_9(quick: bool = False, seed: int = 9) -> dict:
    t0 = time.perf_counter()
    K = 20_000 if quick else 100_000
    eps = 0.01
    t1 = 0.5
    rows = []
    ok = True
    for tau in (0.5, 1.0):
        grid = TimeGrid(eps, int(round((t1 + tau) / eps)))
        w = susy.ward_check(first_order(linear_force(1.0)), grid, K, seed + int(10 * tau), t1, t1 + tau)
        exact = math.exp(-tau)
        zb = (w.bosonic - exact) / w.combined_stderr
        zf = (w.fermionic - exact) / w.combined_stderr
        good = abs(zb) < 3 and abs(zf) < 3 and abs(w.z) < 3
        ok &= good
        rows.append({"force": "linear", "tau": tau, "exact": exact, "z_response": zb, "z_propagator": zf,
                     "pass": good, **w.to_dict()})
    grid = TimeGrid(eps, int(round((t1 + 1.0) / eps)))
    cubic = first_order(cubic_force(1.0, 1.0))
    w = susy.ward_check(cubic, grid, K, seed + 50, t1, t1 + 1.0)
    good = abs(w.z) < 3
    ok &= good
    rows.append({"force": "cubic", "tau": 1.0, "pass": good, **w.to_dict()})
    shift = susy.a_shift_check(cubic, grid, K, seed + 60, t1, t1 + 1.0)
    ok &= shift["pass"]
    return _report(9, "Ward identity", ok, t0, K=K, epsilon=eps, checks=rows, a_shift=shift)


# 10 --------------------------------------------------------------------------


def criterion_10(quick: bool = False, seed: int = 10) -> dict:
    t0 = time.perf_counter()
    K = 4_000 if quick else 20_000
    eps = 0.01
    grid = TimeGrid(eps, 100)
    spec = ProcessSpec(2, StateFriction(Poly((1.0, 0.0, 3.0))), linear_force(1.0))
    pairs = [(0.0, 0.0), (0.0, 1.0)]
    est = {}
    for k, s in enumerate((0.0, 0.3)):
        ens = sm.run_ensemble(split_state_friction(spec, [s]), grid, 0.5, K, seed + k, burn_in=20.0, keep=[0, 100])
        est[f"coupled sigma={s}"] = sm.correlate(ens, pairs)
    ens = sm.simulate_direct(spec, grid, 0.5, K, seed + 10, burn_in=20.0, keep=[0, 100])
    est["direct"] = sm.correlate(ens, pairs)
    rows = []
    for (na, ea), (nb, eb) in itertools.combinations(est.items(), 2):
        for p, q in zip(ea, eb):
            rows.append({"pair": [na, nb], "tau": p.t2 - p.t, "values": [p.value, q.value],
                         "z": _z(p.value, p.stderr, q.value, q.stderr)})
    worst = max(abs(r["z"]) for r in rows)
    return _report(10, "x-dependent friction equivalence", worst < 3.0, t0, K=K, a=0.5,
                   comparisons=rows, max_abs_z=worst)


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 11)}


def run(numbers=None, quick: bool = False, seed: int | None = None) -> list[dict]:
    out = []
    for i in numbers or sorted(CRITERIA):
        out.append(CRITERIA[i](quick) if seed is None else CRITERIA[i](quick, seed))
    return out


def summary_line(rep: dict) -> str:
    return f"criterion {rep['criterion']:2d} [{'PASS' if rep['pass'] else 'FAIL'}] {rep['name']} ({rep['seconds']} s)"
