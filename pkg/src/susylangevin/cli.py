"""Command-line front end.

    susylangevin simulate [--config PATH] [--seed U64] [--quick] [--out PATH]
    susylangevin check {susy,det,ward,whiteness,equivalence,ashift} [...]
    susylangevin report [...]

Exit codes: 0 pass, 1 check failure, 2 usage or configuration error.  Every
output carries the configuration hash and the seed.  Wall-clock timings go to
stderr only, so reports are reproducible byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import acceptance, determinant as det, simulate as sm, susy
from .config import ConfigError, RunConfig, default_kramers, load_config
from .model import (
    ConstFriction,
    SigmaVector,
    SpecError,
    StateFriction,
    TimeGrid,
    reduce_to_first_order,
    split_state_friction,
)
from .noise import ar1_noise, stream, whiteness_test

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CHECKS = ("susy", "det", "ward", "whiteness", "equivalence", "ashift")


def _system(cfg: RunConfig, sigma=None):
    sig = cfg.sigma if sigma is None else SigmaVector(tuple(sigma)).for_order(cfg.process.order)
    if isinstance(cfg.process.friction, StateFriction):
        return split_state_friction(cfg.process, sig)
    return reduce_to_first_order(cfg.process, sig)


def _burn_in(cfg: RunConfig, system) -> float:
    return 10.0 * sm.relaxation_time(system) if cfg.burn_in is None else cfg.burn_in


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=float) + "\n"


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k != "seconds"}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(cfg: RunConfig, quick: bool = False, out: str | None = None) -> int:
    """Correlation estimates as CSV: stationary ``<x^2>`` and ``<x_t x_t2>`` pairs.

    ``options.method`` is ``"coupled"`` (default) or ``"direct"``;
    ``options.pairs`` lists ``[t, t2]`` times in the recorded window.
    """
    K = min(cfg.K, 2000) if quick else cfg.K
    method = cfg.options.get("method", "coupled")
    system = _system(cfg)
    burn = _burn_in(cfg, system)
    if method == "direct":
        ens = sm.simulate_direct(cfg.process, cfg.grid, cfg.a, K, cfg.seed, burn_in=burn)
    elif method == "coupled":
        ens = sm.run_ensemble(system, cfg.grid, cfg.a, K, cfg.seed, burn_in=burn)
    else:
        raise ConfigError(f"options.method must be 'coupled' or 'direct', got {method!r}")
    T = cfg.grid.T
    pairs = cfg.options.get("pairs", [[0.0, 0.0], [0.0, min(1.0, T)]])
    try:
        pairs = [(float(p[0]), float(p[1])) for p in pairs]
    except (TypeError, ValueError, IndexError) as exc:
        raise ConfigError("options.pairs must be a list of [t, t2] pairs") from exc
    for t, t2 in pairs:
        if not (0 <= t <= T and 0 <= t2 <= T):
            raise ConfigError(f"options.pairs: times must lie in [0, {T}]")
    estimates = [sm.stationary_second_moment(ens)] + sm.correlate(ens, pairs)
    meta = {"config_hash": cfg.hash, "seed": cfg.seed, "K": K, "a": cfg.a, "method": method,
            "epsilon": cfg.grid.epsilon, "M": cfg.grid.M, "burn_in": burn}
    path = out or cfg.output
    if path:
        sm.write_csv(path, estimates, meta)
    else:
        import tempfile

        with tempfile.NamedTemporaryFile("r", suffix=".csv") as fh:
            sm.write_csv(fh.name, estimates, meta)
            sys.stdout.write(Path(fh.name).read_text())
    return EXIT_PASS


# ---------------------------------------------------------------------------
# checks


def check_susy(cfg: RunConfig, quick: bool) -> dict:
    construction = cfg.options.get("construction", susy.CANONICAL)
    M = int(cfg.options.get("M", 6))
    trials = 10 if quick else 100
    if construction == susy.CANONICAL:
        grid = TimeGrid(cfg.grid.epsilon, M)
        S, Q = susy.build_canonical(cfg.process, cfg.sigma, grid, cfg.a, x0=np.full(cfg.process.order, 0.3))
        qs = susy.check_invariance(Q, S, trials, cfg.seed)
        qq = susy.check_nilpotent(Q, trials, cfg.seed)
        return {"construction": construction, "N": cfg.process.order, "M": M, "a": cfg.a,
                "max_QS": qs, "max_QQ": qq, "tolerance": 1e-12, "pass": qs < 1e-12 and qq < 1e-12}
    if construction in (susy.LAGRANGIAN_N, susy.LAGRANGIAN_XF):
        if isinstance(cfg.process.friction, StateFriction):
            fr = cfg.process.friction

            def make(gr):
                return susy.build_lagrangian_xfriction(fr.gamma, cfg.process.force, gr, cfg.a)
        else:
            def make(gr):
                return susy.build_lagrangian_N(cfg.process, gr, cfg.a)
        lad = susy.invariance_ladder(make, acceptance.LADDER_T, acceptance.LADDER_MS, cfg.seed)
        ok = all(abs(r - 2.0) <= 0.4 for r in lad["ratios"])
        return {"construction": construction, "a": cfg.a, "window": susy.BULK_WINDOW, "pass": ok, **lad}
    raise ConfigError(f"options.construction must be one of canonical, lagrangian-N, lagrangian-xfriction")


def check_det(cfg: RunConfig, quick: bool) -> dict:
    if isinstance(cfg.process.friction, StateFriction) or cfg.process.order != 2:
        raise ConfigError("process: the determinant check needs a Kramers process (N = 2, constant friction)")
    M = int(cfg.options.get("M", 256))
    grid = TimeGrid(cfg.grid.epsilon, M)
    rng = stream(cfg.seed, 0)
    x = np.cumsum(rng.normal(0.0, math.sqrt(grid.epsilon), M))
    Fp = cfg.process.force.deriv()(x)
    gamma = cfg.process.gammas[1]
    a = cfg.options.get("det_a", 0.5)
    rep = det.identity_report(gamma, Fp, grid, a)
    ito = max(abs(det.logdet(det.build_first_order(Fp, 0.0, grid)).value),
              abs(det.logdet(det.build_block_kramers(gamma, Fp, 0.0, grid)).value))
    rep["ito_logdet"] = ito
    rep["pass"] = bool(rep["pass"] and ito < 1e-14)
    return rep


def _ward_times(cfg: RunConfig) -> tuple[float, float]:
    t1 = float(cfg.options.get("t1", 0.5))
    t2 = float(cfg.options.get("t2", 1.0))
    if not 0 <= t1 < t2 <= cfg.grid.T:
        raise ConfigError(f"options.t1/t2 must satisfy 0 <= t1 < t2 <= {cfg.grid.T}")
    return t1, t2


def check_ward(cfg: RunConfig, quick: bool) -> dict:
    t1, t2 = _ward_times(cfg)
    K = min(cfg.K, 20_000) if quick else cfg.K
    grid = TimeGrid(cfg.grid.epsilon, cfg.grid.index(t2))
    w = susy.ward_check(_system(cfg), grid, K, cfg.seed, t1, t2, a=cfg.a)
    return {**w.to_dict(), "pass": abs(w.z) < 3.0}


def check_whiteness(cfg: RunConfig, quick: bool) -> dict:
    K = min(cfg.K, 20_000) if quick else cfg.K
    threshold = 6.0 if quick else 5.0
    grid = TimeGrid(cfg.grid.epsilon, int(cfg.options.get("M", 32)))
    if cfg.options.get("inject_ar1"):
        X = ar1_noise(grid, stream(cfg.seed, 0), K, float(cfg.options.get("ar1_rho", 0.3)))
        source = "ar1 (fault injection)"
    else:
        X = acceptance.combined_noise(cfg.process.order, cfg.sigma, grid, K, cfg.seed)
        source = "combined"
    rep = whiteness_test(X, grid.epsilon, threshold=threshold, min_samples=min(1000, K))
    return {"source": source, **rep.summary()}


def check_equivalence(cfg: RunConfig, quick: bool) -> dict:
    """Coupled systems at sigma = 0 and the configured split against direct integration."""
    K = min(cfg.K, 4000) if quick else cfg.K
    T = cfg.grid.T
    pairs = [(0.0, 0.0), (0.0, min(1.0, T))]
    keep = sorted({cfg.grid.index(t) for p in pairs for t in p})
    sys0 = _system(cfg, [0.0] * (cfg.process.order - 1))
    burn = _burn_in(cfg, sys0)
    est = {}
    for k, sig in enumerate([None, [0.0] * (cfg.process.order - 1)]):
        name = f"coupled sigma={list(cfg.sigma.values) if sig is None else sig}"
        ens = sm.run_ensemble(_system(cfg, sig), cfg.grid, cfg.a, K, cfg.seed + k, burn_in=burn, keep=keep)
        est[name] = sm.correlate(ens, pairs)
    ens = sm.simulate_direct(cfg.process, cfg.grid, cfg.a, K, cfg.seed + 10, burn_in=burn, keep=keep)
    est["direct"] = sm.correlate(ens, pairs)
    rows = []
    names = list(est)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            for p, q in zip(est[names[i]], est[names[j]]):
                se = math.hypot(p.stderr, q.stderr)
                rows.append({"pair": [names[i], names[j]], "t": p.t, "t2": p.t2,
                             "values": [p.value, q.value], "z": (p.value - q.value) / se})
    worst = max(abs(r["z"]) for r in rows)
    return {"K": K, "comparisons": rows, "max_abs_z": worst, "pass": worst < 3.0}


def check_ashift(cfg: RunConfig, quick: bool) -> dict:
    t1, t2 = _ward_times(cfg)
    K = min(cfg.K, 20_000) if quick else cfg.K
    grid = TimeGrid(cfg.grid.epsilon, cfg.grid.index(t2))
    return susy.a_shift_check(_system(cfg), grid, K, cfg.seed, t1, t2)


CHECK_FUNCS = {
    "susy": check_susy, "det": check_det, "ward": check_ward, "whiteness": check_whiteness,
    "equivalence": check_equivalence, "ashift": check_ashift,
}


def cmd_check(cfg: RunConfig, which: str, quick: bool = False, out: str | None = None) -> int:
    body = CHECK_FUNCS[which](cfg, quick)
    report = {"check": which, "config_hash": cfg.hash, "seed": cfg.seed, "quick": quick,
              "pass": bool(body["pass"]), "result": body}
    _write(_json(report), out or cfg.output)
    return EXIT_PASS if report["pass"] else EXIT_FAIL


def cmd_report(cfg: RunConfig | None, seed: int | None, quick: bool = False, out: str | None = None) -> int:
    results = []
    for i in sorted(acceptance.CRITERIA):
        rep = acceptance.CRITERIA[i](quick) if seed is None else acceptance.CRITERIA[i](quick, seed + i)
        print(acceptance.summary_line(rep), file=sys.stderr)
        results.append(_strip_timing(rep))
    report = {
        "config_hash": cfg.hash if cfg else None,
        "seed": seed,
        "quick": quick,
        "pass": all(r["pass"] for r in results),
        "criteria": results,
    }
    _write(_json(report), out or (cfg.output if cfg else None))
    return EXIT_PASS if report["pass"] else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed (unsigned 64-bit)")
    common.add_argument("--quick", action="store_true", help="reduced ensembles, z threshold 6")
    common.add_argument("--out", help="output path (default: stdout)")
    p = argparse.ArgumentParser(prog="susylangevin", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate and write correlation estimates as CSV")
    c = sub.add_parser("check", parents=[common], help="run one check and write a JSON report")
    c.add_argument("which", choices=CHECKS)
    sub.add_parser("report", parents=[common], help="run the acceptance suite")
    return p


def _load(args) -> RunConfig | None:
    cfg = load_config(args.config) if args.config else None
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
        cfg = (cfg or default_kramers()).replace(seed=args.seed)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    try:
        cfg = _load(args)
        if args.command == "simulate":
            return cmd_simulate(cfg or default_kramers(), args.quick, args.out)
        if args.command == "check":
            return cmd_check(cfg or default_kramers(), args.which, args.quick, args.out)
        return cmd_report(cfg if args.config else None, args.seed, args.quick, args.out)
    except (ConfigError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
