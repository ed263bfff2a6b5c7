"""Run configuration: a JSON document validated into typed objects.

Schema::

    {
      "process": {"N": 2, "gamma_coeffs": [0.0, 1.0], "force_poly": [0.0, 1.0]},
      "grid": {"epsilon": 0.01, "M": 1000},
      "sigma": [0.25],
      "a": 0.0,
      "K": 20000,
      "seed": 1,
      "burn_in": null,
      "options": {},
      "output": null
    }

``gamma_poly_in_x`` (ascending coefficients of gamma(x)) replaces
``gamma_coeffs`` for a state-dependent friction and requires ``N = 2``.
Unknown keys are rejected at every level.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .model import (
    ConstFriction,
    Poly,
    ProcessSpec,
    SigmaVector,
    SpecError,
    StateFriction,
    TimeGrid,
    check_slicing,
)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


_TOP_KEYS = {"process", "grid", "sigma", "a", "K", "seed", "burn_in", "options", "output"}
_PROCESS_KEYS = {"N", "gamma_coeffs", "gamma_poly_in_x", "force_poly"}
_GRID_KEYS = {"epsilon", "M"}


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


def _floats(value, where: str) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise ConfigError(f"{where} must be a list of numbers")
    return tuple(float(v) for v in value)


@dataclass(frozen=True)
class RunConfig:
    process: ProcessSpec
    grid: TimeGrid
    sigma: SigmaVector = SigmaVector()
    a: float = 0.0
    K: int = 1000
    seed: int = 0
    burn_in: float | None = None
    options: dict = field(default_factory=dict)
    output: str | None = None

    # -- serialisation ---------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        proc: dict[str, Any] = {"N": self.process.order}
        if isinstance(self.process.friction, ConstFriction):
            proc["gamma_coeffs"] = list(self.process.friction.coeffs)
        else:
            proc["gamma_poly_in_x"] = list(self.process.friction.gamma.coeffs)
        proc["force_poly"] = list(self.process.force.coeffs)
        return {
            "process": proc,
            "grid": {"epsilon": self.grid.epsilon, "M": self.grid.M},
            "sigma": list(self.sigma.values),
            "a": self.a,
            "K": self.K,
            "seed": self.seed,
            "burn_in": self.burn_in,
            "options": dict(self.options),
            "output": self.output,
        }

    def dumps(self) -> str:
        # repr-based float encoding round-trips exactly
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        d = self.to_dict()
        d.update(changes)
        return parse_config(d)


def parse_config(data: dict | str) -> RunConfig:
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or not data:
        raise ConfigError("config is empty")
    _reject_unknown(data, _TOP_KEYS, "config")
    for key in ("process", "grid"):
        if key not in data:
            raise ConfigError(f"config: missing required key '{key}'")

    proc = data["process"]
    if not isinstance(proc, dict):
        raise ConfigError("process must be an object")
    _reject_unknown(proc, _PROCESS_KEYS, "process")
    N = proc.get("N")
    if not isinstance(N, int) or isinstance(N, bool) or N < 1:
        raise ConfigError(f"process.N must be an integer >= 1, got {N!r}")
    force = Poly(_floats(proc.get("force_poly", [0.0]), "process.force_poly"))
    if ("gamma_coeffs" in proc) == ("gamma_poly_in_x" in proc):
        raise ConfigError("process: give exactly one of gamma_coeffs or gamma_poly_in_x")
    try:
        if "gamma_coeffs" in proc:
            friction = ConstFriction(_floats(proc["gamma_coeffs"], "process.gamma_coeffs"))
        else:
            friction = StateFriction(Poly(_floats(proc["gamma_poly_in_x"], "process.gamma_poly_in_x")))
        spec = ProcessSpec(N, friction, force)
    except SpecError as exc:
        raise ConfigError(str(exc)) from exc

    grid_d = data["grid"]
    if not isinstance(grid_d, dict):
        raise ConfigError("grid must be an object")
    _reject_unknown(grid_d, _GRID_KEYS, "grid")
    try:
        eps = grid_d["epsilon"]
        M = grid_d["M"]
    except KeyError as exc:
        raise ConfigError(f"grid: missing key {exc}") from exc
    if not isinstance(M, int) or isinstance(M, bool):
        raise ConfigError(f"grid.M must be an integer, got {M!r}")
    if not isinstance(eps, (int, float)) or isinstance(eps, bool):
        raise ConfigError(f"grid.epsilon must be a number, got {eps!r}")
    try:
        grid = TimeGrid(float(eps), M)
        sigma = SigmaVector(_floats(data.get("sigma", []), "sigma")).for_order(N)
        a = check_slicing(data.get("a", 0.0))
    except SpecError as exc:
        raise ConfigError(str(exc)) from exc

    K = data.get("K", 1000)
    if not isinstance(K, int) or isinstance(K, bool) or K < 1:
        raise ConfigError(f"K must be an integer >= 1, got {K!r}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    burn_in = data.get("burn_in")
    if burn_in is not None and (not isinstance(burn_in, (int, float)) or burn_in < 0):
        raise ConfigError(f"burn_in must be a non-negative time or null, got {burn_in!r}")
    options = data.get("options", {})
    if not isinstance(options, dict):
        raise ConfigError("options must be an object")
    output = data.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("output must be a path string or null")
    return RunConfig(
        spec, grid, sigma, a, K, seed,
        None if burn_in is None else float(burn_in), dict(options), output,
    )


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not text.strip():
        raise ConfigError(f"config {path} is empty")
    return parse_config(text)


def default_kramers(**overrides) -> RunConfig:
    """Kramers process with gamma = 1, F = x."""
    base = {
        "process": {"N": 2, "gamma_coeffs": [0.0, 1.0], "force_poly": [0.0, 1.0]},
        "grid": {"epsilon": 0.01, "M": 2000},
        "sigma": [0.25],
        "a": 0.0,
        "K": 20000,
        "seed": 20240601,
    }
    base.update(overrides)
    return parse_config(base)
