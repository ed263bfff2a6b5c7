"""Time-sliced integration, ensembles and correlation estimators.

A step solves

    (x_i - x_{i-1}) / epsilon + a f(x_i) + (1 - a) f(x_{i-1}) = noise_{i-1}

for ``x_i``; ``a = 0`` is the explicit Euler-Maruyama update.  Trajectories are
simulated in blocks vectorised over the trajectory axis.  Each block draws its
noise from its own counter-based streams, so results depend only on the seed
and the block size, never on thread scheduling.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .model import FirstOrderSystem, ProcessSpec, StateFriction, TimeGrid, check_slicing, state_friction_direct
from .noise import DrivingNoise, draw_driving_noise, stream, weight_taps

BLOCK_SIZE = 4096
THREADS_ENV = "SUSYLANGEVIN_THREADS"


class SimulationError(RuntimeError):
    pass


class NewtonError(SimulationError):
    pass


# ---------------------------------------------------------------------------
# single steps (vectorised over leading axes)


def step_causal(system: FirstOrderSystem, x_prev, noise, epsilon: float, slice_index: int | None = None):
    x_prev = np.asarray(x_prev, dtype=float)
    x = x_prev + epsilon * (-system.drift(x_prev) + noise)
    if not np.all(np.isfinite(x)):
        raise SimulationError(f"non-finite state at slice {slice_index}")
    return x


def step_sliced(system: FirstOrderSystem, a: float, x_prev, noise, epsilon: float, *,
                tol: float = 1e-12, max_iter: int = 50, slice_index: int | None = None):
    """Implicit ``a``-weighted step by damped Newton iteration."""
    if a == 0.0:
        return step_causal(system, x_prev, noise, epsilon, slice_index)
    x_prev = np.asarray(x_prev, dtype=float)
    noise = np.asarray(noise, dtype=float)
    base = x_prev + epsilon * (-(1.0 - a) * system.drift(x_prev) + noise)
    x = x_prev + epsilon * (-system.drift(x_prev) + noise)  # explicit predictor
    if not np.all(np.isfinite(x)):
        x = x_prev.copy()
    eye = np.eye(system.dimension)

    def residual(y):
        return y + epsilon * a * system.drift(y) - base

    r = residual(x)
    rn = np.max(np.abs(r), axis=-1)
    for _ in range(max_iter):
        scale = 1.0 + np.max(np.abs(x), axis=-1)
        if np.all(rn <= tol * scale):
            break
        J = eye + epsilon * a * system.jacobian(x)
        if system.dimension == 1:
            dx = r / J[..., 0]
        else:
            dx = np.linalg.solve(J, r[..., None])[..., 0]
        lam = np.ones(rn.shape)
        trial = x - lam[..., None] * dx
        rt = residual(trial)
        rtn = np.max(np.abs(rt), axis=-1)
        for _ in range(30):
            bad = ~(rtn <= rn) & (rn > tol * scale)
            if not np.any(bad):
                break
            lam = np.where(bad, 0.5 * lam, lam)
            trial = x - lam[..., None] * dx
            rt = residual(trial)
            rtn = np.max(np.abs(rt), axis=-1)
        x, r, rn = trial, rt, rtn
    else:
        scale = 1.0 + np.max(np.abs(x), axis=-1)
        if not np.all(rn <= tol * scale):
            raise NewtonError(
                f"Newton did not converge at slice {slice_index}: residual {float(np.max(rn)):.3g}"
            )
    if not np.all(np.isfinite(x)):
        raise SimulationError(f"non-finite state at slice {slice_index}")
    return x


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (M+1, N)
    noise: dict  # channel -> (M,) white draws
    grid: TimeGrid


@dataclass
class Ensemble:
    """``states[k, s, n]`` at kept slice indices ``slices[s]``."""

    states: np.ndarray
    slices: np.ndarray
    grid: TimeGrid
    a: float
    seed: int
    system: FirstOrderSystem
    white: dict = field(default_factory=dict)  # channel -> (K, M) when recorded
    drive: np.ndarray | None = None  # (K, M, N) when recorded
    label: str = ""

    @property
    def K(self) -> int:
        return self.states.shape[0]

    def column(self, t: float, component: int = 0) -> np.ndarray:
        i = self.grid.index(t)
        pos = np.searchsorted(self.slices, i)
        if pos >= len(self.slices) or self.slices[pos] != i:
            raise SimulationError(f"slice {i} (t={t}) was not kept")
        return self.states[:, pos, component]

    def trajectory(self, k: int) -> Trajectory:
        return Trajectory(self.states[k], {c: w[k] for c, w in self.white.items()}, self.grid)


def relaxation_time(system: FirstOrderSystem) -> float:
    """Slowest linear relaxation time at the origin."""
    rates = np.real(system.linearized_rates())
    slow = np.min(rates) if rates.size else 0.0
    if slow <= 0:
        raise SimulationError("the linearised drift is not relaxing; give burn_in explicitly")
    return 1.0 / slow


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Block:
    index: int
    start: int
    states: np.ndarray  # (B, n_keep, N) or (B, M_total + 1, N) when full
    noise: DrivingNoise
    offset: int  # burn-in slices preceding the recorded window


def _integrate_block(system, grid_total: TimeGrid, a, seed, b, B, x0, keep_total, tol, full):
    noise = draw_driving_noise(system, grid_total, seed, b, B, a)
    N = system.dimension
    M = grid_total.M
    x = np.broadcast_to(np.asarray(x0, dtype=float), (B, N)).copy()
    if full:
        out = np.empty((B, M + 1, N))
        out[:, 0] = x
    else:
        out = np.empty((B, len(keep_total), N))
        kpos = 0
        if kpos < len(keep_total) and keep_total[kpos] == 0:
            out[:, 0] = x
            kpos = 1
    eps = grid_total.epsilon
    for i in range(1, M + 1):
        try:
            x = step_sliced(system, a, x, noise.drive[:, i - 1], eps, tol=tol, slice_index=i)
        except SimulationError as exc:
            raise SimulationError(f"block {b} (trajectories {b * BLOCK_SIZE}+): {exc}") from exc
        if full:
            out[:, i] = x
        elif kpos < len(keep_total) and keep_total[kpos] == i:
            out[:, kpos] = x
            kpos += 1
    return noise, out


def iter_blocks(system: FirstOrderSystem, grid: TimeGrid, a: float, K: int, seed: int, *,
                x0=None, burn_in: float = 0.0, keep: Sequence[int] | None = None,
                full: bool = False, block_size: int = BLOCK_SIZE, tol: float = 1e-12) -> Iterator[Block]:
    """Integrate ``K`` trajectories block by block.

    ``grid`` is the recorded window; ``burn_in`` (time) is simulated first.
    With ``full`` the whole path (burn-in included) is returned per block.
    """
    a = check_slicing(a)
    if K < 1:
        raise ValueError("K must be >= 1")
    n_burn = int(round(burn_in / grid.epsilon)) if burn_in else 0
    total = TimeGrid(grid.epsilon, grid.M + n_burn)
    keep = np.arange(grid.M + 1) if keep is None else np.asarray(sorted(set(int(k) for k in keep)))
    if keep.size and (keep[0] < 0 or keep[-1] > grid.M):
        raise ValueError(f"kept slices must lie in 0..{grid.M}")
    keep_total = keep + n_burn
    x0 = np.zeros(system.dimension) if x0 is None else np.asarray(x0, dtype=float)
    starts = list(range(0, K, block_size))

    def work(b):
        B = min(block_size, K - starts[b])
        noise, out = _integrate_block(system, total, a, seed, b, B, x0, keep_total, tol, full)
        return Block(b, starts[b], out, noise, n_burn)

    threads = _threads()
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(threads) as pool:
            yield from pool.map(work, range(len(starts)))
    else:
        for b in range(len(starts)):
            yield work(b)


def run_ensemble(system: FirstOrderSystem, grid: TimeGrid, a: float, K: int, seed: int, *,
                 x0=None, burn_in: float | None = 0.0, keep: Sequence[int] | None = None,
                 record_noise: bool = False, block_size: int = BLOCK_SIZE, tol: float = 1e-12,
                 label: str = "") -> Ensemble:
    """``K`` trajectories of ``system`` on ``grid``.

    ``burn_in=None`` uses ten linear relaxation times.  ``keep`` lists the
    recorded slice indices (default: all).  With ``record_noise`` the white
    draws and per-component driving noise of the recorded window are stored.
    """
    if burn_in is None:
        burn_in = 10.0 * relaxation_time(system)
    keep_arr = np.arange(grid.M + 1) if keep is None else np.asarray(sorted(set(int(k) for k in keep)))
    states, white, drive = [], {}, []
    for blk in iter_blocks(system, grid, a, K, seed, x0=x0, burn_in=burn_in, keep=keep_arr,
                           block_size=block_size, tol=tol):
        states.append(blk.states)
        if record_noise:
            for ch, w in blk.noise.white.items():
                white.setdefault(ch, []).append(w[:, blk.offset:])
            drive.append(blk.noise.drive[:, blk.offset:])
    return Ensemble(
        np.concatenate(states),
        keep_arr,
        grid,
        a,
        seed,
        system,
        {ch: np.concatenate(ws) for ch, ws in white.items()},
        np.concatenate(drive) if record_noise else None,
        label,
    )


# ---------------------------------------------------------------------------
# direct higher-order recurrence


def direct_recurrence_taps(spec: ProcessSpec, epsilon: float, a: float):
    """Taps (polynomials in the shift S) of the sliced Nth-order equation.

        P_S x + W^N F(x) = S W^(N-1) eta,
        P_S = nabla^N + sum_{m<N} gamma_m W^(N-m) nabla^m,  W = a + (1 - a) S.
    """
    N = spec.order
    g = spec.gammas
    nabla = np.array([1.0, -1.0]) / epsilon
    P = np.zeros(N + 1)
    for m in range(N + 1):
        term = np.polynomial.polynomial.polymul(np.polynomial.polynomial.polypow(nabla, m), weight_taps(N - m, a))
        P[: len(term)] += g[m] * term
    Wn = np.zeros(N + 1)
    Wn[: N + 1] = weight_taps(N, a)
    rhs = np.zeros(N + 1)
    rhs[1:] = weight_taps(N - 1, a)
    return P, Wn, rhs


def simulate_direct(spec: ProcessSpec, grid: TimeGrid, a: float, K: int, seed: int, *,
                    burn_in: float = 0.0, keep: Sequence[int] | None = None,
                    initial_derivatives=None, block_size: int = BLOCK_SIZE, tol: float = 1e-12,
                    label: str = "direct") -> Ensemble:
    """Integrate the Nth-order equation itself as an (N+1)-point recurrence.

    For constant friction the white draws come from the same stream as the
    reduced system's last channel, so at sigma = 0 both paths coincide up to
    rounding.  A state-dependent friction is integrated as the plain
    ``(x, v)`` pair without the lambda split.
    """
    if isinstance(spec.friction, StateFriction):
        sysd = state_friction_direct(spec)
        return run_ensemble(sysd, grid, a, K, seed, burn_in=burn_in, keep=keep,
                            block_size=block_size, tol=tol, label=label)
    a = check_slicing(a)
    N = spec.order
    eps = grid.epsilon
    P, Wn, R = direct_recurrence_taps(spec, eps, a)
    F, Fp = spec.force, spec.force.deriv()
    n_burn = int(round(burn_in / eps)) if burn_in else 0
    M = grid.M + n_burn
    keep_arr = np.arange(grid.M + 1) if keep is None else np.asarray(sorted(set(int(k) for k in keep)))
    keep_total = keep_arr + n_burn
    d0 = np.zeros(N) if initial_derivatives is None else np.asarray(initial_derivatives, dtype=float)
    # history x_{-k} from the Taylor data at t = 0
    hist = np.array([sum(d0[m] * (-k * eps) ** m / math.factorial(m) for m in range(N)) for k in range(N + 1)])
    out_blocks = []
    for b, start in enumerate(range(0, K, block_size)):
        B = min(block_size, K - start)
        eta = stream(seed, b, N).standard_normal((B, M)) / np.sqrt(eps)
        xs = np.zeros((B, M + 1 + N))  # index j + N holds slice j
        for k in range(N + 1):
            xs[:, N - k] = hist[k]
        Fs = F(xs)
        kept = np.empty((B, len(keep_arr), 1))
        kpos = 0
        if keep_total.size and keep_total[0] == 0:
            kept[:, 0, 0] = xs[:, N]
            kpos = 1
        for i in range(1, M + 1):
            j = i + N
            rhs = sum(R[k] * eta[:, i - k] for k in range(1, N + 1) if i - k >= 0)
            rhs = rhs - sum(P[k] * xs[:, j - k] + Wn[k] * Fs[:, j - k] for k in range(1, N + 1))
            if Wn[0] == 0.0:
                x = rhs / P[0]
            else:
                x = xs[:, j - 1].copy()
                for _ in range(50):
                    r = P[0] * x + Wn[0] * F(x) - rhs
                    if np.all(np.abs(r) <= tol * P[0] * (1.0 + np.abs(x))):
                        break
                    x = x - r / (P[0] + Wn[0] * Fp(x))
                else:
                    raise NewtonError(f"direct recurrence: Newton failed at slice {i}")
            if not np.all(np.isfinite(x)):
                raise SimulationError(f"direct recurrence: non-finite state at slice {i}")
            xs[:, j] = x
            Fs[:, j] = F(x)
            if kpos < len(keep_total) and keep_total[kpos] == i:
                kept[:, kpos, 0] = x
                kpos += 1
        out_blocks.append(kept)
    from .model import reduce_to_first_order

    return Ensemble(np.concatenate(out_blocks), keep_arr, grid, a, seed, reduce_to_first_order(spec), label=label)


# ---------------------------------------------------------------------------
# estimators


@dataclass(frozen=True)
class CorrelationEstimate:
    value: float
    stderr: float
    t: float
    t2: float
    observable: str = "x*x"

    def z_against(self, target: float, extra_stderr: float = 0.0) -> float:
        se = math.hypot(self.stderr, extra_stderr)
        return (self.value - target) / se if se > 0 else (0.0 if self.value == target else math.inf)


def jackknife_mean(values: np.ndarray) -> tuple[float, float]:
    """Mean and delete-one jackknife standard error over the first axis.

    For a plain mean the jackknife variance reduces to ``s^2 / K``; this
    closed form is used instead of K explicit resamples.
    """
    v = np.asarray(values, dtype=float)
    K = v.shape[0]
    if K == 0:
        raise SimulationError("empty ensemble")
    mean = float(np.mean(v))
    if K < 2:
        return mean, 0.0
    return mean, float(np.std(v, ddof=1) / math.sqrt(K))


def jackknife(values: np.ndarray, estimator: Callable[[np.ndarray], float], n_blocks: int = 64) -> tuple[float, float]:
    """Blocked jackknife for a nonlinear estimator of per-trajectory rows."""
    v = np.asarray(values)
    K = v.shape[0]
    n_blocks = min(n_blocks, K)
    if n_blocks < 2:
        return float(estimator(v)), 0.0
    edges = np.linspace(0, K, n_blocks + 1).astype(int)
    full = float(estimator(v))
    reps = np.array([estimator(np.concatenate([v[: edges[b]], v[edges[b + 1]:]])) for b in range(n_blocks)])
    se = math.sqrt((n_blocks - 1) / n_blocks * np.sum((reps - reps.mean()) ** 2))
    return full, se


def correlate(ensemble: Ensemble, pairs: Sequence[tuple[float, float]], component: int = 0,
              observable: str = "x*x") -> list[CorrelationEstimate]:
    if ensemble.K == 0:
        raise SimulationError("empty ensemble")
    out = []
    for t, t2 in pairs:
        prod = ensemble.column(t, component) * ensemble.column(t2, component)
        m, se = jackknife_mean(prod)
        out.append(CorrelationEstimate(m, se, t, t2, observable))
    return out


def stationary_second_moment(ensemble: Ensemble, component: int = 0) -> CorrelationEstimate:
    """``<x^2>`` averaged over all kept slices, error by jackknife over trajectories."""
    per_traj = np.mean(ensemble.states[:, :, component] ** 2, axis=1)
    m, se = jackknife_mean(per_traj)
    t = float(ensemble.slices[-1] * ensemble.grid.epsilon)
    return CorrelationEstimate(m, se, t, t, "x^2")


def response(ensemble: Ensemble, t: float, t_prime: float, component: int = 0) -> CorrelationEstimate:
    """``<x_t nu_{t'}> / w`` with ``nu`` the white channel of weight ``w``.

    ``nu_{t'}`` is the noise of the step leaving slice ``t'``; by Gaussian
    integration by parts the estimate equals the averaged fermion propagator
    ``G[t, t' + epsilon]`` (see ``susy.ward_check``).
    """
    sysm = ensemble.system
    white_ch = [ch for ch in sysm.channels if ch.is_white][0]
    w = ensemble.white.get(white_ch.component + 1)
    if w is None:
        raise SimulationError("ensemble has no noise record; rerun with record_noise=True")
    ip = ensemble.grid.index(t_prime)
    if ip >= ensemble.grid.M:
        raise SimulationError("t' must precede the last slice")
    nu = np.sqrt(white_ch.weight) * w[:, ip]
    m, se = jackknife_mean(ensemble.column(t, component) * nu / white_ch.weight)
    return CorrelationEstimate(m, se, t, t_prime, "x*nu/w")


# ---------------------------------------------------------------------------
# output


def write_csv(path: str | Path, estimates: Sequence[CorrelationEstimate], metadata: dict) -> None:
    with open(path, "w", newline="") as fh:
        for k in sorted(metadata):
            fh.write(f"# {k}={metadata[k]}\n")
        wr = csv.writer(fh)
        wr.writerow(["observable", "t", "t_prime", "value", "stderr"])
        for e in estimates:
            wr.writerow([e.observable, repr(float(e.t)), repr(float(e.t2)), repr(e.value), repr(e.stderr)])
