"""White and auxiliary noises on a time grid, and whiteness statistics.

Conventions: a sliced delta function is ``(1/epsilon)`` times the Kronecker
delta, so a white sample has variance ``1/epsilon`` per slice.  The derivative
is sliced as the backward difference ``(1 - S)/epsilon`` where ``S`` shifts one
slice into the past.  An operator ``Lambda = sum_k l_k d^k`` of order ``K`` is
sliced as

    Lambda_S = sum_k l_k ((1 - S)/epsilon)^k S^(K - k),

a lower-triangular Toeplitz matrix with diagonal ``epsilon^-K`` (``l_K = 1``).
Auxiliary noise is ``nu = sqrt(sigma) Lambda_S^{-1} w`` with zero initial data,
so ``Lambda_S nu = sqrt(sigma) w`` holds exactly for every realisation.

Inside an ``a``-sliced simulation the drift is weighted by ``W = a + (1 - a) S``
and eliminating the auxiliary components produces ``Lambda_a = sum_k l_k
nabla^k W^(K - k)`` acting on the auxiliary noise and ``W^(N-1)`` acting on the
white one.  Driving the auxiliary channels with
``sqrt(sigma) Lambda_a^{-1} W^K w`` then makes the eliminated equation for
``x_1`` identical in law for every sigma (see :func:`draw_driving_noise`).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import linalg, signal

from .model import TimeGrid

# ---------------------------------------------------------------------------
# random streams


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for ``(seed, *key)``.

    Streams for distinct keys are independent and do not depend on the order
    in which they are created, so ensembles can be split across workers.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


@dataclass(frozen=True)
class NoiseSample:
    """Noise on one channel; ``values`` has shape ``(..., M)``."""

    channel: int
    values: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[-1:] != (self.grid.M,):
            raise ValueError(f"noise on channel {self.channel} has {v.shape[-1:]} slices, grid has M={self.grid.M}")
        object.__setattr__(self, "values", v)


def sample_white(grid: TimeGrid, rng: np.random.Generator, size: int | tuple | None = None,
                 channel: int = 0) -> NoiseSample:
    shape = (() if size is None else tuple(np.atleast_1d(size))) + (grid.M,)
    return NoiseSample(channel, rng.standard_normal(shape) / np.sqrt(grid.epsilon), grid)


# ---------------------------------------------------------------------------
# sliced Lambda


def weight_taps(power: int, a: float = 0.0) -> np.ndarray:
    """``W^power`` with ``W = a + (1 - a) S`` as a polynomial in ``S``."""
    return npoly.polypow(np.array([a, 1.0 - a]), power) if power else np.ones(1)


def sliced_lambda_taps(lambda_coeffs: Sequence[float], epsilon: float, a: float = 0.0) -> np.ndarray:
    """Coefficients of the sliced operator as a polynomial in the shift ``S``.

    ``a = 0`` gives ``sum_k l_k nabla^k S^(K-k)``; in general ``S`` is replaced
    by the drift weight ``W = a + (1 - a) S``.
    """
    coeffs = np.asarray(lambda_coeffs, dtype=float)
    K = len(coeffs) - 1
    if K < 0:
        raise ValueError("empty Lambda")
    nabla = np.array([1.0, -1.0]) / epsilon
    taps = np.zeros(K + 1)
    for k, lk in enumerate(coeffs):
        term = npoly.polymul(npoly.polypow(nabla, k), weight_taps(K - k, a))
        taps[: len(term)] += lk * term
    if taps[0] == 0.0:
        raise RuntimeError("sliced Lambda has a zero diagonal")
    return taps


def sliced_lambda_matrix(lambda_coeffs: Sequence[float], grid: TimeGrid) -> np.ndarray:
    taps = sliced_lambda_taps(lambda_coeffs, grid.epsilon)
    col = np.zeros(grid.M)
    col[: min(len(taps), grid.M)] = taps[: grid.M]
    return linalg.toeplitz(col, np.eye(1, grid.M).ravel() * col[0])


def apply_lambda(lambda_coeffs: Sequence[float], values: np.ndarray, epsilon: float) -> np.ndarray:
    """``Lambda_S`` applied along the last axis (zero data before slice 0)."""
    return signal.lfilter(sliced_lambda_taps(lambda_coeffs, epsilon), [1.0], values, axis=-1)


def solve_lambda(lambda_coeffs: Sequence[float], values: np.ndarray, epsilon: float) -> np.ndarray:
    """Causal inverse ``Lambda_S^{-1}`` along the last axis."""
    return signal.lfilter([1.0], sliced_lambda_taps(lambda_coeffs, epsilon), values, axis=-1)


def aux_covariance(sigma_n: float, lambda_coeffs: Sequence[float], grid: TimeGrid) -> np.ndarray:
    """Exact sliced covariance ``(sigma_n/epsilon) (Lambda^T Lambda)^{-1}``."""
    L = sliced_lambda_matrix(lambda_coeffs, grid)
    Linv = linalg.solve_triangular(L, np.eye(grid.M), lower=True)
    return sigma_n / grid.epsilon * Linv @ Linv.T


def aux_from_white(sigma_n: float, lambda_coeffs: Sequence[float], w: NoiseSample, channel: int | None = None) -> NoiseSample:
    vals = np.sqrt(sigma_n) * solve_lambda(lambda_coeffs, w.values, w.grid.epsilon)
    return NoiseSample(w.channel if channel is None else channel, vals, w.grid)


def sample_aux(grid: TimeGrid, sigma_n: float, lambda_coeffs: Sequence[float], rng: np.random.Generator,
               size: int | tuple | None = None, channel: int = 0) -> NoiseSample:
    if not sigma_n > 0:
        raise ValueError(f"auxiliary channel {channel}: sigma_n must be > 0, got {sigma_n}")
    return aux_from_white(sigma_n, lambda_coeffs, sample_white(grid, rng, size, channel))


def assemble_combined(nu_N: NoiseSample, aux: Sequence[NoiseSample],
                      lambda_coeffs: Sequence[Sequence[float]]) -> NoiseSample:
    """``eta = nu_N + sum_n Lambda_n nu_n``."""
    if len(aux) != len(lambda_coeffs):
        raise ValueError("one Lambda per auxiliary channel is required")
    eta = nu_N.values.copy()
    for nu, lam in zip(aux, lambda_coeffs):
        if nu.grid != nu_N.grid:
            raise ValueError(f"grid mismatch on channel {nu.channel}: {nu.grid} vs {nu_N.grid}")
        eta = eta + apply_lambda(lam, nu.values, nu.grid.epsilon)
    return NoiseSample(nu_N.channel, eta, nu_N.grid)


# ---------------------------------------------------------------------------
# whiteness


@dataclass(frozen=True)
class CovarianceReport:
    estimate: np.ndarray
    stderr: np.ndarray
    z: np.ndarray
    target: np.ndarray
    n_samples: int
    threshold: float = 5.0

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    @property
    def worst(self) -> tuple[int, int]:
        i, j = np.unravel_index(int(np.argmax(np.abs(self.z))), self.z.shape)
        return int(i), int(j)

    @property
    def passed(self) -> bool:
        return self.max_abs_z < self.threshold

    def summary(self) -> dict:
        i, j = self.worst
        return {
            "n_samples": self.n_samples,
            "M": int(self.estimate.shape[0]),
            "max_abs_z": self.max_abs_z,
            "worst_pair": [i, j],
            "threshold": self.threshold,
            "pass": self.passed,
        }

    def to_csv(self, path: str | Path) -> None:
        M = self.estimate.shape[0]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["i", "j", "estimate", "stderr", "z"])
            for i in range(M):
                for j in range(i, M):
                    wr.writerow([i, j, repr(self.estimate[i, j]), repr(self.stderr[i, j]), repr(self.z[i, j])])


def whiteness_test(samples, epsilon: float | None = None, *, threshold: float = 5.0,
                   target: np.ndarray | None = None, min_samples: int = 1000) -> CovarianceReport:
    """Second-moment matrix of zero-mean samples against ``(1/epsilon) I``.

    ``samples`` is an array ``(K, M)``, a NoiseSample with 2-d values, or a
    list of NoiseSamples.  The standard error of each entry is the sample
    standard deviation of the products ``eta_i eta_j`` over ``sqrt(K)``.
    """
    if isinstance(samples, NoiseSample):
        X, eps = samples.values, samples.grid.epsilon
    elif isinstance(samples, (list, tuple)) and samples and isinstance(samples[0], NoiseSample):
        X, eps = np.stack([s.values for s in samples]), samples[0].grid.epsilon
    else:
        X, eps = np.asarray(samples, dtype=float), epsilon
    if eps is None and target is None:
        raise ValueError("epsilon is needed to form the white target")
    X = np.atleast_2d(X)
    K, M = X.shape
    if K < min_samples:
        raise ValueError(f"whiteness test needs >= {min_samples} samples, got {K}")
    est = X.T @ X / K
    sq = (X * X).T @ (X * X) / K
    stderr = np.sqrt(np.maximum(sq - est**2, 0.0) / (K - 1))
    tgt = np.eye(M) / eps if target is None else target
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(stderr > 0, (est - tgt) / stderr, np.where(est == tgt, 0.0, np.inf))
    return CovarianceReport(est, stderr, z, tgt, K, threshold)


def ar1_noise(grid: TimeGrid, rng: np.random.Generator, K: int, rho: float = 0.3) -> np.ndarray:
    """Correlated (AR(1)) samples with the white marginal variance; a fault for tests."""
    w = rng.standard_normal((K, grid.M))
    x = signal.lfilter([np.sqrt(1 - rho**2)], [1.0, -rho], w, axis=-1)
    x[:, 0] = w[:, 0]
    return x / np.sqrt(grid.epsilon)


def orthogonal_mix(samples: np.ndarray, A: np.ndarray, *, tol: float = 1e-12) -> np.ndarray:
    """``A eta`` for every sample (rows of ``samples``)."""
    A = np.asarray(A, dtype=float)
    M = A.shape[0]
    if A.shape != (M, M) or np.max(np.abs(A.T @ A - np.eye(M))) > tol:
        raise ValueError("mixing matrix is not orthogonal to 1e-12")
    return np.asarray(samples) @ A.T


def householder(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    return np.eye(len(v)) - 2.0 * np.outer(v, v)


# ---------------------------------------------------------------------------
# noise for a first-order system


@dataclass(frozen=True)
class DrivingNoise:
    """Per-component driving noise ``(B, M, N)`` and the underlying white draws."""

    drive: np.ndarray
    white: dict  # channel (1-based component) -> (B, M) array


def draw_driving_noise(system, grid: TimeGrid, seed: int, block: int, B: int, a: float = 0.0) -> DrivingNoise:
    """Noise for ``B`` trajectories of block ``block``; one stream per channel.

    Auxiliary channels receive ``sqrt(sigma_n) Lambda_a^{-1} W^K w`` so that,
    after elimination, ``x_1`` is driven by ``S W^(N-1)`` applied to
    ``sqrt(1 - sigma) w_N + sum_n sqrt(sigma_n) w_n``: white noise of unit
    weight whatever the split.
    """
    N = system.dimension
    drive = np.zeros((B, grid.M, N))
    white = {}
    for ch in system.channels:
        if ch.weight == 0.0:
            continue
        comp = ch.component
        w = stream(seed, block, comp + 1).standard_normal((B, grid.M)) / np.sqrt(grid.epsilon)
        white[comp + 1] = w
        if ch.is_white:
            drive[:, :, comp] = np.sqrt(ch.weight) * w
        else:
            K = len(ch.lambda_coeffs) - 1
            taps = sliced_lambda_taps(ch.lambda_coeffs, grid.epsilon, a)
            drive[:, :, comp] = np.sqrt(ch.weight) * signal.lfilter(weight_taps(K, a), taps, w, axis=-1)
    return DrivingNoise(drive, white)


def combined_from_white(system, white: dict) -> np.ndarray:
    """Combined noise ``nu_N + sum sqrt(sigma_n) w_n`` from the recorded white draws."""
    out = None
    for ch in system.channels:
        w = white.get(ch.component + 1)
        if w is None:
            continue
        term = np.sqrt(ch.weight) * w
        out = term if out is None else out + term
    return out
