"""Sliced linearised Langevin operators and their log-determinants.

Every operator is multiplied by ``epsilon`` per channel slot, which removes
the ``epsilon^-M`` factor: a free first-order operator (F' = 0) then has unit
determinant.  Rows and columns run over the free slices ``x_1..x_M``; the
initial slice is fixed data, so the matrices are causal (block lower
triangular up to the equal-time coupling).

First-order operator, row ``i``::

    x_i:      1 + eps a F'_i
    x_{i-1}: -1 + eps (1 - a) F'_{i-1}

Kramers pair ``(v, x)`` interleaved per slice, rows ``v_i`` and ``x_i``::

    v_i: [v_i] 1 + eps a g_i   [x_i] eps a F'_i   [v_{i-1}] -1 + eps (1-a) g_{i-1}   [x_{i-1}] eps (1-a) F'_{i-1}
    x_i: [x_i] 1               [v_i] -eps a       [x_{i-1}] -1                        [v_{i-1}] -eps (1-a)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .model import TimeGrid, check_slicing


@dataclass(frozen=True)
class LogDet:
    value: float
    sign: int
    degenerate: bool = False
    normalization: str = "epsilon per slot"

    def __iter__(self):
        yield self.value
        yield self.sign


@dataclass(frozen=True)
class SlicedOperator:
    """Square band matrix in LAPACK ``gbtrf`` layout.

    ``ab[kl + ku + i - j, j] = A[i, j]`` for ``max(0, j - ku) <= i <= min(n - 1, j + kl)``;
    the top ``kl`` rows are workspace for pivoting.
    """

    ab: np.ndarray
    kl: int
    ku: int
    channels: int
    M: int
    a: float
    grid: TimeGrid | None = None
    label: str = ""

    @property
    def n(self) -> int:
        return self.ab.shape[1]

    def dense(self) -> np.ndarray:
        n, kl, ku = self.n, self.kl, self.ku
        A = np.zeros((n, n))
        for j in range(n):
            lo, hi = max(0, j - ku), min(n, j + kl + 1)
            A[lo:hi, j] = self.ab[kl + ku + np.arange(lo, hi) - j, j]
        return A

    @classmethod
    def from_dense(cls, A: np.ndarray, kl: int, ku: int, channels: int = 1, a: float = 0.0,
                   grid: TimeGrid | None = None, label: str = "") -> "SlicedOperator":
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        ab = np.zeros((2 * kl + ku + 1, n))
        for j in range(n):
            lo, hi = max(0, j - ku), min(n, j + kl + 1)
            ab[kl + ku + np.arange(lo, hi) - j, j] = A[lo:hi, j]
        return cls(ab, kl, ku, channels, n // channels, a, grid, label)


def _check_len(arr, M, name):
    arr = np.broadcast_to(np.asarray(arr, dtype=float), (M,)) if np.ndim(arr) == 0 else np.asarray(arr, dtype=float)
    if arr.shape != (M,):
        raise ValueError(f"{name} must have length M={M}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# builders


def first_order_matrix(Fp, a: float, epsilon: float) -> np.ndarray:
    Fp = np.asarray(Fp, dtype=float)
    M = Fp.shape[0]
    A = np.diag(1.0 + epsilon * a * Fp)
    A[np.arange(1, M), np.arange(M - 1)] = -1.0 + epsilon * (1.0 - a) * Fp[:-1]
    return A


def build_first_order(Fprime_values, a: float, grid: TimeGrid) -> SlicedOperator:
    a = check_slicing(a)
    Fp = _check_len(Fprime_values, grid.M, "Fprime_values")
    return SlicedOperator.from_dense(first_order_matrix(Fp, a, grid.epsilon), 1, 0, 1, a, grid, "first-order")


def kramers_blocks(gamma, Fp, a: float, epsilon: float):
    """Blocks ``A, B, C, D`` of the Kramers operator in (v, x) block ordering."""
    M = Fp.shape[0]
    A = first_order_matrix(gamma, a, epsilon)
    B = np.diag(epsilon * a * Fp)
    B[np.arange(1, M), np.arange(M - 1)] = epsilon * (1.0 - a) * Fp[:-1]
    C = -epsilon * (a * np.eye(M) + (1.0 - a) * np.eye(M, k=-1))
    D = first_order_matrix(np.zeros(M), a, epsilon)
    return A, B, C, D


def block_matrix(gamma, Fp, a: float, epsilon: float) -> np.ndarray:
    """Dense Kramers operator with (v_i, x_i) interleaved per slice."""
    A, B, C, D = kramers_blocks(gamma, Fp, a, epsilon)
    M = Fp.shape[0]
    out = np.empty((2 * M, 2 * M))
    out[0::2, 0::2], out[0::2, 1::2] = A, B
    out[1::2, 0::2], out[1::2, 1::2] = C, D
    return out


def build_block_kramers(gamma, Fprime_values, a: float, grid: TimeGrid) -> SlicedOperator:
    a = check_slicing(a)
    Fp = _check_len(Fprime_values, grid.M, "Fprime_values")
    g = _check_len(gamma, grid.M, "gamma")
    return SlicedOperator.from_dense(block_matrix(g, Fp, a, grid.epsilon), 3, 1, 2, a, grid, "block-kramers")


def build_second_order(gamma, Fprime_values, grid: TimeGrid, a: float = 0.5) -> SlicedOperator:
    """``AD - BC`` from the first-order blocks.

    C and D are both polynomials in the shift, so they commute and
    ``det [[A, B], [C, D]] = det(AD - BC)`` holds exactly.
    """
    a = check_slicing(a)
    if grid.M < 2:
        raise ValueError("second-order operator needs M >= 2")
    Fp = _check_len(Fprime_values, grid.M, "Fprime_values")
    g = _check_len(gamma, grid.M, "gamma")
    A, B, C, D = kramers_blocks(g, Fp, a, grid.epsilon)
    return SlicedOperator.from_dense(A @ D - B @ C, 2, 0, 1, a, grid, "second-order")


# ---------------------------------------------------------------------------
# determinants


def logdet(op) -> LogDet:
    """Log-determinant by banded LU (dense input goes through ``slogdet``)."""
    if not isinstance(op, SlicedOperator):
        A = np.asarray(op, dtype=float)
        sign, val = np.linalg.slogdet(A)
        if sign == 0:
            return LogDet(-np.inf, 0, True)
        return LogDet(float(val), int(sign))
    if not np.any(op.ab[op.kl: op.kl + op.ku]):
        # lower triangular: the determinant is the diagonal product, no pivoting
        diag = op.ab[op.kl + op.ku]
        if np.any(diag == 0.0):
            return LogDet(-np.inf, 0, True)
        return LogDet(float(np.sum(np.log(np.abs(diag)))), int(np.prod(np.sign(diag))))
    lu, piv, info = lapack.dgbtrf(op.ab.copy(), op.kl, op.ku)
    if info < 0:
        raise ValueError(f"dgbtrf: illegal argument {-info}")
    if info > 0:
        return LogDet(-np.inf, 0, True)
    diag = lu[op.kl + op.ku]
    swaps = int(np.count_nonzero(piv != np.arange(op.n)))
    sign = (-1) ** swaps * int(np.prod(np.sign(diag)))
    return LogDet(float(np.sum(np.log(np.abs(diag)))), sign)


def _dense_logdet(A) -> tuple[float, int]:
    s, v = np.linalg.slogdet(A)
    return float(v), int(s)


def schur_det(gamma, Fprime_values, a: float, grid: TimeGrid) -> LogDet:
    """``det D * det(A - B D^{-1} C)``, the complement with respect to the x block."""
    Fp = _check_len(Fprime_values, grid.M, "Fprime_values")
    g = _check_len(gamma, grid.M, "gamma")
    A, B, C, D = kramers_blocks(g, Fp, a, grid.epsilon)
    DinvC = linalg.solve_triangular(D, C, lower=True)
    v1, s1 = _dense_logdet(D)
    v2, s2 = _dense_logdet(A - B @ DinvC)
    return LogDet(v1 + v2, s1 * s2, s1 * s2 == 0)


def nonlocal_fermion_det(gamma, Fprime_values, grid: TimeGrid, a: float = 0.5) -> LogDet:
    """``det(d + gamma) * det(d + (d + gamma)^{-1} F')`` with a causal solve."""
    Fp = _check_len(Fprime_values, grid.M, "Fprime_values")
    g = _check_len(gamma, grid.M, "gamma")
    A, B, C, D = kramers_blocks(g, Fp, a, grid.epsilon)
    AinvB = linalg.solve_triangular(A, B, lower=True)
    v1, s1 = _dense_logdet(A)
    v2, s2 = _dense_logdet(D - C @ AinvB)
    return LogDet(v1 + v2, s1 * s2, s1 * s2 == 0)


def stratonovich_reference(Fprime_values, epsilon: float) -> float:
    """Continuum value ``(1/2) sum eps F'_i`` of the a = 1/2 log-determinant."""
    return 0.5 * epsilon * float(np.sum(Fprime_values))


def naive_second_order_logdet(gamma: float, Fprime_values, grid: TimeGrid, boundary_row: tuple[float, float]) -> LogDet:
    """Log-det of a plain three-point stencil of ``d^2 + gamma d + F'``.

    Rows 2..M use ``(x_i - 2 x_{i-1} + x_{i-2})/eps^2 + gamma (x_i - x_{i-1})/eps + F'_{i-1} x_{i-1}``
    (times eps^2); the first row cannot be written without an extra boundary
    condition and is given as ``boundary_row = (diag, 0)`` coefficients on
    ``(x_1, x_2)``.  The result depends on that arbitrary choice.
    """
    Fp = _check_len(Fprime_values, grid.M, "Fprime_values")
    e = grid.epsilon
    M = grid.M
    A = np.zeros((M, M))
    A[0, 0], A[0, 1] = boundary_row
    for i in range(1, M):
        A[i, i] = 1.0 + e * gamma
        A[i, i - 1] = -2.0 - e * gamma + e * e * Fp[i - 1]
        if i >= 2:
            A[i, i - 2] = 1.0
    return logdet(A)


# ---------------------------------------------------------------------------
# reports


def identity_report(gamma, Fprime_values, grid: TimeGrid, a: float = 0.5, rtol: float = 1e-10) -> dict:
    g = _check_len(gamma, grid.M, "gamma")
    Fp = _check_len(Fprime_values, grid.M, "Fprime_values")
    h = hashlib.sha256(np.concatenate([g, Fp, [grid.epsilon, a]]).tobytes()).hexdigest()[:16]
    block = logdet(build_block_kramers(g, Fp, a, grid))
    second = logdet(build_second_order(g, Fp, grid, a))
    schur = schur_det(g, Fp, a, grid)
    nonloc = nonlocal_fermion_det(g, Fp, grid, a)
    ref = block.value
    scale = abs(ref) if ref != 0.0 else 1.0
    rel = {
        "schur": abs(schur.value - ref) / scale,
        "nonlocal": abs(nonloc.value - ref) / scale,
        "second_order": abs(second.value - ref) / scale,
    }
    signs_ok = block.sign == schur.sign == nonloc.sign == second.sign
    return {
        "inputs_hash": h,
        "M": grid.M,
        "epsilon": grid.epsilon,
        "a": a,
        "logdet": {"block": block.value, "schur": schur.value, "nonlocal": nonloc.value,
                   "second_order": second.value},
        "relative_difference": rel,
        "max_relative_difference": max(rel.values()),
        "pass": bool(signs_ok and max(rel.values()) < rtol),
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
