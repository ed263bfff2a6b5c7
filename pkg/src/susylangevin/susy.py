"""Sliced supersymmetric actions, supercharges and Ward identities.

Conventions
-----------
Everything is real.  With ``p' = -i p`` the canonical action of a sliced
first-order system ``L_{n,i} = (x_{n,i} - x_{n,i-1})/eps + a f_n(x_i) + (1-a) f_n(x_{i-1})`` is

    S = sum eps p'.L - (1/2) eps^2 p'^T C p' + eps cbar J c,     J = dL/dx,

and the charge is the odd derivation

    Q = sum c_{m,j} d/dx_{m,j} - sum p'_{n,i} d/dcbar_{n,i}.

``c`` multiplies ``d/dx`` and ``cbar`` is its conjugate, for every
construction.  ``Q S = 0`` holds exactly: the degree-one terms cancel
pairwise and the degree-three terms vanish because ``d^2 L`` is symmetric.
``Q^2 = 0`` exactly.  The charge with the usual factors of ``i`` is ``i Q``.

The Lagrangian constructions eliminate the momenta and the auxiliary
components (sigma -> 0).  Their charge is

    Q = sum_j c_{1,j} d/dx_j - sum_{n,i} R_{n,i} d/dcbar_{n,i},
    R_N = L,   R_n = gamma_n L + nabla^T R_{n+1},

with ``(nabla^T v)_i = (v_i - v_{i+1})/eps`` and ``v_{M+1} = 0``.  Their
invariance holds in the continuum only; the sliced residual is O(eps) in
the bulk, while the last ``N`` slices carry a boundary term that grows as
eps shrinks.  Residual norms therefore sum over a fixed time window
``t <= 3T/4``; a window of a fixed number of slices would add a spurious
O(1/M) relative correction to the ladder.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .determinant import block_matrix, first_order_matrix
from .grassmann import (
    Derivation,
    GeneratorId,
    GrassmannPoly,
    Kind,
    SuperFunction,
    apply_derivation,
    c,
    cbar,
    compose_square,
    random_test_function,
)
from .model import (
    ConstFriction,
    FirstOrderSystem,
    Poly,
    ProcessSpec,
    SigmaVector,
    SpecError,
    StateFriction,
    TimeGrid,
    check_slicing,
    lambda_split,
    reduce_to_first_order,
)
from .noise import aux_covariance
from .simulate import iter_blocks, jackknife_mean

CANONICAL = "canonical"
LAGRANGIAN_N = "lagrangian-N"
LAGRANGIAN_XF = "lagrangian-xfriction"


class TagMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Layout:
    """Bosonic state vector layout: ``x[n, i]`` then optionally ``p'[n, i]``.

    Channels ``n = 1..N`` and slices ``i = 1..M``; index ``(n-1) M + (i-1)``.
    """

    N: int
    M: int
    momenta: bool

    @property
    def size(self) -> int:
        return self.N * self.M * (2 if self.momenta else 1)

    def x(self, n: int, i: int) -> int:
        return (n - 1) * self.M + (i - 1)

    def p(self, n: int, i: int) -> int:
        return self.N * self.M + (n - 1) * self.M + (i - 1)

    def generators(self) -> list[GeneratorId]:
        return [c(n, i) for n in range(1, self.N + 1) for i in range(1, self.M + 1)] + [
            cbar(n, i) for n in range(1, self.N + 1) for i in range(1, self.M + 1)
        ]

    def split(self, state):
        state = np.asarray(state, dtype=float)
        X = state[: self.N * self.M].reshape(self.N, self.M).T  # (M, N)
        P = state[self.N * self.M:].reshape(self.N, self.M).T if self.momenta else None
        return X, P


@dataclass
class SlicedAction:
    tag: str
    a: float
    grid: TimeGrid
    layout: Layout
    bosonic: Callable[[np.ndarray], float]
    fermionic: Callable[[np.ndarray], GrassmannPoly]
    superfunction: SuperFunction
    sample_state: Callable[[np.random.Generator], np.ndarray]
    info: dict = field(default_factory=dict)


@dataclass
class Supercharge:
    derivation: Derivation
    tag: str
    layout: Layout
    info: dict = field(default_factory=dict)


class _Memo:
    """Recompute a state-dependent bundle only when the state changes."""

    def __init__(self, fn):
        self.fn = fn
        self.key = None
        self.val = None

    def __call__(self, state):
        key = np.asarray(state, dtype=float).tobytes()
        if key != self.key:
            self.val = self.fn(np.asarray(state, dtype=float))
            self.key = key
        return self.val


def _bilinear(entries) -> GrassmannPoly:
    """``sum coef * cbar * c`` from ``(coef, cbar_gen, c_gen)`` triples."""
    acc: dict = {}
    for coef, gb, gc in entries:
        if coef == 0.0:
            continue
        key = (gc, gb)  # canonical order puts c first; cbar c = - c cbar
        acc[key] = acc.get(key, 0.0) - coef
    return GrassmannPoly({k: v for k, v in acc.items() if v != 0.0})


# ---------------------------------------------------------------------------
# canonical construction


def build_canonical(spec: ProcessSpec | FirstOrderSystem, sigma: SigmaVector | Sequence[float] = (),
                    grid: TimeGrid | None = None, a: float = 0.5, *, x0=None,
                    corrupt_fprime: float = 0.0) -> tuple[SlicedAction, Supercharge]:
    """Sliced phase-space action and its charge for a coupled first-order system.

    ``corrupt_fprime`` adds a constant to the force derivative inside the
    fermion action only; it exists to show that the invariance check detects
    an inconsistent action.
    """
    if grid is None:
        raise ValueError("a time grid is required")
    a = check_slicing(a)
    if isinstance(spec, FirstOrderSystem):
        system = spec
    else:
        if isinstance(spec.friction, StateFriction):
            raise SpecError("canonical construction needs constant friction coefficients")
        system = reduce_to_first_order(spec, sigma)
    if system.sigma.total >= 1:
        raise SpecError("sigma must sum to < 1")
    N, M, eps = system.dimension, grid.M, grid.epsilon
    lay = Layout(N, M, True)
    x0 = np.zeros(N) if x0 is None else np.asarray(x0, dtype=float)

    cov = []
    for ch in sorted(system.channels, key=lambda ch: ch.component):
        if ch.weight == 0.0:
            cov.append(np.zeros((M, M)))
        elif ch.is_white:
            cov.append(ch.weight / eps * np.eye(M))
        else:
            cov.append(aux_covariance(ch.weight, ch.lambda_coeffs, grid))

    def pieces(state):
        X, P = lay.split(state)
        Xf = np.vstack([x0, X])  # (M+1, N)
        f = system.drift(Xf)
        Jf = system.jacobian(Xf)
        Jc = Jf
        if corrupt_fprime:
            Jc = Jf.copy()
            Jc[:, N - 1, 0] += corrupt_fprime
        L = (Xf[1:] - Xf[:-1]) / eps + a * f[1:] + (1 - a) * f[:-1]
        CP = np.stack([cov[n] @ P[:, n] for n in range(N)], axis=1)
        return Xf, P, L, Jf, system.hessian(Xf), CP, Jc

    memo = _Memo(pieces)
    eye = np.eye(N)

    def bosonic(state):
        Xf, P, L, Jf, Hf, CP, Jc = memo(state)
        return float(eps * np.sum(P * L) - 0.5 * eps**2 * np.sum(P * CP))

    def fermionic(state):
        Xf, P, L, Jf, Hf, CP, Jc = memo(state)
        ent = []
        for i in range(1, M + 1):
            diag = eye + eps * a * Jc[i]
            for n in range(N):
                for m in range(N):
                    ent.append((diag[n, m], cbar(n + 1, i), c(m + 1, i)))
            if i >= 2:
                sub = -eye + eps * (1 - a) * Jc[i - 1]
                for n in range(N):
                    for m in range(N):
                        ent.append((sub[n, m], cbar(n + 1, i), c(m + 1, i - 1)))
        return _bilinear(ent)

    def value(state):
        return fermionic(state) + bosonic(state)

    def grad(state):
        Xf, P, L, Jf, Hf, CP, Jc = memo(state)
        out = {}
        for j in range(1, M + 1):
            dj = eye / eps + a * Jf[j]
            gx = eps * (P[j - 1] @ dj)
            ferm = [[] for _ in range(N)]
            for m in range(N):
                for n in range(N):
                    for k in range(N):
                        h = Hf[j, n, k, m]
                        if h != 0.0:
                            ferm[m].append((eps * a * h, cbar(n + 1, j), c(k + 1, j)))
                            if j < M:
                                ferm[m].append((eps * (1 - a) * h, cbar(n + 1, j + 1), c(k + 1, j)))
            if j < M:
                gx = gx + eps * (P[j] @ (-eye / eps + (1 - a) * Jf[j]))
            for m in range(N):
                out[lay.x(m + 1, j)] = _bilinear(ferm[m]) + float(gx[m])
        for n in range(N):
            for i in range(1, M + 1):
                out[lay.p(n + 1, i)] = GrassmannPoly.scalar(eps * L[i - 1, n] - eps**2 * CP[i - 1, n])
        return out

    def sample_state(rng):
        return rng.normal(size=lay.size)

    S = SuperFunction(value, grad, None, label="S_canonical")
    action = SlicedAction(CANONICAL, a, grid, lay, bosonic, fermionic, S, sample_state,
                          {"N": N, "M": M, "sigma": list(system.sigma.values), "x0": x0.tolist()})
    Q = canonical_charge(lay)
    return action, Q


def canonical_charge(lay: Layout) -> Supercharge:
    bos = tuple(
        (lay.x(n, i), SuperFunction.constant(GrassmannPoly.generator(c(n, i))))
        for n in range(1, lay.N + 1) for i in range(1, lay.M + 1)
    )
    gr = tuple(
        (cbar(n, i), SuperFunction.linear(lay.p(n, i), -1.0))
        for n in range(1, lay.N + 1) for i in range(1, lay.M + 1)
    )
    return Supercharge(Derivation(gr, bos, "Q"), CANONICAL, lay)


# ---------------------------------------------------------------------------
# Lagrangian constructions


def _difference_matrix(n: int, eps: float) -> np.ndarray:
    """Backward difference on a length-n vector; row 0 is left empty."""
    D = (np.eye(n) - np.eye(n, k=-1)) / eps
    D[0] = 0.0
    return D


def _weight_matrix(n: int, a: float) -> np.ndarray:
    W = a * np.eye(n) + (1 - a) * np.eye(n, k=-1)
    W[0] = 0.0
    return W


def _fermion_ops(M: int, eps: float, a: float):
    """Fermion difference and weight matrices with ``c_0 = 0``."""
    return (np.eye(M) - np.eye(M, k=-1)) / eps, a * np.eye(M) + (1 - a) * np.eye(M, k=-1)


@dataclass
class _LagrangianParts:
    L: np.ndarray  # (M,)
    K: np.ndarray  # dL/dx, (M, M)
    R: list  # R_n, n = 1..N, each (M,)
    T: list  # dR_n/dL, each (M, M)
    fermion: GrassmannPoly
    ferm_grad: dict  # j -> GrassmannPoly


def _lagrangian_charge(lay: Layout, memo, n_channels: int) -> Supercharge:
    M = lay.M
    bos = tuple((lay.x(1, j), SuperFunction.constant(GrassmannPoly.generator(c(1, j)))) for j in range(1, M + 1))

    def coeff(n, i):
        def val(state):
            return GrassmannPoly.scalar(-memo(state).R[n - 1][i - 1])

        def grad(state):
            parts = memo(state)
            row = -(parts.T[n - 1] @ parts.K)[i - 1]
            return {lay.x(1, j): GrassmannPoly.scalar(row[j - 1]) for j in range(1, M + 1) if row[j - 1] != 0.0}

        return SuperFunction(val, grad, lambda s: {}, label=f"-R[{n},{i}]")

    gr = tuple((cbar(n, i), coeff(n, i)) for n in range(1, n_channels + 1) for i in range(1, M + 1))
    return gr, bos


def _smooth_profile(t: np.ndarray) -> np.ndarray:
    return 0.6 * np.sin(1.3 * t) + 0.4 * np.cos(0.7 * t) + 0.1


def _smooth_sampler(t: np.ndarray, order: int):
    """Random smooth paths that join the fixed history smoothly at t = 0.

    The perturbation vanishes to order ``order + 1`` at the origin, so the
    difference stencils reaching into the history see no kink.
    """

    def sample(rng):
        r = rng.normal(size=2)
        return _smooth_profile(t) + 0.3 * r[0] * t ** (order + 2) + 0.2 * r[1] * np.sin(t) ** (order + 2)

    return sample


def _default_history(grid: TimeGrid, n: int) -> np.ndarray:
    return _smooth_profile(grid.epsilon * np.arange(1 - n, 1))


def build_lagrangian_N(spec: ProcessSpec, grid: TimeGrid, a: float = 0.5, *,
                       history=None, corrupt_fprime: float = 0.0) -> tuple[SlicedAction, Supercharge]:
    """Local action ``(1/2) sum eps L_i^2 + S_f`` with N fermion flavours.

    ``L = nabla^N x + sum_{m<N} gamma_m W nabla^m x + W F(x)`` on slices
    1..M; ``history`` holds ``x_{1-N}..x_0``.  The fermion action is the
    W-weighted Jacobian of the coupled first-order system.
    """
    if isinstance(spec.friction, StateFriction):
        raise SpecError("build_lagrangian_N needs constant friction; use build_lagrangian_xfriction")
    a = check_slicing(a)
    N, M, eps = spec.order, grid.M, grid.epsilon
    g = spec.gammas
    F, Fp, Fpp = spec.force, spec.force.deriv(), spec.force.deriv(2)
    hist = _default_history(grid, N) if history is None else np.asarray(history, dtype=float)
    if hist.shape != (N,):
        raise ValueError(f"history must hold {N} values")
    n_all = M + N
    D = _difference_matrix(n_all, eps)
    Wm = _weight_matrix(n_all, a)
    lin = np.linalg.matrix_power(D, N)
    for m in range(N):
        lin = lin + g[m] * Wm @ np.linalg.matrix_power(D, m)
    lin, WF = lin[N:], Wm[N:]
    Df, Wf = _fermion_ops(M, eps, a)
    lay = Layout(1, M, False)

    def parts(state):
        X = np.concatenate([hist, state])
        L = lin @ X + WF @ F(X)
        K = lin[:, N:] + WF[:, N:] * Fp(X[N:])[None, :]
        R = [None] * N
        T = [None] * N
        R[N - 1], T[N - 1] = L, np.eye(M)
        for n in range(N - 1, 0, -1):
            T[n - 1] = g[n] * np.eye(M) + Df.T @ T[n]
            R[n - 1] = T[n - 1] @ L
        fp = Fp(X[N - 1:]) + corrupt_fprime  # F' at slices 0..M
        ent = []
        for n in range(1, N + 1):
            for i in range(1, M + 1):
                for j in (i - 1, i):
                    if j < 1:
                        continue
                    coef = Df[i - 1, j - 1]
                    ent.append((eps * coef, cbar(n, i), c(n, j)))
                    if n < N:
                        ent.append((-eps * Wf[i - 1, j - 1], cbar(n, i), c(n + 1, j)))
                    else:
                        for m in range(1, N + 1):
                            ent.append((eps * g[m - 1] * Wf[i - 1, j - 1], cbar(N, i), c(m, j)))
                        ent.append((eps * Wf[i - 1, j - 1] * fp[j], cbar(N, i), c(1, j)))
        fpp = Fpp(X[N:])
        fgrad = {}
        for j in range(1, M + 1):
            e2 = [(eps * a * fpp[j - 1], cbar(N, j), c(1, j))]
            if j < M:
                e2.append((eps * (1 - a) * fpp[j - 1], cbar(N, j + 1), c(1, j)))
            fgrad[j] = _bilinear(e2)
        return _LagrangianParts(L, K, R, T, _bilinear(ent), fgrad)

    memo = _Memo(parts)

    def bosonic(state):
        return float(0.5 * eps * np.sum(memo(state).L ** 2))

    def fermionic(state):
        return memo(state).fermion

    def value(state):
        return fermionic(state) + bosonic(state)

    def grad(state):
        p = memo(state)
        gb = eps * (p.K.T @ p.L)
        return {j - 1: p.ferm_grad[j] + float(gb[j - 1]) for j in range(1, M + 1)}

    sample_state = _smooth_sampler(grid.times[1:], N)
    S = SuperFunction(value, grad, None, label="S_lagrangian")
    action = SlicedAction(LAGRANGIAN_N, a, grid, lay, bosonic, fermionic, S, sample_state,
                          {"N": N, "M": M, "history": hist.tolist(), "boundary_slices": N})
    gr, bos = _lagrangian_charge(lay, memo, N)
    return action, Supercharge(Derivation(gr, bos, "Q_lagrangian"), LAGRANGIAN_N, lay, {"N": N})


def build_lagrangian_xfriction(gamma: Poly, F: Poly, grid: TimeGrid, a: float = 0.5, *,
                               history=None, corrupt_fprime: float = 0.0) -> tuple[SlicedAction, Supercharge]:
    """Action for ``x'' + gamma(x) x' + F(x)`` built on the lambda split.

    ``v = nabla x + W lambda_x(x)`` and ``L = nabla v + W v + W lambda_v(x)``;
    fermion channels are 1 = x and 2 = v.  The fermion action is the
    W-weighted Jacobian of ``(L_x, L_v)``::

        cbar_x (nabla c_x - W c_v + W[(gamma - 1) c_x]) + cbar_v (nabla c_v + W c_v + W[(F' - gamma + 1) c_x])

    and the charge uses ``R_v = L`` and ``R_x = nabla^T L + L``.
    """
    a = check_slicing(a)
    M, eps = grid.M, grid.epsilon
    sp = lambda_split(gamma, F)
    lx, lv = sp.lambda_x, sp.lambda_v
    lxp, lvp = sp.lambda_x_prime, sp.lambda_v_prime
    lxpp, lvpp = sp.lambda_x_second, sp.lambda_v_second
    hist = _default_history(grid, 2) if history is None else np.asarray(history, dtype=float)
    n_all = M + 2
    D = _difference_matrix(n_all, eps)
    Wm = _weight_matrix(n_all, a)
    Df, Wf = _fermion_ops(M, eps, a)
    lay = Layout(1, M, False)
    rows = slice(2, None)

    def parts(state):
        X = np.concatenate([hist, state])
        v = D @ X + Wm @ lx(X)  # valid from index 1 (slice 0) on
        dv = D + Wm * lxp(X)[None, :]  # dv/dX
        L = (D @ v + Wm @ v + Wm @ lv(X))[rows]
        K = ((D + Wm) @ dv + Wm * lvp(X)[None, :])[rows][:, 2:]
        T_v = np.eye(M)
        T_x = Df.T + np.eye(M)
        R = [T_x @ L, L]
        fx = lxp(X[1:]) + 0.0  # gamma - 1 at slices 0..M
        fv = lvp(X[1:]) + corrupt_fprime
        ent = []
        for i in range(1, M + 1):
            for j in (i - 1, i):
                if j < 1:
                    continue
                d, w = Df[i - 1, j - 1], Wf[i - 1, j - 1]
                ent += [
                    (eps * d, cbar(1, i), c(1, j)),
                    (-eps * w, cbar(1, i), c(2, j)),
                    (eps * w * fx[j], cbar(1, i), c(1, j)),
                    (eps * d, cbar(2, i), c(2, j)),
                    (eps * w, cbar(2, i), c(2, j)),
                    (eps * w * fv[j], cbar(2, i), c(1, j)),
                ]
        gx, gv = lxpp(X[2:]), lvpp(X[2:])
        fgrad = {}
        for j in range(1, M + 1):
            e2 = [(eps * a * gx[j - 1], cbar(1, j), c(1, j)), (eps * a * gv[j - 1], cbar(2, j), c(1, j))]
            if j < M:
                e2 += [(eps * (1 - a) * gx[j - 1], cbar(1, j + 1), c(1, j)),
                       (eps * (1 - a) * gv[j - 1], cbar(2, j + 1), c(1, j))]
            fgrad[j] = _bilinear(e2)
        return _LagrangianParts(L, K, R, [T_x, T_v], _bilinear(ent), fgrad)

    memo = _Memo(parts)

    def bosonic(state):
        return float(0.5 * eps * np.sum(memo(state).L ** 2))

    def fermionic(state):
        return memo(state).fermion

    def value(state):
        return fermionic(state) + bosonic(state)

    def grad(state):
        p = memo(state)
        gb = eps * (p.K.T @ p.L)
        return {j - 1: p.ferm_grad[j] + float(gb[j - 1]) for j in range(1, M + 1)}

    sample_state = _smooth_sampler(grid.times[1:], 2)
    S = SuperFunction(value, grad, None, label="S_xfriction")
    action = SlicedAction(LAGRANGIAN_XF, a, grid, lay, bosonic, fermionic, S, sample_state,
                          {"M": M, "history": hist.tolist(), "boundary_slices": 2})
    gr, bos = _lagrangian_charge(lay, memo, 2)
    return action, Supercharge(Derivation(gr, bos, "Q_xfriction"), LAGRANGIAN_XF, lay)


# ---------------------------------------------------------------------------
# checks


def invariance_residual(Q: Supercharge, S: SlicedAction, state) -> GrassmannPoly:
    if Q.tag != S.tag:
        raise TagMismatch(f"charge tag {Q.tag!r} does not match action tag {S.tag!r}")
    return apply_derivation(Q.derivation, S.superfunction, state)


BULK_WINDOW = 0.75


def bulk_norm(poly: GrassmannPoly, M: int, boundary: int, window: float = BULK_WINDOW) -> float:
    """L1 norm of the coefficients on slices ``<= min(window M, M - boundary)``."""
    last = min(int(math.floor(window * M)), M - boundary)
    return float(sum(abs(v) for mono, v in poly.terms.items() if all(g.slice <= last for g in mono)))


def check_invariance(Q: Supercharge, S: SlicedAction, trials: int = 100, seed: int = 0) -> float:
    """Worst coefficient of ``Q S`` (canonical) or bulk L1 residual (Lagrangian).

    Lagrangian residuals are evaluated on smooth paths; their convergence is
    judged with :func:`invariance_ladder`.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        r = invariance_residual(Q, S, S.sample_state(rng))
        if S.tag == CANONICAL:
            worst = max(worst, r.max_abs())
        else:
            worst = max(worst, bulk_norm(r, S.layout.M, S.info["boundary_slices"]))
    return worst


def check_nilpotent(Q: Supercharge, trials: int = 20, seed: int = 0, *, max_degree: int = 2,
                    n_terms: int = 6, sample_state: Callable | None = None) -> float:
    """Worst coefficient of ``Q(Q f)`` over random degree <= 2 test functions."""
    if not Q.derivation.grassmann and not Q.derivation.bosonic:
        return 0.0
    rng = np.random.default_rng(seed)
    gens = Q.layout.generators()
    worst = 0.0
    for _ in range(trials):
        f = random_test_function(rng, gens, Q.layout.size, max_degree=max_degree, n_terms=n_terms)
        state = sample_state(rng) if sample_state else rng.normal(size=Q.layout.size)
        worst = max(worst, compose_square(Q.derivation, f.as_superfunction(), state).max_abs())
    return worst


@dataclass(frozen=True)
class LadderRow:
    M: int
    epsilon: float
    residual: float


def fit_order(rows: Sequence[LadderRow]) -> float:
    e = np.log([r.epsilon for r in rows])
    y = np.log([r.residual for r in rows])
    return float(np.polyfit(e, y, 1)[0])


def invariance_ladder(make: Callable[[TimeGrid], tuple[SlicedAction, Supercharge]], T: float,
                      Ms: Sequence[int] = (32, 64, 128), seed: int = 0) -> dict:
    """``||Q S||`` on a fixed smooth path for grids of fixed length ``T``."""
    rows = []
    for M in Ms:
        grid = TimeGrid(T / M, M)
        S, Q = make(grid)
        state = S.sample_state(np.random.default_rng(seed))
        r = invariance_residual(Q, S, state)
        rows.append(LadderRow(M, grid.epsilon, bulk_norm(r, M, S.info["boundary_slices"])))
    ratios = [rows[k].residual / rows[k + 1].residual for k in range(len(rows) - 1)]
    return {
        "rows": [{"M": r.M, "epsilon": r.epsilon, "residual": r.residual} for r in rows],
        "ratios": ratios,
        "order": fit_order(rows),
    }


def lagrangian_nilpotency_defect(S: SlicedAction, Q: Supercharge, state) -> dict:
    """``Q^2 cbar_{n,i}`` for a Lagrangian charge.

    ``Q^2 cbar = -(dR/dx) c_1`` does not vanish off-shell; it is proportional
    to the linearised equation ``K c_1`` (``R`` is linear in ``L``).  Returns
    the largest coefficient and the deviation from ``-T_n K c_1``.
    """
    worst = 0.0
    dev = 0.0
    M = S.layout.M
    for g, coeff in Q.derivation.grassmann:
        test = SuperFunction.constant(GrassmannPoly.generator(g))
        sq = compose_square(Q.derivation, test, state)
        worst = max(worst, sq.max_abs())
        row = coeff.grad(state)  # Q^2 cbar = Q(-R) = sum_j c_j d(-R)/dx_j
        for j in range(1, M + 1):
            g_j = row.get(j - 1)
            expect = g_j.scalar_part() if g_j is not None else 0.0
            dev = max(dev, abs(sq.coefficient([c(1, j)]) - expect))
    return {"max_coefficient": worst, "deviation_from_KC": dev}


# ---------------------------------------------------------------------------
# structural reductions (operator polynomials in d/dt)


def mq_entries(gammas: Sequence[float]) -> list[np.ndarray]:
    """Coefficient of ``d/dcbar_n`` as ascending polynomial in d/dt acting on L."""
    g = list(gammas)
    N = len(g) - 1
    return [np.array([(-1) ** k * g[n + k] for k in range(N - n + 1)]) for n in range(1, N + 1)]


def qq_entries(gamma: float) -> list[np.ndarray]:
    """Kramers charge: ``(-d + gamma) L`` on cbar_x and ``L`` on cbar_v."""
    return [np.array([gamma, -1.0]), np.array([1.0])]


def fa_operator(gammas: Sequence[float]) -> dict:
    """Fermion action ``sum cbar_n P_nm(d) c_m`` with the force as its own symbol.

    Returns ``{(n, m): {"1": poly, "F'": poly}}`` (ascending in d/dt).
    """
    g = list(gammas)
    N = len(g) - 1
    op: dict = {}

    def add(n, m, sym, poly):
        e = op.setdefault((n, m), {})
        cur = e.get(sym, np.zeros(0))
        size = max(len(cur), len(poly))
        e[sym] = np.pad(cur, (0, size - len(cur))) + np.pad(np.asarray(poly, float), (0, size - len(poly)))

    for n in range(1, N + 1):
        add(n, n, "1", [0.0, 1.0])
        if n < N:
            add(n, n + 1, "1", [-1.0])
    for m in range(1, N + 1):
        add(N, m, "1", [g[m - 1]])
    add(N, 1, "F'", [1.0])
    return op


def sf_operator(gamma: float) -> dict:
    """Kramers fermion action with channel 1 = x and 2 = v."""
    return {
        (1, 1): {"1": np.array([0.0, 1.0])},
        (2, 2): {"1": np.array([gamma, 1.0])},
        (1, 2): {"1": np.array([-1.0])},
        (2, 1): {"F'": np.array([1.0]), "1": np.array([0.0])},
    }


def operator_difference(A: dict, B: dict) -> float:
    worst = 0.0
    for key in set(A) | set(B):
        ea, eb = A.get(key, {}), B.get(key, {})
        for sym in set(ea) | set(eb):
            pa, pb = ea.get(sym, np.zeros(1)), eb.get(sym, np.zeros(1))
            n = max(len(pa), len(pb))
            d = np.pad(pa, (0, n - len(pa))) - np.pad(pb, (0, n - len(pb)))
            worst = max(worst, float(np.max(np.abs(d))))
    return worst


def structural_check(gamma: float = 0.7) -> dict:
    """Charge and fermion action of the general-N construction at N = 2 versus the Kramers forms."""
    gammas = [0.0, gamma, 1.0]
    q_diff = max(
        float(np.max(np.abs(np.pad(a, (0, 2 - len(a))) - np.pad(b, (0, 2 - len(b))))))
        for a, b in zip(mq_entries(gammas), qq_entries(gamma))
    )
    f_diff = operator_difference(fa_operator(gammas), sf_operator(gamma))
    return {"charge_difference": q_diff, "fermion_action_difference": f_diff,
            "pass": bool(q_diff < 1e-14 and f_diff < 1e-14)}


def sliced_kramers_fermion_action(gamma: float, Fp: np.ndarray, grid: TimeGrid, a: float) -> GrassmannPoly:
    """Direct slicing of the Kramers fermion action, channel 1 = x, 2 = v.

    ``Fp`` holds F' at slices 0..M.
    """
    M, eps = grid.M, grid.epsilon
    ent = []
    for i in range(1, M + 1):
        ent += [(1.0, cbar(1, i), c(1, i)), (1.0, cbar(2, i), c(2, i))]
        if i > 1:
            ent += [(-1.0, cbar(1, i), c(1, i - 1)), (-1.0, cbar(2, i), c(2, i - 1))]
        for j, w in ((i, a), (i - 1, 1 - a)):
            if j < 1 or w == 0.0:
                continue
            ent += [
                (-eps * w, cbar(1, i), c(2, j)),
                (eps * w * Fp[j], cbar(2, i), c(1, j)),
                (eps * w * gamma, cbar(2, i), c(2, j)),
            ]
    return _bilinear(ent)


# ---------------------------------------------------------------------------
# fermion propagators and Ward identities


def fermion_green(Fprime, gamma=None, tag: str = "first-order", grid: TimeGrid | None = None,
                  a: float = 0.0) -> np.ndarray:
    """Inverse of the eps-normalised sliced fermion operator.

    ``tag="first-order"``: (M, M) matrix over slices.  ``tag="kramers"``:
    (2M, 2M) over interleaved ``(v_i, x_i)``.  ``Fprime`` holds F' at
    slices 1..M.
    """
    Fp = np.asarray(Fprime, dtype=float)
    eps = grid.epsilon
    if tag == "first-order":
        A = first_order_matrix(Fp, a, eps)
        return linalg.solve_triangular(A, np.eye(len(Fp)), lower=True)
    if tag == "kramers":
        g = np.broadcast_to(np.asarray(gamma, dtype=float), Fp.shape)
        return np.linalg.inv(block_matrix(g, Fp, a, eps))
    raise ValueError(f"unknown fermion operator tag {tag!r}")


def green_column(system: FirstOrderSystem, states: np.ndarray, source_slice: int, source_channel: int,
                 a: float, epsilon: float) -> np.ndarray:
    """Column ``G[(m, j), (source_channel, source_slice)]`` for every trajectory.

    ``states`` is ``(B, M+1, N)``; returns ``(B, M+1, N)`` with zeros before the
    source.  Solves ``D_j g_j = -E_j g_{j-1}`` with ``D_j = I + eps a Jf(x_j)``
    and ``E_j = -I + eps (1 - a) Jf(x_{j-1})``.
    """
    B, M1, N = states.shape
    eye = np.eye(N)
    Jf = system.jacobian(states)
    out = np.zeros((B, M1, N))
    i = source_slice
    rhs = np.broadcast_to(eye[source_channel - 1], (B, N))
    Dm = eye + epsilon * a * Jf[:, i]
    g = np.linalg.solve(Dm, rhs[..., None])[..., 0]
    out[:, i] = g
    for j in range(i + 1, M1):
        E = -eye + epsilon * (1 - a) * Jf[:, j - 1]
        Dm = eye + epsilon * a * Jf[:, j]
        g = np.linalg.solve(Dm, -(E @ g[..., None]))[..., 0]
        out[:, j] = g
    return out


@dataclass(frozen=True)
class WardReport:
    label: str
    t1: float
    t2: float
    a: float
    K: int
    bosonic: float
    bosonic_stderr: float
    fermionic: float
    fermionic_stderr: float
    residual: float
    residual_stderr: float

    @property
    def combined_stderr(self) -> float:
        return math.hypot(self.bosonic_stderr, self.fermionic_stderr)

    @property
    def z(self) -> float:
        se = self.combined_stderr
        return (self.bosonic - self.fermionic) / se if se > 0 else 0.0

    @property
    def paired_z(self) -> float:
        return self.residual / self.residual_stderr if self.residual_stderr > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "functional": self.label, "t1": self.t1, "t2": self.t2, "a": self.a, "K": self.K,
            "bosonic": self.bosonic, "bosonic_stderr": self.bosonic_stderr,
            "fermionic": self.fermionic, "fermionic_stderr": self.fermionic_stderr,
            "combined_stderr": self.combined_stderr, "z": self.z, "paired_z": self.paired_z,
        }


def ward_samples(system: FirstOrderSystem, grid: TimeGrid, a: float, K: int, seed: int,
                 t1: float, t2: float, *, burn_in: float = 0.0, block_size: int = 4096):
    """Per-trajectory ``x_1(t2) nu(t1) / w`` and ``G[(1, t2), (N, t1 + eps)]``.

    ``nu`` is the white channel (weight ``w``) acting on the last component;
    its value at ``t1`` drives the step from ``t1`` to ``t1 + eps``.
    """
    i1, i2 = grid.index(t1), grid.index(t2)
    white = [ch for ch in system.channels if ch.is_white][0]
    N = system.dimension
    bos, fer = [], []
    for blk in iter_blocks(system, grid, a, K, seed, burn_in=burn_in, full=True, block_size=block_size):
        off = blk.offset
        w = blk.noise.white[white.component + 1][:, off + i1]
        nu = np.sqrt(white.weight) * w
        bos.append(blk.states[:, off + i2, 0] * nu / white.weight)
        if i2 <= i1:
            fer.append(np.zeros(blk.states.shape[0]))
            continue
        col = green_column(system, blk.states[:, off:], i1 + 1, N, a, grid.epsilon)
        fer.append(col[:, i2, 0])
    return np.concatenate(bos), np.concatenate(fer)


def ward_check(spec: ProcessSpec | FirstOrderSystem, grid: TimeGrid, K: int, seed: int, t1: float, t2: float,
               *, a: float = 0.0, sigma=(), burn_in: float = 0.0) -> WardReport:
    """``<Q (cbar_{t1} x_{t2})> = 0`` as response = averaged fermion propagator."""
    system = spec if isinstance(spec, FirstOrderSystem) else reduce_to_first_order(spec, sigma)
    b, f = ward_samples(system, grid, a, K, seed, t1, t2, burn_in=burn_in)
    mb, sb = jackknife_mean(b)
    mf, sf = jackknife_mean(f)
    md, sd = jackknife_mean(b - f)
    return WardReport(f"cbar({t1}) x({t2})", t1, t2, a, K, mb, sb, mf, sf, md, sd)


def a_shift_check(spec: ProcessSpec | FirstOrderSystem, grid: TimeGrid, K: int, seed: int, t1: float, t2: float,
                  *, a_pair=(0.0, 0.5), sigma=(), burn_in: float = 0.0) -> dict:
    """Ward residuals at two slicings (independent seeds) and their agreement z."""
    r0 = ward_check(spec, grid, K, seed, t1, t2, a=a_pair[0], sigma=sigma, burn_in=burn_in)
    r1 = ward_check(spec, grid, K, seed + 1, t1, t2, a=a_pair[1], sigma=sigma, burn_in=burn_in)
    se = math.hypot(r0.residual_stderr, r1.residual_stderr)
    z = (r0.residual - r1.residual) / se if se > 0 else 0.0
    return {
        "a": list(a_pair),
        "residual": [r0.residual, r1.residual],
        "residual_stderr": [r0.residual_stderr, r1.residual_stderr],
        "propagator": [r0.fermionic, r1.fermionic],
        "response": [r0.bosonic, r1.bosonic],
        "z": z,
        "pass": bool(abs(z) < 3.0),
        "reports": [r0.to_dict(), r1.to_dict()],
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=float)
