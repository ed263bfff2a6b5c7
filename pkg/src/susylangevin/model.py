"""Process specifications and their reduction to coupled first-order systems.

A process of order ``N`` reads

    P(d/dt) x + F(x) = eta,     P(s) = gamma_0 + gamma_1 s + ... + gamma_{N-1} s^{N-1} + s^N,

and is rewritten with ``x_1 = x`` as

    L_n = dx_n/dt - x_{n+1}                          = nu_n   (n < N)
    L_N = dx_N/dt + sum_n gamma_{n-1} x_n + F(x_1)   = nu_N

where ``nu_N`` is white with weight ``1 - sigma`` and the auxiliary noises
``nu_n`` carry the nonlocal weight ``(Lambda_{N-n} nu_n)^2 / sigma_n``.

For ``N = 2`` with a state-dependent friction ``gamma(x)`` the system is
instead split with a pair ``(lambda_x, lambda_v)`` obeying
``lambda_x' = gamma - 1`` and ``lambda_v = F - lambda_x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import integrate


class SpecError(ValueError):
    """A process, grid or noise specification violates its invariants."""


# ---------------------------------------------------------------------------
# small value types


@dataclass(frozen=True)
class Poly:
    """Real polynomial with ascending coefficients, vectorised over numpy arrays."""

    coeffs: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        c = tuple(float(v) for v in self.coeffs) or (0.0,)
        object.__setattr__(self, "coeffs", c)

    def __call__(self, x):
        return npoly.polyval(x, self.coeffs)

    def deriv(self, m: int = 1) -> "Poly":
        return Poly(tuple(npoly.polyder(self.coeffs, m)) if len(self.coeffs) > m else (0.0,))

    def antideriv(self) -> "Poly":
        """Antiderivative vanishing at zero."""
        return Poly(tuple(npoly.polyint(self.coeffs)))

    def __add__(self, other: "Poly") -> "Poly":
        return Poly(tuple(npoly.polyadd(self.coeffs, other.coeffs)))

    def __sub__(self, other: "Poly") -> "Poly":
        return Poly(tuple(npoly.polysub(self.coeffs, other.coeffs)))

    @property
    def degree(self) -> int:
        nz = [i for i, v in enumerate(self.coeffs) if v != 0.0]
        return nz[-1] if nz else 0


def linear_force(k: float) -> Poly:
    return Poly((0.0, k))


def cubic_force(k: float, g: float) -> Poly:
    return Poly((0.0, k, 0.0, g))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform slicing ``t_i = i * epsilon``, ``i = 0..M``.

    A sliced delta function is ``(1/epsilon)`` times the Kronecker delta, so
    white noise has per-slice variance ``1/epsilon``.
    """

    epsilon: float
    M: int

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise SpecError(f"grid.epsilon must be positive, got {self.epsilon}")
        if int(self.M) != self.M or self.M < 1:
            raise SpecError(f"grid.M must be an integer >= 1, got {self.M}")
        object.__setattr__(self, "M", int(self.M))

    @property
    def T(self) -> float:
        return self.epsilon * self.M

    @property
    def times(self) -> np.ndarray:
        return self.epsilon * np.arange(self.M + 1)

    def index(self, t: float) -> int:
        """Slice index of time ``t``; ``t`` must lie on the grid."""
        i = int(round(t / self.epsilon))
        if abs(i * self.epsilon - t) > 1e-9 * max(1.0, abs(t)) or not 0 <= i <= self.M:
            raise SpecError(f"time {t} is not a slice of {self}")
        return i


@dataclass(frozen=True)
class SigmaVector:
    """Auxiliary-noise weights sigma_1..sigma_{N-1}; ``D_N = 1 - sum(sigma)``."""

    values: tuple[float, ...] = ()

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise SpecError(f"sigma entries must be finite and >= 0, got {vals}")
        if sum(vals) >= 1.0:
            raise SpecError(f"sigma: sum of entries must be < 1, got {sum(vals)}")

    @property
    def total(self) -> float:
        return float(sum(self.values))

    @property
    def main_weight(self) -> float:
        return 1.0 - self.total

    def for_order(self, N: int) -> "SigmaVector":
        """Pad with zeros (or validate length) for an order-``N`` process."""
        if len(self.values) > N - 1:
            raise SpecError(f"sigma has {len(self.values)} entries; order {N} allows {N - 1}")
        return SigmaVector(self.values + (0.0,) * (N - 1 - len(self.values)))


ITO = 0.0
STRATONOVICH = 0.5


@dataclass(frozen=True)
class SlicingParam:
    a: float = ITO

    def __post_init__(self):
        check_slicing(self.a)

    @property
    def label(self) -> str:
        return {ITO: "Ito", STRATONOVICH: "Stratonovich"}.get(self.a, f"a={self.a:g}")


def check_slicing(a: float) -> float:
    a = float(a)
    if not 0.0 <= a <= 1.0:
        raise SpecError(f"slicing parameter a must lie in [0, 1], got {a}")
    return a


# ---------------------------------------------------------------------------
# process specifications


@dataclass(frozen=True)
class ConstFriction:
    """Coefficients gamma_0..gamma_{N-1}; gamma_N = 1 is implied."""

    coeffs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(v) for v in self.coeffs))


@dataclass(frozen=True)
class StateFriction:
    """Friction gamma(x) for a second-order process (polynomial in x)."""

    gamma: Poly


@dataclass(frozen=True)
class ProcessSpec:
    order: int
    friction: ConstFriction | StateFriction
    force: Poly = field(default_factory=lambda: Poly((0.0,)))

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise SpecError(f"process.N must be an integer >= 1, got {self.order}")
        if isinstance(self.friction, ConstFriction):
            if len(self.friction.coeffs) != self.order:
                raise SpecError(
                    f"process.gamma_coeffs must have N={self.order} entries, got {len(self.friction.coeffs)}"
                )
        elif isinstance(self.friction, StateFriction):
            if self.order != 2:
                raise SpecError("state-dependent friction is only available for N = 2")
        else:
            raise SpecError(f"unknown friction type {type(self.friction).__name__}")

    @property
    def gammas(self) -> tuple[float, ...]:
        """gamma_0..gamma_N with gamma_N = 1 (constant friction only)."""
        if not isinstance(self.friction, ConstFriction):
            raise SpecError("gamma coefficients requested for state-dependent friction")
        return self.friction.coeffs + (1.0,)

    def F(self, x):
        return self.force(x)

    def Fprime(self, x):
        return self.force.deriv()(x)

    def Fsecond(self, x):
        return self.force.deriv(2)(x)


def kramers(gamma: float, force: Poly) -> ProcessSpec:
    """``x'' + gamma x' + F(x) = eta``."""
    return ProcessSpec(2, ConstFriction((0.0, gamma)), force)


def first_order(force: Poly) -> ProcessSpec:
    """``x' + F(x) = eta``."""
    return ProcessSpec(1, ConstFriction((0.0,)), force)


def lambda_operator_coeffs(spec: ProcessSpec, n: int) -> tuple[float, ...]:
    """Ascending coefficients (in powers of d/dt) of ``Lambda_{N-n}``.

    ``Lambda_{N-n} = sum_k gamma_{n+k} d^k``, ``k = 0..N-n``, with gamma_N = 1.
    For state-dependent friction the split system uses ``d/dt + 1``.
    """
    N = spec.order
    if not 1 <= n <= N - 1:
        raise SpecError(f"channel n must satisfy 1 <= n <= {N - 1}, got {n}")
    if isinstance(spec.friction, StateFriction):
        return (1.0, 1.0)
    g = spec.gammas
    return tuple(g[n + k] for k in range(N - n + 1))


# ---------------------------------------------------------------------------
# lambda split


@dataclass(frozen=True)
class LambdaSplit:
    """``lambda_x`` with ``lambda_x(0) = 0`` and ``lambda_v = F - lambda_x``."""

    lambda_x: Callable
    lambda_v: Callable
    lambda_x_prime: Callable
    lambda_v_prime: Callable
    lambda_x_second: Callable | None = None
    lambda_v_second: Callable | None = None


class QuadratureError(RuntimeError):
    pass


def _quad_antiderivative(fn: Callable, tol: float) -> Callable:
    def lam(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for idx, xv in np.ndenumerate(x):
            val, err, info = integrate.quad(fn, 0.0, float(xv), epsabs=tol, epsrel=tol, limit=200, full_output=1)[:3]
            if err > 10 * tol * max(1.0, abs(val)):
                alist, blist, elist = info.get("alist"), info.get("blist"), info.get("elist")
                worst = ""
                if elist is not None and len(elist):
                    k = int(np.argmax(elist))
                    worst = f"; worst subinterval [{alist[k]:.6g}, {blist[k]:.6g}] err {elist[k]:.3g}"
                raise QuadratureError(f"quadrature for lambda_x({xv}) did not converge (err {err:.3g}){worst}")
            out[idx] = val
        return out if out.ndim else float(out)

    return lam


def lambda_split(
    gamma: Poly | Callable,
    F: Poly | Callable,
    interval: tuple[float, float] = (-3.0, 3.0),
    *,
    lambda_x: Callable | None = None,
    tol: float = 1e-10,
) -> LambdaSplit:
    """Split ``F`` and ``gamma`` into the pair used by the state-friction system.

    Polynomial inputs are split exactly; otherwise ``lambda_x`` is the adaptive
    quadrature of ``gamma - 1`` from 0 (or a user-supplied closed form) and the
    pair is checked against ``lambda_x' = gamma - 1`` on ``interval``.
    """
    if isinstance(gamma, Poly) and isinstance(F, Poly) and lambda_x is None:
        lx = (gamma - Poly((1.0,))).antideriv()
        lv = F - lx
        return LambdaSplit(lx, lv, lx.deriv(), lv.deriv(), lx.deriv(2), lv.deriv(2))

    def gm1(u):
        return gamma(u) - 1.0

    lx = lambda_x if lambda_x is not None else _quad_antiderivative(gm1, tol)

    def lv(x):
        return F(x) - lx(x)

    def lxp(x):
        return gamma(x) - 1.0

    if isinstance(F, Poly):
        Fp = F.deriv()
    else:
        Fp = None

    def lvp(x):
        if Fp is None:
            raise SpecError("lambda_v' needs a polynomial force")
        return Fp(x) - lxp(x)

    split = LambdaSplit(lx, lv, lxp, lvp)
    check_lambda_split(split, gamma, F, interval, tol=max(tol, 1e-9))
    return split


def five_point_derivative(fn: Callable, x, h: float = 1e-3):
    x = np.asarray(x, dtype=float)
    return (fn(x - 2 * h) - 8 * fn(x - h) + 8 * fn(x + h) - fn(x + 2 * h)) / (12 * h)


def check_lambda_split(split: LambdaSplit, gamma, F, interval, *, tol: float = 1e-10, n_points: int = 41) -> float:
    """Max violation of ``lambda_x' = gamma - 1`` and ``lambda_x + lambda_v = F``."""
    xs = np.linspace(interval[0], interval[1], n_points)
    d = five_point_derivative(split.lambda_x, xs)
    err1 = np.max(np.abs(d - (gamma(xs) - 1.0)))
    err2 = np.max(np.abs(split.lambda_x(xs) + split.lambda_v(xs) - F(xs)))
    err = float(max(err1, err2))
    if err > tol * max(1.0, float(np.max(np.abs(F(xs))))):
        raise SpecError(f"lambda split violates its condition by {err:.3g} on {interval}")
    return err


# ---------------------------------------------------------------------------
# first-order systems


@dataclass(frozen=True)
class NoiseChannel:
    """Noise feeding one component.

    ``weight`` is ``1 - sigma`` for the white channel or ``sigma_n`` for an
    auxiliary channel whose noise is ``sqrt(sigma_n) Lambda^{-1} w``.
    """

    component: int  # 0-based component index
    weight: float
    lambda_coeffs: tuple[float, ...] | None = None  # None for white

    @property
    def is_white(self) -> bool:
        return self.lambda_coeffs is None


@dataclass(frozen=True)
class FirstOrderSystem:
    """``dx/dt + f(x) = noise`` for an N-vector ``x``.

    ``drift`` is ``f``; ``jacobian`` and ``hessian`` its first and second
    derivatives.  All three act on arrays of shape ``(..., N)``.
    """

    dimension: int
    drift: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    channels: tuple[NoiseChannel, ...]
    sigma: SigmaVector
    spec: ProcessSpec
    tag: str = "reduced"

    def linearized_rates(self, x=None) -> np.ndarray:
        x = np.zeros(self.dimension) if x is None else np.asarray(x, dtype=float)
        return np.linalg.eigvals(self.jacobian(x))


def reduce_to_first_order(spec: ProcessSpec, sigma: SigmaVector | Sequence[float] = ()) -> FirstOrderSystem:
    """Coupled first-order form of an order-N process with constant friction."""
    if isinstance(spec.friction, StateFriction):
        raise SpecError("state-dependent friction: use split_state_friction (lambda split) instead")
    N = spec.order
    sigma = (sigma if isinstance(sigma, SigmaVector) else SigmaVector(tuple(sigma))).for_order(N)
    g = np.array(spec.gammas[:N])
    F, Fp, Fpp = spec.force, spec.force.deriv(), spec.force.deriv(2)

    def drift(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., : N - 1] = -x[..., 1:]
        out[..., N - 1] = x @ g + F(x[..., 0])
        return out

    base = np.zeros((N, N))
    for n in range(N - 1):
        base[n, n + 1] = -1.0
    base[N - 1, :] = g

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        J = np.broadcast_to(base, x.shape[:-1] + (N, N)).copy()
        J[..., N - 1, 0] += Fp(x[..., 0])
        return J

    def hessian(x):
        x = np.asarray(x, dtype=float)
        H = np.zeros(x.shape[:-1] + (N, N, N))
        H[..., N - 1, 0, 0] = Fpp(x[..., 0])
        return H

    channels = tuple(
        NoiseChannel(n - 1, sigma.values[n - 1], lambda_operator_coeffs(spec, n)) for n in range(1, N)
    ) + (NoiseChannel(N - 1, sigma.main_weight, None),)
    return FirstOrderSystem(N, drift, jacobian, hessian, channels, sigma, spec, tag="reduced")


def split_state_friction(spec: ProcessSpec, sigma: SigmaVector | Sequence[float] = (),
                         split: LambdaSplit | None = None) -> FirstOrderSystem:
    """Coupled pair for ``x'' + gamma(x) x' + F(x) = eta``.

    Components are ``(x, v)``:

        dx/dt - v + lambda_x(x) = nu_x   (auxiliary, Lambda = d/dt + 1)
        dv/dt + v + lambda_v(x) = nu_v   (white, weight 1 - sigma)
    """
    if not isinstance(spec.friction, StateFriction):
        raise SpecError("split_state_friction needs a state-dependent friction")
    sigma = (sigma if isinstance(sigma, SigmaVector) else SigmaVector(tuple(sigma))).for_order(2)
    sp = split or lambda_split(spec.friction.gamma, spec.force)
    if sp.lambda_x_second is None:
        raise SpecError("the state-friction system needs exact second derivatives of the split")

    def drift(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., 0] = -x[..., 1] + sp.lambda_x(x[..., 0])
        out[..., 1] = x[..., 1] + sp.lambda_v(x[..., 0])
        return out

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 0] = sp.lambda_x_prime(x[..., 0])
        J[..., 0, 1] = -1.0
        J[..., 1, 0] = sp.lambda_v_prime(x[..., 0])
        J[..., 1, 1] = 1.0
        return J

    def hessian(x):
        x = np.asarray(x, dtype=float)
        H = np.zeros(x.shape[:-1] + (2, 2, 2))
        H[..., 0, 0, 0] = sp.lambda_x_second(x[..., 0])
        H[..., 1, 0, 0] = sp.lambda_v_second(x[..., 0])
        return H

    channels = (
        NoiseChannel(0, sigma.values[0], (1.0, 1.0)),
        NoiseChannel(1, sigma.main_weight, None),
    )
    return FirstOrderSystem(2, drift, jacobian, hessian, channels, sigma, spec, tag="xfriction")


def state_friction_direct(spec: ProcessSpec) -> FirstOrderSystem:
    """Plain (x, v) pair ``x' = v``, ``v' = -gamma(x) v - F(x) + eta`` (no split)."""
    if not isinstance(spec.friction, StateFriction):
        raise SpecError("state_friction_direct needs a state-dependent friction")
    gam, gp = spec.friction.gamma, spec.friction.gamma.deriv()
    gpp = spec.friction.gamma.deriv(2)
    F, Fp, Fpp = spec.force, spec.force.deriv(), spec.force.deriv(2)

    def drift(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., 0] = -x[..., 1]
        out[..., 1] = gam(x[..., 0]) * x[..., 1] + F(x[..., 0])
        return out

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 1] = -1.0
        J[..., 1, 0] = gp(x[..., 0]) * x[..., 1] + Fp(x[..., 0])
        J[..., 1, 1] = gam(x[..., 0])
        return J

    def hessian(x):
        x = np.asarray(x, dtype=float)
        H = np.zeros(x.shape[:-1] + (2, 2, 2))
        H[..., 1, 0, 0] = gpp(x[..., 0]) * x[..., 1] + Fpp(x[..., 0])
        H[..., 1, 0, 1] = gp(x[..., 0])
        H[..., 1, 1, 0] = gp(x[..., 0])
        return H

    channels = (NoiseChannel(0, 0.0, (1.0, 1.0)), NoiseChannel(1, 1.0, None))
    return FirstOrderSystem(2, drift, jacobian, hessian, channels, SigmaVector((0.0,)), spec, tag="direct")
