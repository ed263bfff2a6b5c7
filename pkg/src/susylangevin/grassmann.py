"""Finite-dimensional exterior algebra with real coefficients.

Generators are ``c[n, i]`` and ``cbar[n, i]`` (channel ``n``, time slice ``i``).
Monomials are stored as tuples of generators in canonical order: ``c`` before
``cbar``, then by channel, then by slice.  The sign of the permutation that
brings a product into canonical order is absorbed into the coefficient.

Sign conventions (used everywhere in the package):

* derivatives with respect to generators are *left* derivatives: the generator
  is anticommuted to the front of the monomial and then deleted;
* Grassmann-valued coefficients of a derivation multiply from the left;
* all coefficients are real.  Factors of ``i`` that appear in the usual
  supercharges are absorbed by working with ``p' = -i p`` (see ``susy``).

Bosonic dependence is handled by :class:`SuperFunction`, a callable from a
real state vector to a :class:`GrassmannPoly`, optionally carrying exact first
and second partial derivatives with respect to the state components.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np


class Kind(enum.IntEnum):
    C = 0
    CBAR = 1


class GeneratorId(NamedTuple):
    kind: Kind
    channel: int
    slice: int

    def __repr__(self) -> str:
        name = "c" if self.kind == Kind.C else "cbar"
        return f"{name}[{self.channel},{self.slice}]"


def c(channel: int, slice_: int) -> GeneratorId:
    return GeneratorId(Kind.C, channel, slice_)


def cbar(channel: int, slice_: int) -> GeneratorId:
    return GeneratorId(Kind.CBAR, channel, slice_)


Monomial = tuple  # tuple[GeneratorId, ...], canonical order


def _merge(m1: Monomial, m2: Monomial) -> tuple[int, Monomial] | None:
    """Concatenate two canonical monomials; return (sign, canonical) or None."""
    if not m1:
        return 1, m2
    if not m2:
        return 1, m1
    out = []
    swaps = 0
    i = j = 0
    n1 = len(m1)
    while i < n1 and j < len(m2):
        a, b = m1[i], m2[j]
        if a < b:
            out.append(a)
            i += 1
        elif b < a:
            # b jumps over the n1 - i generators left in m1
            swaps += n1 - i
            out.append(b)
            j += 1
        else:
            return None
    out.extend(m1[i:])
    out.extend(m2[j:])
    return (-1 if swaps & 1 else 1), tuple(out)


def canonicalize(gens: Sequence[GeneratorId]) -> tuple[int, Monomial] | None:
    """Sort an arbitrary product of generators; None if a generator repeats."""
    gens = list(gens)
    if len(set(gens)) != len(gens):
        return None
    swaps = 0
    for i in range(1, len(gens)):
        k = i
        while k > 0 and gens[k - 1] > gens[k]:
            gens[k - 1], gens[k] = gens[k], gens[k - 1]
            swaps += 1
            k -= 1
    return (-1 if swaps & 1 else 1), tuple(gens)


class GrassmannPoly:
    """Immutable sparse element of the exterior algebra."""

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[Monomial, float] | None = None, *, _trusted=False):
        if _trusted:
            self._terms = terms
            return
        acc: dict = {}
        for mono, coef in (terms or {}).items():
            canon = canonicalize(mono)
            if canon is None:
                continue
            sign, key = canon
            acc[key] = acc.get(key, 0.0) + sign * float(coef)
        self._terms = {k: v for k, v in acc.items() if v != 0.0}

    # construction -----------------------------------------------------------
    @classmethod
    def scalar(cls, value: float) -> "GrassmannPoly":
        value = float(value)
        return cls({(): value} if value != 0.0 else {}, _trusted=True)

    @classmethod
    def generator(cls, g: GeneratorId, coef: float = 1.0) -> "GrassmannPoly":
        return cls({(g,): float(coef)} if coef != 0.0 else {}, _trusted=True)

    @classmethod
    def product_of(cls, gens: Sequence[GeneratorId], coef: float = 1.0) -> "GrassmannPoly":
        return cls({tuple(gens): coef})

    @classmethod
    def zero(cls) -> "GrassmannPoly":
        return cls({}, _trusted=True)

    @classmethod
    def _from_acc(cls, acc: dict) -> "GrassmannPoly":
        return cls({k: v for k, v in acc.items() if v != 0.0}, _trusted=True)

    # inspection -------------------------------------------------------------
    @property
    def terms(self) -> Mapping[Monomial, float]:
        return MappingProxyType(self._terms)

    def coefficient(self, gens: Sequence[GeneratorId]) -> float:
        canon = canonicalize(gens)
        if canon is None:
            return 0.0
        sign, key = canon
        return sign * self._terms.get(key, 0.0)

    def degrees(self) -> set[int]:
        return {len(m) for m in self._terms}

    def part(self, degree: int) -> "GrassmannPoly":
        return GrassmannPoly({m: v for m, v in self._terms.items() if len(m) == degree}, _trusted=True)

    def is_zero(self) -> bool:
        return not self._terms

    def max_abs(self) -> float:
        return max((abs(v) for v in self._terms.values()), default=0.0)

    def l1(self) -> float:
        return float(sum(abs(v) for v in self._terms.values()))

    def scalar_part(self) -> float:
        return self._terms.get((), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = GrassmannPoly.scalar(other)
        if not isinstance(other, GrassmannPoly):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        return hash(frozenset(self._terms.items()))

    def __repr__(self) -> str:
        if not self._terms:
            return "GrassmannPoly(0)"
        parts = []
        for mono, v in sorted(self._terms.items(), key=lambda kv: (len(kv[0]), kv[0])):
            parts.append(f"{v:+.6g}" + ("*" + "*".join(map(repr, mono)) if mono else ""))
        return "GrassmannPoly(" + " ".join(parts) + ")"

    # arithmetic -------------------------------------------------------------
    def __add__(self, other) -> "GrassmannPoly":
        if isinstance(other, (int, float)):
            other = GrassmannPoly.scalar(other)
        acc = dict(self._terms)
        for k, v in other._terms.items():
            acc[k] = acc.get(k, 0.0) + v
        return GrassmannPoly._from_acc(acc)

    __radd__ = __add__

    def __neg__(self) -> "GrassmannPoly":
        return GrassmannPoly({k: -v for k, v in self._terms.items()}, _trusted=True)

    def __sub__(self, other) -> "GrassmannPoly":
        return self + (-other)

    def __rsub__(self, other) -> "GrassmannPoly":
        return (-self) + other

    def scale(self, s: float) -> "GrassmannPoly":
        s = float(s)
        if s == 0.0:
            return GrassmannPoly.zero()
        return GrassmannPoly({k: s * v for k, v in self._terms.items()}, _trusted=True)

    def __mul__(self, other) -> "GrassmannPoly":
        if isinstance(other, (int, float, np.floating)):
            return self.scale(other)
        return multiply(self, other)

    def __rmul__(self, other) -> "GrassmannPoly":
        if isinstance(other, (int, float, np.floating)):
            return self.scale(other)
        return NotImplemented


def multiply(p: GrassmannPoly, q: GrassmannPoly) -> GrassmannPoly:
    """Graded product ``p * q``, canonicalised."""
    acc: dict = {}
    for m1, v1 in p._terms.items():
        for m2, v2 in q._terms.items():
            merged = _merge(m1, m2)
            if merged is None:
                continue
            sign, key = merged
            acc[key] = acc.get(key, 0.0) + sign * v1 * v2
    return GrassmannPoly._from_acc(acc)


def left_derivative(p: GrassmannPoly, g: GeneratorId) -> GrassmannPoly:
    acc: dict = {}
    for mono, v in p._terms.items():
        if g not in mono:
            continue
        k = mono.index(g)
        key = mono[:k] + mono[k + 1:]
        acc[key] = acc.get(key, 0.0) + (-v if k & 1 else v)
    return GrassmannPoly._from_acc(acc)


def all_left_derivatives(p: GrassmannPoly, kind: Kind | None = None) -> dict[GeneratorId, GrassmannPoly]:
    """Left derivatives with respect to every generator present, in one pass."""
    accs: dict = {}
    for mono, v in p._terms.items():
        for k, g in enumerate(mono):
            if kind is not None and g.kind != kind:
                continue
            acc = accs.setdefault(g, {})
            key = mono[:k] + mono[k + 1:]
            acc[key] = acc.get(key, 0.0) + (-v if k & 1 else v)
    return {g: GrassmannPoly._from_acc(acc) for g, acc in accs.items()}


# ---------------------------------------------------------------------------
# bosonic dependence

State = np.ndarray
GradDict = dict  # dict[int, GrassmannPoly]
HessDict = dict  # dict[int, dict[int, GrassmannPoly]]


@dataclass(frozen=True)
class SuperFunction:
    """Grassmann-valued function of a real state vector.

    ``grad(state)`` returns ``{var: d value / d state[var]}`` (zero entries may
    be omitted); ``hessian(state)`` returns a nested dict of second partials.
    Either may be ``None``; derivatives are then taken by central differences.
    """

    value: Callable[[State], GrassmannPoly]
    grad: Callable[[State], GradDict] | None = None
    hessian: Callable[[State], HessDict] | None = None
    label: str = ""

    def __call__(self, state: State) -> GrassmannPoly:
        return self.value(state)

    @classmethod
    def constant(cls, poly: GrassmannPoly, label: str = "") -> "SuperFunction":
        return cls(lambda s: poly, lambda s: {}, lambda s: {}, label)

    @classmethod
    def linear(cls, var: int, scale: float = 1.0, label: str = "") -> "SuperFunction":
        """``scale * state[var]`` as a scalar superfunction."""
        return cls(
            lambda s: GrassmannPoly.scalar(scale * s[var]),
            lambda s: {var: GrassmannPoly.scalar(scale)},
            lambda s: {},
            label,
        )


FD_STEP = 1e-6


def _grad_of(f: SuperFunction, state: State) -> GradDict:
    if f.grad is not None:
        return f.grad(state)
    out = {}
    for v in range(len(state)):
        up, dn = state.copy(), state.copy()
        up[v] += FD_STEP
        dn[v] -= FD_STEP
        d = (f.value(up) - f.value(dn)).scale(0.5 / FD_STEP)
        if not d.is_zero():
            out[v] = d
    return out


def _hessian_of(f: SuperFunction, state: State) -> HessDict:
    if f.hessian is not None:
        return f.hessian(state)
    out: HessDict = {}
    for v in range(len(state)):
        up, dn = state.copy(), state.copy()
        up[v] += FD_STEP
        dn[v] -= FD_STEP
        gu, gd = _grad_of(f, up), _grad_of(f, dn)
        for w in set(gu) | set(gd):
            d = (gu.get(w, GrassmannPoly.zero()) - gd.get(w, GrassmannPoly.zero())).scale(0.5 / FD_STEP)
            if not d.is_zero():
                out.setdefault(w, {})[v] = d
    return out


class DerivationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Derivation:
    """Odd derivation ``sum_g A_g d/dg + sum_v B_v d/dstate[v]``.

    ``grassmann`` holds ``(generator, coefficient)`` pairs and ``bosonic``
    holds ``(variable index, coefficient)`` pairs; coefficients are
    superfunctions and multiply from the left.
    """

    grassmann: tuple = ()
    bosonic: tuple = ()
    label: str = ""

    @classmethod
    def zero(cls) -> "Derivation":
        return cls()


def _as_superfunction(p) -> SuperFunction:
    if isinstance(p, SuperFunction):
        return p
    if isinstance(p, GrassmannPoly):
        return SuperFunction.constant(p)
    if isinstance(p, (int, float)):
        return SuperFunction.constant(GrassmannPoly.scalar(p))
    raise TypeError(f"cannot interpret {type(p).__name__} as a superfunction")


def _eval_coeff(entry_label, coeff: SuperFunction, state) -> GrassmannPoly:
    try:
        return coeff.value(state)
    except Exception as exc:  # noqa: BLE001
        raise DerivationError(f"coefficient of entry {entry_label} failed: {exc}") from exc


def _accumulate(acc: dict, poly: GrassmannPoly) -> None:
    for k, v in poly._terms.items():
        acc[k] = acc.get(k, 0.0) + v


def apply_derivation(D: Derivation, p, bosonic_state: State) -> GrassmannPoly:
    """Apply ``D`` to ``p`` (a GrassmannPoly or SuperFunction) at a bosonic state."""
    f = _as_superfunction(p)
    state = np.asarray(bosonic_state, dtype=float)
    acc: dict = {}
    if D.grassmann:
        derivs = all_left_derivatives(f.value(state))
        for g, coeff in D.grassmann:
            d = derivs.get(g)
            if d is None:
                continue
            _accumulate(acc, multiply(_eval_coeff(g, coeff, state), d))
    if D.bosonic:
        grad = _grad_of(f, state)
        for var, coeff in D.bosonic:
            d = grad.get(var)
            if d is None:
                continue
            _accumulate(acc, multiply(_eval_coeff(f"d/dstate[{var}]", coeff, state), d))
    return GrassmannPoly._from_acc(acc)


def derive(D: Derivation, p) -> SuperFunction:
    """``D p`` as a superfunction whose gradient is exact when ``p`` has a Hessian."""
    f = _as_superfunction(p)

    def value(state):
        return apply_derivation(D, f, state)

    def grad(state):
        state = np.asarray(state, dtype=float)
        fval = f.value(state)
        fgrad = _grad_of(f, state)
        fhess = _hessian_of(f, state) if D.bosonic else {}
        out: dict[int, dict] = {}

        def add(w, poly):
            _accumulate(out.setdefault(w, {}), poly)

        if D.grassmann:
            derivs = all_left_derivatives(fval)
            grad_derivs = {w: all_left_derivatives(gw) for w, gw in fgrad.items()}
            for g, coeff in D.grassmann:
                cgrad = _grad_of(coeff, state)
                d = derivs.get(g)
                if d is not None:
                    for w, cw in cgrad.items():
                        add(w, multiply(cw, d))
                cval = None
                for w, gd in grad_derivs.items():
                    dw = gd.get(g)
                    if dw is None:
                        continue
                    if cval is None:
                        cval = _eval_coeff(g, coeff, state)
                    add(w, multiply(cval, dw))
        for var, coeff in D.bosonic:
            cgrad = _grad_of(coeff, state)
            d = fgrad.get(var)
            if d is not None:
                for w, cw in cgrad.items():
                    add(w, multiply(cw, d))
            row = fhess.get(var, {})
            if row:
                cval = _eval_coeff(f"d/dstate[{var}]", coeff, state)
                for w, h in row.items():
                    add(w, multiply(cval, h))
        return {w: GrassmannPoly._from_acc(acc) for w, acc in out.items()}

    return SuperFunction(value, grad, None, label=f"{D.label}({f.label})")


def compose_square(D: Derivation, test, bosonic_state: State) -> GrassmannPoly:
    """``D(D(test))`` evaluated at ``bosonic_state``."""
    return apply_derivation(D, derive(D, test), bosonic_state)


# ---------------------------------------------------------------------------
# polynomial test functions with exact derivatives


@dataclass(frozen=True)
class PolynomialSuperFunction:
    """Sum of ``coef * prod(state[v] for v in bos) * monomial`` terms.

    ``terms`` is a sequence of ``(coef, bosonic_vars, generators)``; repeated
    bosonic variables mean powers.  Value, gradient and Hessian are exact.
    """

    terms: tuple = field(default_factory=tuple)

    def _parts(self):
        for coef, bos, gens in self.terms:
            poly = GrassmannPoly.product_of(gens, coef)
            if not poly.is_zero():
                yield poly, tuple(bos)

    def value(self, state) -> GrassmannPoly:
        acc: dict = {}
        for poly, bos in self._parts():
            _accumulate(acc, poly.scale(np.prod([state[v] for v in bos]) if bos else 1.0))
        return GrassmannPoly._from_acc(acc)

    def grad(self, state) -> GradDict:
        out: dict = {}
        for poly, bos in self._parts():
            for k, v in enumerate(bos):
                rest = bos[:k] + bos[k + 1:]
                s = np.prod([state[u] for u in rest]) if rest else 1.0
                _accumulate(out.setdefault(v, {}), poly.scale(s))
        return {v: GrassmannPoly._from_acc(acc) for v, acc in out.items()}

    def hessian(self, state) -> HessDict:
        out: dict = {}
        for poly, bos in self._parts():
            for k, v in enumerate(bos):
                for l, w in enumerate(bos):
                    if l == k:
                        continue
                    rest = tuple(u for m, u in enumerate(bos) if m not in (k, l))
                    s = np.prod([state[u] for u in rest]) if rest else 1.0
                    _accumulate(out.setdefault(v, {}).setdefault(w, {}), poly.scale(s))
        return {v: {w: GrassmannPoly._from_acc(a) for w, a in row.items()} for v, row in out.items()}

    def as_superfunction(self) -> SuperFunction:
        return SuperFunction(self.value, self.grad, self.hessian, label="poly")


def random_test_function(
    rng: np.random.Generator,
    generators: Sequence[GeneratorId],
    n_vars: int,
    *,
    max_degree: int = 2,
    n_terms: int = 6,
    max_bosonic_degree: int = 2,
) -> PolynomialSuperFunction:
    """Random polynomial test function over the given generators and variables."""
    generators = list(generators)
    terms = []
    for _ in range(n_terms):
        deg = int(rng.integers(0, max_degree + 1))
        idx = rng.choice(len(generators), size=min(deg, len(generators)), replace=False)
        gens = tuple(generators[i] for i in idx)
        bdeg = int(rng.integers(0, max_bosonic_degree + 1))
        bos = tuple(int(v) for v in rng.integers(0, n_vars, size=bdeg)) if n_vars else ()
        terms.append((float(rng.normal()), bos, gens))
    return PolynomialSuperFunction(tuple(terms))


def monomial_basis(generators: Iterable[GeneratorId], max_degree: int) -> list[Monomial]:
    from itertools import combinations

    gens = sorted(generators)
    out: list[Monomial] = []
    for d in range(max_degree + 1):
        out.extend(combinations(gens, d))
    return out
