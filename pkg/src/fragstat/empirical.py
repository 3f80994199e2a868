"""Empirical measure of rescaled frozen sizes and its limit.

For a frozen population ``(X_u)`` at threshold ``epsilon``,

    gamma_T(f) = sum_u X_u f(X_u / epsilon).

Its almost-sure limit is ``gamma_inf(f) = eta(Phi f)`` with
``Phi f(y) = f(exp(-y))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations
from typing import Sequence

import numpy as np

from .fragtree import Forest, FragmentationOutcome
from .renewal import StationaryLaw

ENUMERATION_GUARD = 1000


@dataclass(frozen=True)
class TestFunction:
    """Polynomial test function on ``[0, 1]``: ``offset + sum coef * x**power``.

    Instances are picklable and vectorised. ``id`` is the registry name.
    """

    __test__ = False  # not a pytest class

    id: str
    terms: tuple = ()
    offset: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, self.offset, dtype=float)
        for coef, power in self.terms:
            out = out + coef * x ** power
        return out

    def eval(self, x):
        return self(x)

    @property
    def bound(self) -> float:
        """``sup |f|`` on ``[0, 1]``, from a dense grid including the endpoints."""
        grid = np.linspace(0.0, 1.0, 10001)
        return float(np.max(np.abs(self(grid))))

    @property
    def is_zero(self) -> bool:
        return self.offset == 0.0 and all(c == 0.0 for c, _ in self.terms)

    def scaled(self, alpha: float) -> "TestFunction":
        return TestFunction(f"{alpha!r}*({self.id})", tuple((alpha * c, p) for c, p in self.terms),
                            alpha * self.offset)

    def plus(self, other: "TestFunction") -> "TestFunction":
        return TestFunction(f"({self.id})+({other.id})", self.terms + other.terms,
                            self.offset + other.offset)


@dataclass(frozen=True)
class PhiFunction:
    """``Phi f : y -> f(exp(-y))`` on the half line, picklable."""

    f: TestFunction

    def __call__(self, y):
        return self.f(np.exp(-np.asarray(y, dtype=float)))

    @property
    def id(self) -> str:
        return f"phi({self.f.id})"

    @property
    def bound(self) -> float:
        return self.f.bound


def phi_transform(f: TestFunction) -> PhiFunction:
    """``Phi f(y) = f(exp(-y))``; the sup-bound carries over."""
    return PhiFunction(f)


def const(value: float = 1.0) -> TestFunction:
    return TestFunction(f"const:{value!r}" if value != 1.0 else "const", (), float(value))


def power(k: float) -> TestFunction:
    k = int(k) if float(k).is_integer() else float(k)
    return TestFunction(f"power:{k}", ((1.0, k),), 0.0)


def gamma_infinity(f, eta: StationaryLaw, tol: float = 1e-10) -> float:
    """``gamma_inf(f) = int_0^b f(exp(-y)) eta(y) dy`` by adaptive Simpson."""
    return eta.expect(lambda y: float(f(math.exp(-y))), tol)


def centered(f: TestFunction, eta: StationaryLaw) -> TestFunction:
    """``f - gamma_inf(f)``."""
    m = gamma_infinity(f, eta)
    return TestFunction(f"centered:{f.id}", f.terms, f.offset - m)


def make_function(name: str, eta: StationaryLaw | None = None) -> TestFunction:
    """Registry lookup: ``const``, ``const:c``, ``zero``, ``power:k``, ``centered:<name>``."""
    name = name.strip()
    if name.startswith("centered:"):
        if eta is None:
            raise ValueError("centered functions need the stationary law")
        return centered(make_function(name[len("centered:"):], None), eta)
    if name == "const":
        return const(1.0)
    if name == "zero":
        return TestFunction("zero", (), 0.0)
    if name.startswith("const:"):
        return const(float(name.split(":", 1)[1]))
    if name.startswith("power:"):
        k = float(name.split(":", 1)[1])
        if k < 0:
            raise ValueError("power:k needs k >= 0")
        return power(k)
    raise ValueError(f"unknown test function {name!r}; use const, const:c, zero, power:k "
                     f"or centered:<name>")


def _sizes_eps(outcome) -> tuple[np.ndarray, float]:
    if isinstance(outcome, FragmentationOutcome):
        return np.asarray(outcome.sizes, dtype=float), outcome.epsilon
    sizes, eps = outcome
    return np.asarray(sizes, dtype=float), float(eps)


def gamma(outcome, f) -> float:
    """``sum_u X_u f(X_u / epsilon)`` with an exactly rounded sum.

    ``outcome`` is a :class:`FragmentationOutcome` or a ``(sizes, epsilon)`` pair.
    """
    x, eps = _sizes_eps(outcome)
    return math.fsum((x * f(x / eps)).tolist())


def gamma_tensor_q(outcome, functions: Sequence) -> float:
    """Sum over all maps ``[q] -> fragments``: the product of the single sums."""
    return math.prod(gamma(outcome, f) for f in functions)


def _set_partitions(items: list):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


def gamma_odot_q(outcome, functions: Sequence) -> float:
    """Sum over injective maps ``[q] -> fragments`` of ``prod_i X_{u_i} f_i(X_{u_i} / epsilon)``.

    ``q = 2`` uses ``gamma(f) gamma(g) - sum X^2 f g``; ``q = 3`` the
    analogous inclusion-exclusion. For ``q >= 4`` the coincidence
    patterns are summed over set partitions with Moebius weights
    ``prod_B (-1)^{|B|-1} (|B|-1)!``; the population is limited to
    1000 fragments there.
    """
    q = len(functions)
    if q < 1:
        raise ValueError("need at least one function")
    x, eps = _sizes_eps(outcome)
    vals = [x * f(x / eps) for f in functions]  # X_u f_i(X_u / eps)

    def block(idx):
        # sum_u X_u^{|B|} prod_{i in B} f_i
        prod = np.ones_like(x)
        for i in idx:
            prod = prod * vals[i]
        return math.fsum(prod.tolist())

    if q == 1:
        return block([0])
    if q == 2:
        return block([0]) * block([1]) - block([0, 1])
    if q == 3:
        a, b, c = block([0]), block([1]), block([2])
        return (a * b * c - block([0, 1]) * c - block([0, 2]) * b - block([1, 2]) * a
                + 2.0 * block([0, 1, 2]))
    if x.size > ENUMERATION_GUARD:
        raise ValueError(f"q={q} needs at most {ENUMERATION_GUARD} fragments, got {x.size}; "
                         "use a larger epsilon or a smaller q")
    cache = {}
    terms = []
    for part in _set_partitions(list(range(q))):
        w = 1.0
        for bl in part:
            key = tuple(bl)
            if key not in cache:
                cache[key] = block(key)
            w *= (-1) ** (len(bl) - 1) * math.factorial(len(bl) - 1) * cache[key]
        terms.append(w)
    return math.fsum(terms)


def gamma_odot_bruteforce(outcome, functions: Sequence) -> float:
    """Literal sum over injective maps. Exponential cost; for small populations only."""
    x, eps = _sizes_eps(outcome)
    q = len(functions)
    if x.size ** q > 10 ** 7:
        raise ValueError("population too large for literal enumeration")
    vals = [x * f(x / eps) for f in functions]
    terms = []
    for u in permutations(range(x.size), q):
        terms.append(math.prod(vals[i][u[i]] for i in range(q)))
    return math.fsum(terms)


def forest_gammas(forest: Forest, functions: Sequence) -> np.ndarray:
    """``gamma_T(f)`` for every tree of a forest and every function, shape ``(n_trees, k)``."""
    x = forest.sizes
    out = np.empty((forest.n_trees, len(functions)))
    for j, f in enumerate(functions):
        out[:, j] = forest.segment_fsum(x * f(x / forest.epsilon))
    return out


def forest_pair_gammas(forest: Forest, f, g) -> np.ndarray:
    """``gamma^{odot 2}(f (x) g)`` for every tree of a forest."""
    x = forest.sizes
    fx = x * f(x / forest.epsilon)
    gx = x * g(x / forest.epsilon)
    return forest.segment_fsum(fx) * forest.segment_fsum(gx) - forest.segment_fsum(fx * gx)
