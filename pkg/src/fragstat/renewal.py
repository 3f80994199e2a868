"""Waiting law, stationary residual law and renewal computations.

Along a tagged lineage the successive values of ``-log(size)`` form a renewal
process. Its inter-arrival law ``pi`` is the law of ``-log`` of a size-biased
ratio. For a binary law whose split point ``V`` has density ``h`` on
``[c, 1-c]``, the size-biased ratio ``s`` has density ``s (h(s) + h(1-s))``,
so that

    pi(x) = exp(-2x) (h(exp(-x)) + h(1 - exp(-x)))   on [a, b].

For the uniform split this is ``2 exp(-2x) / (1 - 2c)``. The residual
lifetime ``B_t`` converges in law to ``eta`` with density ``(1 - F(x)) / mu``
on ``[0, b]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dislocation import DislocationLaw, require_valid
from .quadrature import quadrature
from .streams import block_rng, block_sizes, run_blocks

RESIDUAL_BLOCK = 1 << 18
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(40)


# ---------------------------------------------------------------------------
# waiting law
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WaitingLaw:
    """Law ``pi`` of ``-log`` of the size-biased ratio.

    For atomic laws (the deterministic negative control) :attr:`discrete`
    is true, :meth:`density` raises and ``atoms`` lists
    ``(location, probability)`` pairs.
    """

    law: DislocationLaw
    a: float
    b: float
    mu: float
    kind: str
    breakpoints: tuple = ()
    atoms: tuple = ()
    # size-biased ratio table for the tabulated family
    _nodes: np.ndarray | None = field(default=None, repr=False, compare=False)
    _upper: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def support(self) -> tuple[float, float]:
        return (self.a, self.b)

    @property
    def discrete(self) -> bool:
        return self.kind == "atomic"

    def density(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.a) & (x <= self.b)
        if self.kind == "uniform":
            return np.where(inside, 2.0 * np.exp(-2.0 * x) / (1.0 - 2.0 * self.law.c), 0.0)
        if self.kind == "table":
            d = self.law.split_density
            s = np.exp(-x)
            val = np.exp(-2.0 * x) * (d.pdf(s) + d.pdf(1.0 - s)) / self._upper[0]
            return np.where(inside, val, 0.0)
        raise ValueError("atomic waiting law has no density")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            c = self.law.c
            xc = np.clip(x, self.a, self.b)
            return np.clip(((1.0 - c) ** 2 - np.exp(-2.0 * xc)) / (1.0 - 2.0 * c), 0.0, 1.0)
        if self.kind == "table":
            xc = np.clip(x, self.a, self.b)
            return np.clip(self._tail_mass(np.exp(-xc)), 0.0, 1.0)
        xs = np.array([loc for loc, _ in self.atoms])
        ps = np.array([p for _, p in self.atoms])
        return (ps * (x[..., None] >= xs)).sum(axis=-1)

    def _sb_density(self, s):
        d = self.law.split_density
        s = np.asarray(s, dtype=float)
        return s * (d.pdf(s) + d.pdf(1.0 - s))

    def _tail_mass(self, y):
        # P(s >= y) for the size-biased ratio s; Simpson is exact on the quadratic pieces
        nodes, upper = self._nodes, self._upper
        y = np.clip(np.asarray(y, dtype=float), nodes[0], nodes[-1])
        k = np.clip(np.searchsorted(nodes, y, side="right") - 1, 0, nodes.size - 2)
        hi = nodes[k + 1]
        mid = 0.5 * (y + hi)
        part = (hi - y) / 6.0 * (self._sb_density(y) + 4.0 * self._sb_density(mid)
                                 + self._sb_density(hi))
        return (upper[k + 1] + part) / upper[0]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` waiting times through one dislocation and a size-biased pick each."""
        r = self.law.sample_batch(rng, n)
        u = rng.random(n)
        chosen = np.where(u < r[:, 0], r[:, 0], r[:, 1])
        return -np.log(chosen)

    def sample_size_biased(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw from ``pi_1(dx) = x pi(dx) / mu`` by rejection with acceptance ``x / b``."""
        out = np.empty(n)
        filled = 0
        while filled < n:
            need = n - filled
            m = int(need * self.b / self.mu * 1.1) + 16
            x = self.sample(rng, m)
            keep = x[rng.random(m) * self.b < x]
            take = min(keep.size, need)
            out[filled:filled + take] = keep[:take]
            filled += take
        return out

    def expect(self, fn: Callable[[float], float], tol: float = 1e-10) -> float:
        """``E fn(Y)`` for ``Y ~ pi``."""
        if self.discrete:
            return math.fsum(p * fn(x) for x, p in self.atoms)
        return quadrature(lambda x: fn(x) * float(self.density(x)), self.a, self.b, tol,
                          self.breakpoints)


def _uniform_pi(law: DislocationLaw) -> WaitingLaw:
    c = law.c
    a, b = law.support_log_ratio
    mu = ((a + 0.5) * math.exp(-2.0 * a) - (b + 0.5) * math.exp(-2.0 * b)) / (1.0 - 2.0 * c)
    return WaitingLaw(law, a, b, mu, "uniform")


def _table_pi(law: DislocationLaw) -> WaitingLaw:
    d = law.split_density
    a, b = law.support_log_ratio
    c = law.c
    # the size-biased ratio s lives on [c, 1-c] with density s (h(s) + h(1-s)),
    # a quadratic between consecutive breakpoints of the symmetrised table
    nodes = np.unique(np.concatenate([d.x, 1.0 - d.x]))
    nodes = nodes[(nodes >= c) & (nodes <= 1.0 - c)]

    def sdens(s):
        return s * (d.pdf(s) + d.pdf(1.0 - s))

    lo, hi = nodes[:-1], nodes[1:]
    cells = (hi - lo) / 6.0 * (sdens(lo) + 4.0 * sdens(0.5 * (lo + hi)) + sdens(hi))
    upper = np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])
    bps = tuple(sorted(float(-math.log(s)) for s in nodes if c < s < 1.0 - c))
    pi = WaitingLaw(law, a, b, 0.0, "table", bps, (), nodes, upper)
    mu = quadrature(lambda x: x * float(pi.density(x)), a, b, 1e-12, bps)
    return WaitingLaw(law, a, b, mu, "table", bps, (), nodes, upper)


def _atomic_pi(law: DislocationLaw) -> WaitingLaw:
    s1 = max(law.p, 1.0 - law.p)
    if s1 == 0.5:
        atoms = ((math.log(2.0), 1.0),)
    else:
        atoms = ((-math.log(s1), s1), (-math.log(1.0 - s1), 1.0 - s1))
    mu = math.fsum(x * p for x, p in atoms)
    locs = [x for x, _ in atoms]
    return WaitingLaw(law, min(locs), max(locs), mu, "atomic", atoms=atoms)


def derive_pi(law: DislocationLaw, allow_invalid: bool = False) -> WaitingLaw:
    """Waiting law ``pi`` of a dislocation law.

    The deterministic family yields an atomic law (``density is None``); it
    fails the continuity assumption, so ``allow_invalid=True`` is required.
    """
    require_valid(law, allow_invalid)
    if law.family == "binary_uniform":
        return _uniform_pi(law)
    if law.family == "binary_density":
        return _table_pi(law)
    return _atomic_pi(law)


# ---------------------------------------------------------------------------
# stationary residual law
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StationaryLaw:
    """Limit law ``eta`` of the residual lifetime, density ``(1 - F) / mu`` on ``[0, b]``."""

    pi: WaitingLaw
    # tabulated CDF for families without a closed form
    _grid: np.ndarray | None = field(default=None, repr=False, compare=False)
    _cum: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def b(self) -> float:
        return self.pi.b

    def density(self, x):
        x = np.asarray(x, dtype=float)
        val = (1.0 - self.pi.cdf(x)) / self.pi.mu
        return np.where((x >= 0.0) & (x <= self.pi.b), val, 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        pi = self.pi
        if pi.kind == "uniform":
            c = pi.law.c
            a = pi.a
            xc = np.clip(x, 0.0, pi.b)
            xa = np.maximum(xc, a)
            upper = ((math.exp(-2.0 * a) - np.exp(-2.0 * xa)) / 2.0 - c * c * (xa - a)) / (1.0 - 2.0 * c)
            return np.clip(np.where(xc < a, xc, a + upper) / pi.mu, 0.0, 1.0)
        return np.interp(x, self._grid, self._cum, left=0.0, right=1.0)

    @property
    def breakpoints(self) -> tuple:
        return (self.pi.a, *self.pi.breakpoints)

    def expect(self, fn: Callable[[float], float], tol: float = 1e-10) -> float:
        """``eta(fn)`` by adaptive Simpson on ``[0, b]``."""
        return quadrature(lambda y: fn(y) * float(self.density(y)), 0.0, self.b, tol,
                          self.breakpoints)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``C (1 - U)`` with ``C ~ pi_1`` and ``U`` uniform."""
        cbar = self.pi.sample_size_biased(rng, n)
        return cbar * (1.0 - rng.random(n))


def stationary_eta(pi: WaitingLaw) -> StationaryLaw:
    """The stationary residual law of a continuous waiting law.

    Integrating ``s`` out of ``(1/mu) int_0^inf E[f(Y - s); Y >= s] ds``
    gives the density ``P(Y > x) / mu`` on ``[0, b]``.
    """
    if pi.discrete:
        raise ValueError("the stationary law is only supported for continuous waiting laws")
    if pi.kind == "uniform":
        return StationaryLaw(pi)
    # tabulated integral of the survival function (Simpson cells) plus interpolation
    grid = np.linspace(0.0, pi.b, 8193)
    mids = 0.5 * (grid[1:] + grid[:-1])
    surv = lambda y: 1.0 - pi.cdf(y)
    cells = (grid[1:] - grid[:-1]) / 6.0 * (surv(grid[:-1]) + 4.0 * surv(mids) + surv(grid[1:]))
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    cum /= cum[-1]
    return StationaryLaw(pi, grid, cum)


def eta_double_integral(pi: WaitingLaw, fn: Callable[[float], float], tol: float = 1e-10) -> float:
    """``(1/mu) int_0^b E[fn(Y - s); Y >= s] ds`` by nested quadrature (a cross-check)."""

    def inner(s):
        lo = max(s, pi.a)
        if lo >= pi.b:
            return 0.0
        bps = [p for p in pi.breakpoints if lo < p < pi.b]
        return quadrature(lambda y: fn(y - s) * float(pi.density(y)), lo, pi.b, tol, bps)

    return quadrature(inner, 0.0, pi.b, tol, (pi.a,)) / pi.mu


# ---------------------------------------------------------------------------
# residual lifetimes
# ---------------------------------------------------------------------------


def simulate_residual(pi: WaitingLaw, t: float, rng: np.random.Generator) -> float:
    """Residual lifetime at ``t`` of a renewal process without delay."""
    if t < 0:
        raise ValueError("t must be non-negative")
    s = 0.0
    while s <= t:
        s += float(pi.sample(rng, 1)[0])
    return s - t


def residual_batch(pi: WaitingLaw, t: float, n: int, rng: np.random.Generator,
                   start: np.ndarray | None = None) -> np.ndarray:
    """Vectorised residual lifetimes at ``t``.

    Parameters
    ----------
    start : array, optional
        First epoch of each process (a delay). Without it each process
        starts with an epoch at 0.
    """
    pos = np.zeros(n) if start is None else np.array(start, dtype=float)
    idx = np.flatnonzero(pos <= t)
    while idx.size:
        pos[idx] += pi.sample(rng, idx.size)
        idx = idx[pos[idx] <= t]
    return pos - t


def _residual_block(pi, t, n, seed, tag, block):
    return residual_batch(pi, t, n, block_rng(seed, tag, block))


def residuals(pi: WaitingLaw, t: float, M: int, seed: int, tag: str = "residual",
              workers: int = 1) -> np.ndarray:
    """``M`` residual lifetimes at ``t`` from the deterministic block streams."""
    tasks = [(pi, t, n, seed, f"{tag}:{t!r}", k) for k, n in enumerate(block_sizes(M, RESIDUAL_BLOCK))]
    return np.concatenate(run_blocks(_residual_block, tasks, workers))


# ---------------------------------------------------------------------------
# renewal equation
# ---------------------------------------------------------------------------


def _panels(pi: WaitingLaw, lo: float, hi: float) -> list[tuple[float, float]]:
    cuts = [lo] + [p for p in pi.breakpoints if lo < p < hi] + [hi]
    return list(zip(cuts[:-1], cuts[1:]))


def overshoot_reward(pi: WaitingLaw, f: Callable, t) -> np.ndarray:
    """``g(t) = E[f(Y - t); Y > t]`` for ``Y ~ pi``, vectorised over ``t >= 0``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros_like(t)
    for i, ti in enumerate(t):
        lo = max(ti, pi.a)
        if lo >= pi.b:
            continue
        acc = 0.0
        for p0, p1 in _panels(pi, lo, pi.b):
            y = 0.5 * (p1 - p0) * _GL_NODES + 0.5 * (p1 + p0)
            acc += 0.5 * (p1 - p0) * float(np.dot(_GL_WEIGHTS, f(y - ti) * pi.density(y)))
        out[i] = acc
    return out


def _reward_table(pi: WaitingLaw, f: Callable, h: float) -> tuple[np.ndarray, np.ndarray]:
    # vectorised version of overshoot_reward on a uniform grid of [0, b]
    n = int(math.ceil(pi.b / h)) + 1
    grid = np.arange(n) * h
    vals = np.zeros(n)
    cuts = sorted({pi.a, pi.b, *pi.breakpoints})
    for p0, p1 in zip(cuts[:-1], cuts[1:]):
        lo = np.clip(grid, p0, p1)
        width = p1 - lo
        y = lo[:, None] + 0.5 * width[:, None] * (_GL_NODES[None, :] + 1.0)
        vals += 0.5 * width * ((f(y - grid[:, None]) * pi.density(y)) @ _GL_WEIGHTS)
    return grid, vals


@dataclass
class RenewalFunction:
    """Numerical solution of ``H = g + pi * H`` on a uniform grid.

    ``H(t) = E f(B_t)``; calling the object interpolates linearly. For
    negative arguments the object returns ``f(-t)``: a lineage already past
    the observation level by ``-t`` has residual ``-t``.
    """

    t: np.ndarray
    values: np.ndarray
    f: Callable = field(repr=False)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        inside = np.interp(s, self.t, self.values)
        if np.any(s < 0):
            return np.where(s < 0, self.f(np.abs(s)), inside)
        return inside

    def envelope(self) -> np.ndarray:
        """``sup_{u >= t} |H(u)|`` on the grid."""
        return np.maximum.accumulate(np.abs(self.values)[::-1])[::-1]


def renewal_function(pi: WaitingLaw, f: Callable, t_max: float, h: float = 1e-3) -> RenewalFunction:
    """Solve the renewal equation for ``H(t) = E f(B_t)``, no delay.

    Product integration: ``H`` is taken piecewise linear on the grid and the
    convolution weights against ``pi`` are integrated exactly (Gauss-Legendre
    per cell), which gives second-order accuracy in ``h``.
    """
    if pi.discrete:
        raise ValueError("renewal_function needs a continuous waiting law")
    if h >= pi.a:
        raise ValueError("grid step must be below the lower support point a")
    n = int(round(t_max / h)) + 1
    grid = np.arange(n) * h
    gt, gv = _reward_table(pi, f, h)
    g = np.zeros(n)
    m = min(n, gv.size)
    g[:m] = gv[:m]

    J = int(math.ceil(pi.b / h)) + 1
    w0 = np.zeros(J)
    w1 = np.zeros(J)
    j = np.arange(J)
    lo = np.maximum(j * h, pi.a)
    hi = np.minimum((j + 1) * h, pi.b)
    ok = hi > lo
    y = lo[:, None] + 0.5 * (hi - lo)[:, None] * (_GL_NODES[None, :] + 1.0)
    frac = (y - (j * h)[:, None]) / h
    dens = pi.density(y)
    half = 0.5 * (hi - lo)
    w0[ok] = (half[:, None] * dens * (1.0 - frac) @ _GL_WEIGHTS)[ok]
    w1[ok] = (half[:, None] * dens * frac @ _GL_WEIGHTS)[ok]

    H = np.zeros(n)
    for k in range(n):
        jm = min(J, k)
        acc = g[k]
        if jm:
            # cell j covers y in [j h, (j+1) h]; H(k h - y) interpolates H[k-j] and H[k-j-1]
            acc += np.dot(w0[:jm], H[k - jm + 1:k + 1][::-1])
            acc += np.dot(w1[:jm], H[k - jm:k][::-1])
        H[k] = acc
    return RenewalFunction(grid, H, f)


# ---------------------------------------------------------------------------
# convergence-rate experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateRow:
    t: float
    estimate: float
    gap: float
    se: float


def reward_sums(pi: WaitingLaw, t: float, n: int, rng: np.random.Generator,
                table: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Per-process ``sum_k g(t - S_k)`` over epochs ``S_k <= t``.

    Its mean is ``E f(B_t)`` exactly (condition on the last epoch before
    ``t``), with smaller variance than ``f(B_t)`` itself.
    """
    grid, vals = table
    b = grid[-1]
    pos = np.zeros(n)
    acc = np.zeros(n)
    idx = np.arange(n)
    while idx.size:
        lag = t - pos[idx]
        near = lag <= b
        acc[idx[near]] += np.interp(lag[near], grid, vals)
        pos[idx] += pi.sample(rng, idx.size)
        idx = idx[pos[idx] <= t]
    return acc


def _rate_block(pi, f, t, n, seed, tag, block, estimator, table):
    rng = block_rng(seed, tag, block)
    if estimator == "crude":
        x = f(residual_batch(pi, t, n, rng))
    else:
        x = reward_sums(pi, t, n, rng, table)
    return float(np.sum(x)), float(np.sum(x * x)), int(x.size)


def rate_experiment(
    pi: WaitingLaw,
    f: Callable,
    t_grid: Sequence[float],
    M: int,
    seed: int,
    eta_f: float | None = None,
    estimator: str = "crude",
    workers: int = 1,
    tag: str = "rate",
) -> list[RateRow]:
    """Monte Carlo estimate of ``|E f(B_t) - eta(f)|`` on a grid of ``t``.

    Parameters
    ----------
    f : callable
        Vectorised function on ``[0, b]`` (log space).
    estimator : {"crude", "renewal_reward"}
        ``crude`` averages ``f(B_t)``; ``renewal_reward`` averages
        ``sum_k g(t - S_k)`` with ``g(u) = E[f(Y - u); Y > u]``, which has
        the same mean.
    """
    if estimator not in ("crude", "renewal_reward"):
        raise ValueError(f"unknown estimator {estimator!r}")
    if eta_f is None:
        eta_f = stationary_eta(pi).expect(lambda y: float(f(np.array([y]))[0]))
    table = _reward_table(pi, f, pi.b / 32768) if estimator == "renewal_reward" else None
    rows = []
    for t in t_grid:
        sizes = block_sizes(M, RESIDUAL_BLOCK)
        tasks = [(pi, f, float(t), n, seed, f"{tag}:{estimator}:{float(t)!r}", k, estimator, table)
                 for k, n in enumerate(sizes)]
        parts = run_blocks(_rate_block, tasks, workers)
        s1 = math.fsum(p[0] for p in parts)
        s2 = math.fsum(p[1] for p in parts)
        m = sum(p[2] for p in parts)
        mean = s1 / m
        var = max(s2 / m - mean * mean, 0.0) * m / (m - 1)
        se = math.sqrt(var / m)
        rows.append(RateRow(float(t), mean, abs(mean - eta_f), se))
    if rows and rows[0].se >= rows[0].gap and rows[0].gap > 0:
        warnings.warn(f"standard error {rows[0].se:.3g} exceeds the gap {rows[0].gap:.3g} at "
                      f"t={rows[0].t}; increase M", RuntimeWarning, stacklevel=2)
    return rows


def log_gap_slope(rows: Sequence[RateRow], floor_sigmas: float = 3.0) -> dict:
    """Slope of ``log gap`` against ``t`` before the noise floor.

    The pre-noise region is the leading run of grid points whose gap exceeds
    ``floor_sigmas`` standard errors. With two or more such points the slope
    is the least-squares fit through them. With exactly one, the next point
    only tells us its gap is below ``floor_sigmas * se``; the slope is then
    reported as the upper bound ``(log(floor_sigmas * se_next) - log gap_0) / dt``.
    With none the slope is undefined.
    """
    pre = []
    for r in rows:
        if r.gap > floor_sigmas * r.se:
            pre.append(r)
        else:
            break
    out = {"n_pre_noise": len(pre), "kind": None, "slope": None, "decreasing": None}
    if len(pre) >= 2:
        t = np.array([r.t for r in pre])
        y = np.log([r.gap for r in pre])
        slope = float(np.polyfit(t, y, 1)[0])
        out.update(kind="least_squares", slope=slope, decreasing=bool(np.all(np.diff(y) < 0)))
    elif len(pre) == 1 and len(rows) > 1:
        nxt = rows[1]
        bound = (math.log(floor_sigmas * nxt.se) - math.log(pre[0].gap)) / (nxt.t - pre[0].t)
        out.update(kind="upper_bound", slope=float(bound), decreasing=bound < 0)
    return out
