"""Pair functional V, covariance K and the tag combinatorics.

Estimators of V
---------------
``pairtag``
    ``(1/epsilon) E[phi(B1_T) psi(B2_T); tags separated]`` from simulated
    pairs of tags.
``pairtag_rb``
    The same expectation with tag 2 integrated out. Along tag 1's lineage
    ``0 = S_0 < S_1 < ...`` with ``s_{j+1} = exp(-(S_{j+1} - S_j))`` the
    tags are still together at ``S_j`` with probability ``exp(-S_j)`` and
    part there with probability ``1 - s_{j+1}``; tag 2 then sits on the
    sibling at level ``S_j - log(1 - s_{j+1})``. Hence

        (1/eps) E[...] = E[ phi(B1_T) sum_j exp(T - S_j) (1 - s_{j+1})
                             H_psi(T - S_j + log(1 - s_{j+1})) ]

    with ``H_psi(t) = E psi(B_t)`` from the renewal equation and
    ``H_psi(t) = psi(-t)`` for ``t < 0``.
``coupled``
    The limit itself, written as an integral over the level ``v`` (relative
    to the freezing level) where the tags part. At ``v`` tag 1's stationary
    lineage has age ``A`` and residual ``R`` with joint density
    ``pi(A + R) / mu``. The split happened at level ``v - A`` (it must be
    below the freezing level, ``A >= v``); tag 1 continues from ``v + R``,
    tag 2 from the sibling at ``v - A - log(1 - exp(-(A + R)))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dislocation import DislocationLaw
from .renewal import RenewalFunction, StationaryLaw, WaitingLaw, renewal_function, residual_batch, stationary_eta
from .streams import block_rng, block_sizes, run_blocks
from .taglines import simulate_tag_batch, symmetrised_product

TAG_BLOCK = 1 << 16
COUPLED_BLOCK = 1 << 18
CENTERING_TOL = 1e-8
H_STEP = 1e-3


# ---------------------------------------------------------------------------
# combinatorics
# ---------------------------------------------------------------------------


def k1(q: int) -> int:
    """``sum_{i=1}^q q! / (q - i)!``."""
    if q < 1:
        raise ValueError("q must be at least 1")
    return sum(math.factorial(q) // math.factorial(q - i) for i in range(1, q + 1))


def pairings(q: int) -> list[tuple[tuple[int, int], ...]]:
    """All partitions of ``{1..q}`` into pairs, without duplicates."""
    if q < 2 or q % 2:
        raise ValueError(f"pairings need an even q >= 2, got {q}")

    def rec(items):
        if not items:
            yield ()
            return
        first = items[0]
        for k in range(1, len(items)):
            rest = items[1:k] + items[k + 1:]
            for tail in rec(rest):
                yield ((first, items[k]),) + tail

    return list(rec(tuple(range(1, q + 1))))


def n_pairings(q: int) -> int:
    """``q! / (2^{q/2} (q/2)!)``."""
    if q < 2 or q % 2:
        raise ValueError(f"pairings need an even q >= 2, got {q}")
    p = q // 2
    return math.factorial(q) // (2 ** p * math.factorial(p))


def combinatorics(q: int) -> dict:
    """``K1(q)`` and, for even ``q``, the pairings of ``[q]`` and their count."""
    out = {"q": q, "K1": k1(q)}
    if q % 2 == 0:
        out["pairings"] = pairings(q)
        out["n_pairings"] = n_pairings(q)
    return out


# ---------------------------------------------------------------------------
# estimate containers
# ---------------------------------------------------------------------------


@dataclass
class PairFunctionalEstimate:
    value: float
    se: float
    epsilon_used: float | None
    M: int
    method: str
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"value": self.value, "se": self.se, "epsilon": self.epsilon_used, "M": self.M,
                "method": self.method, **self.extras}


@dataclass
class CovarianceMatrix:
    """``K = eta-term + V-term`` for a list of centered functions."""

    ids: list
    eta_term: np.ndarray
    v_term: np.ndarray
    v_se: np.ndarray
    method: str
    epsilon: float | None
    M: int

    @property
    def entries(self) -> np.ndarray:
        return self.eta_term + self.v_term

    @property
    def se(self) -> np.ndarray:
        return self.v_se

    def as_dict(self) -> dict:
        return {"functions": list(self.ids), "method": self.method, "epsilon": self.epsilon,
                "M": self.M, "K": self.entries.tolist(), "eta_term": self.eta_term.tolist(),
                "v_term": self.v_term.tolist(), "se": self.v_se.tolist()}


def _moments(parts) -> tuple[np.ndarray, np.ndarray, int]:
    # combine block-wise (sum, sum of squares, count) in block order
    s1 = np.sum([p[0] for p in parts], axis=0)
    s2 = np.sum([p[1] for p in parts], axis=0)
    n = int(sum(p[2] for p in parts))
    mean = s1 / n
    var = np.maximum(s2 / n - mean * mean, 0.0) * n / max(n - 1, 1)
    return mean, np.sqrt(var / n), n


def _block_sums(x: np.ndarray):
    x = np.atleast_2d(x)
    return x.sum(axis=1), (x * x).sum(axis=1), x.shape[1]


def check_centered(fns: Sequence, eta: StationaryLaw, names: Sequence[str] | None = None):
    """Raise unless ``eta(fn) == 0`` within tolerance for every log-space function."""
    for k, fn in enumerate(fns):
        m = eta.expect(lambda y: float(fn(np.array([y]))[0]))
        if abs(m) > CENTERING_TOL:
            label = names[k] if names else getattr(fn, "id", f"function {k}")
            raise ValueError(f"{label} is not centered: its eta-integral is {m:.3e}")


# ---------------------------------------------------------------------------
# pair-tag estimators
# ---------------------------------------------------------------------------


def _pairtag_block(law, T, n, seed, tag, block, pairs):
    b = simulate_tag_batch(law, 2, T, n, block_rng(seed, tag, block))
    sep = b.separated
    vals = np.stack([phi(b.B_T[:, 0]) * psi(b.B_T[:, 1]) * sep for phi, psi in pairs])
    return _block_sums(vals)


def _rb_block(law, pi, T, n, seed, tag, block, pairs, tables):
    rng = block_rng(seed, tag, block)
    level = np.zeros(n)
    acc = np.zeros((len(pairs), n))
    idx = np.arange(n)
    while idx.size:
        r = law.sample_batch(rng, idx.size)
        u = rng.random(idx.size)
        s = np.where(u < r[:, 0], r[:, 0], r[:, 1])
        lv = level[idx]
        w = np.exp(T - lv) * (1.0 - s)
        sib = T - lv + np.log1p(-s)
        for k, (_, psi) in enumerate(pairs):
            acc[k, idx] += w * tables[k](sib)
        level[idx] = lv - np.log(s)
        idx = idx[level[idx] <= T]
    resid = level - T
    vals = np.stack([phi(resid) * acc[k] for k, (phi, _) in enumerate(pairs)])
    return _block_sums(vals)


def pairtag_moments(law: DislocationLaw, pairs: Sequence[tuple[Callable, Callable]],
                    epsilon: float, M: int, seed: int, workers: int = 1,
                    conditioned: bool = False, pi: WaitingLaw | None = None) -> tuple:
    """Scaled pair moments ``(1/eps) E[phi(B1) psi(B2); separated]`` for several pairs.

    Returns ``(means, ses, M)`` with one entry per pair; all pairs share the
    same simulated tags.
    """
    T = -math.log(epsilon)
    sizes = block_sizes(M, TAG_BLOCK)
    if conditioned:
        if pi is None:
            raise ValueError("the conditioned estimator needs the waiting law")
        tables = [renewal_function(pi, psi, T + 1.0, H_STEP) for _, psi in pairs]
        tag = f"pairtag_rb:{epsilon!r}"
        tasks = [(law, pi, T, n, seed, tag, k, list(pairs), tables) for k, n in enumerate(sizes)]
        mean, se, n = _moments(run_blocks(_rb_block, tasks, workers))
        return mean, se, n
    tag = f"pairtag:{epsilon!r}"
    tasks = [(law, T, n, seed, tag, k, list(pairs)) for k, n in enumerate(sizes)]
    mean, se, n = _moments(run_blocks(_pairtag_block, tasks, workers))
    return mean / epsilon, se / epsilon, n


def estimate_V_pairtag(law: DislocationLaw, phi: Callable, psi: Callable, epsilon: float,
                       M: int, seed: int, workers: int = 1, conditioned: bool = False,
                       eta: StationaryLaw | None = None, v_max: float | None = None) -> PairFunctionalEstimate:
    """Pair-tag estimate of ``V(phi, psi)`` at threshold ``epsilon``.

    ``phi`` and ``psi`` are functions on the half line (log space) and must
    be centered under ``eta``. With ``conditioned=True`` the second tag is
    integrated out through the renewal function (see the module notes).
    """
    from .dislocation import require_valid
    from .renewal import derive_pi

    require_valid(law)
    pi = derive_pi(law)
    if eta is None:
        eta = stationary_eta(pi)
    check_centered([phi, psi], eta)
    mean, se, n = pairtag_moments(law, [(phi, psi)], epsilon, M, seed, workers, conditioned, pi)
    return PairFunctionalEstimate(float(mean[0]), float(se[0]), float(epsilon), n,
                                  "pairtag_rb" if conditioned else "pairtag")


# ---------------------------------------------------------------------------
# coupled estimator (stationary two-sided lineage)
# ---------------------------------------------------------------------------


def _default_vmin(pi: WaitingLaw, tables: Sequence[tuple[RenewalFunction, RenewalFunction]],
                  tol: float = 1e-8, cap: float = 20.0) -> float:
    # |integrand at v = -u| <= exp(u) sup_{s >= u-b}|H_phi(s)| sup_{s >= u-b}|H_psi(s)|
    best = pi.b
    for hp, hq in tables:
        ep, eq = hp.envelope(), hq.envelope()
        grid = hp.t
        u = grid + pi.b
        bound = np.exp(u) * ep * eq
        ok = np.flatnonzero((bound < tol) & (u >= 2.0 * pi.b))
        u_needed = float(u[ok[0]]) if ok.size else cap
        best = max(best, min(u_needed, cap))
    return best


def _coupled_block(pi, n, seed, tag, block, v_min, proposal, fns, tables, simulate, v_max):
    rng = block_rng(seed, tag, block)
    b = v_max
    if proposal == "uniform":
        v = -v_min + (b + v_min) * rng.random(n)
        weight = (b + v_min) * np.exp(-v)
    else:
        # density exp(-v) / Z on [-v_min, v_max]
        z = math.exp(v_min) - math.exp(-b)
        v = -np.log(math.exp(v_min) - z * rng.random(n))
        weight = np.full(n, z)
    c = pi.sample_size_biased(rng, n)
    a = c * rng.random(n)
    r = c - a
    ok = a >= v
    lvl1 = v + r
    lvl2 = v - a - np.log1p(-np.exp(-c))
    if simulate:
        b1 = residual_batch(pi, 0.0, n, rng, start=lvl1)
        b2 = residual_batch(pi, 0.0, n, rng, start=lvl2)
        vals = np.stack([phi(b1) * psi(b2) for phi, psi in fns])
    else:
        vals = np.stack([hp(-lvl1) * hq(-lvl2) for hp, hq in tables])
    return _block_sums(vals * (weight * ok))


def coupled_moments(pi: WaitingLaw, pairs: Sequence[tuple[Callable, Callable]], M: int, seed: int,
                    v_min: float | None = None, proposal: str = "uniform", simulate: bool = False,
                    workers: int = 1, v_max: float | None = None) -> tuple:
    """Coupled-lineage estimates of ``V`` for several pairs; returns ``(means, ses, M, v_min)``.

    The level runs over ``[-v_min, v_max]``, ``v_max`` defaulting to the
    support maximum ``b``; a smaller ``v_max`` estimates one slab of the
    level integral.
    """
    if proposal not in ("uniform", "exponential"):
        raise ValueError(f"unknown proposal {proposal!r}")
    t_max = (v_min if v_min is not None else 20.0) + 2.0 * pi.b
    tables = [(renewal_function(pi, phi, t_max, H_STEP), renewal_function(pi, psi, t_max, H_STEP))
              for phi, psi in pairs]
    if v_min is None:
        v_min = _default_vmin(pi, tables)
    v_max = pi.b if v_max is None else float(v_max)
    if not v_max > -v_min:
        raise ValueError("need v_max > -v_min")
    tasks = [(pi, n, seed, f"coupled:{proposal}:{v_min!r}:{v_max!r}", k, float(v_min), proposal,
              list(pairs), tables, simulate, v_max) for k, n in enumerate(block_sizes(M, COUPLED_BLOCK))]
    mean, se, n = _moments(run_blocks(_coupled_block, tasks, workers))
    return mean, se, n, float(v_min)


def estimate_V_coupled(pi: WaitingLaw, law: DislocationLaw, phi: Callable, psi: Callable, M: int,
                       seed: int, v_min: float | None = None, proposal: str = "uniform",
                       simulate: bool = False, workers: int = 1,
                       eta: StationaryLaw | None = None, v_max: float | None = None) -> PairFunctionalEstimate:
    """Estimate ``V(phi, psi)`` from the stationary coupled lineage.

    Parameters
    ----------
    v_min : float, optional
        The level integral runs over ``[-v_min, b]``. By default the
        smallest ``v_min`` at which a sup-bound on the integrand, built from
        the renewal functions, falls below 1e-8.
    v_max : float, optional
        Upper end of the level integral, ``b`` by default.
    proposal : {"uniform", "exponential"}
        Law of the sampled level: uniform on ``[-v_min, b]`` or with density
        proportional to ``exp(-v)``. The integrand decays much faster than
        ``exp(-v)`` grows, so the uniform proposal has far lower variance.
    simulate : bool
        Run both lineages forward to the freezing level instead of using
        the renewal functions ``H_phi``, ``H_psi``.
    """
    if law.family == "deterministic_binary" or pi.discrete:
        raise ValueError("the coupled estimator needs a continuous binary law")
    if eta is None:
        eta = stationary_eta(pi)
    check_centered([phi, psi], eta)
    mean, se, n, vm = coupled_moments(pi, [(phi, psi)], M, seed, v_min, proposal, simulate, workers, v_max)
    return PairFunctionalEstimate(float(mean[0]), float(se[0]), None, n, "coupled",
                                  {"v_min": vm, "proposal": proposal, "simulate": simulate})


def v_quadrature(pi: WaitingLaw, phi: Callable, psi: Callable, s_max: float = 12.0,
                 h: float = H_STEP) -> float:
    """Deterministic evaluation of ``V`` by integrating the coupled representation.

    Integrating the level out gives

        V = (1/mu) int pi(C) (1 - e^{-C}) int_0^inf e^{s} H_phi(s - C) H_psi(s + log(1 - e^{-C})) ds dC.
    """
    hp = renewal_function(pi, phi, s_max + 1.0, h)
    hq = renewal_function(pi, psi, s_max + 1.0, h)
    nodes, weights = np.polynomial.legendre.leggauss(80)
    cuts = [pi.a, *pi.breakpoints, pi.b]
    s = np.arange(0.0, s_max, h / 2)
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        cc = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        wc = 0.5 * (hi - lo) * weights * pi.density(cc) * (1.0 - np.exp(-cc))
        x2 = -np.log1p(-np.exp(-cc))
        inner = np.exp(s)[:, None] * hp(s[:, None] - cc[None, :]) * hq(s[:, None] - x2[None, :])
        total += float(np.trapezoid(inner @ wc, s))
    return total / pi.mu


# ---------------------------------------------------------------------------
# covariance
# ---------------------------------------------------------------------------


def eta_term(f, g, eta: StationaryLaw) -> float:
    """``eta(Phi(Id f g)) = int e^{-y} f(e^{-y}) g(e^{-y}) eta(y) dy``."""
    return eta.expect(lambda y: math.exp(-y) * float(f(math.exp(-y))) * float(g(math.exp(-y))))


def covariance_K(law: DislocationLaw, pi: WaitingLaw, eta: StationaryLaw, functions: Sequence,
                 method: str = "pairtag", epsilon: float | None = None, M: int = 10 ** 6,
                 seed: int = 42, workers: int = 1, v_min: float | None = None) -> CovarianceMatrix:
    """Assemble ``K(f_i, f_j) = eta(Phi(Id f_i f_j)) + V(Phi f_i, Phi f_j)``.

    ``functions`` are centered :class:`~fragstat.empirical.TestFunction` objects.
    ``method`` selects the V estimator: ``pairtag`` (the reference),
    ``pairtag_rb`` or the cross-check ``coupled``. The pair-tag methods
    need ``epsilon``.
    """
    from .empirical import gamma_infinity, phi_transform

    q = len(functions)
    for f in functions:
        m = gamma_infinity(f, eta)
        if abs(m) > CENTERING_TOL:
            raise ValueError(f"{f.id} is not centered: gamma_inf = {m:.3e}")
    ids = [f.id for f in functions]
    eta_m = np.array([[eta_term(functions[i], functions[j], eta) for j in range(q)] for i in range(q)])
    v = np.zeros((q, q))
    vse = np.zeros((q, q))
    live = [i for i in range(q) if not functions[i].is_zero]
    idx = [(i, j) for i in live for j in live]
    if idx:
        phis = [phi_transform(f) for f in functions]
        pairs = [(phis[i], phis[j]) for i, j in idx]
        if method == "coupled":
            mean, se, n, _ = coupled_moments(pi, pairs, M, seed, v_min, workers=workers)
        elif method in ("pairtag", "pairtag_rb"):
            if epsilon is None:
                raise ValueError("pair-tag estimators need epsilon")
            mean, se, n = pairtag_moments(law, pairs, epsilon, M, seed, workers,
                                          conditioned=method == "pairtag_rb", pi=pi)
        else:
            raise ValueError(f"unknown method {method!r}")
        for k, (i, j) in enumerate(idx):
            v[i, j] = mean[k]
            vse[i, j] = se[k]
    return CovarianceMatrix(ids, eta_m, v, vse, method, epsilon, M)


# ---------------------------------------------------------------------------
# higher tag moments
# ---------------------------------------------------------------------------


def _moment_block(law, q, T, n, seed, tag, block, fns):
    b = simulate_tag_batch(law, q, T, n, block_rng(seed, tag, block))
    vals = symmetrised_product(b.B_T, fns) * b.separated
    return _block_sums(vals[None, :])


def scaled_moment(law: DislocationLaw, functions: Sequence, epsilon: float, M: int, seed: int,
                  workers: int = 1) -> PairFunctionalEstimate:
    """``epsilon^{-q/2} E[F_sym(B_T^(1..q)); all separated]`` for ``q = len(functions)``.

    ``F_sym`` symmetrises ``f_1 x ... x f_q`` over the tag labels.
    """
    q = len(functions)
    T = -math.log(epsilon)
    tasks = [(law, q, T, n, seed, f"moment:q{q}:{epsilon!r}", k, list(functions))
             for k, n in enumerate(block_sizes(M, TAG_BLOCK))]
    mean, se, n = _moments(run_blocks(_moment_block, tasks, workers))
    scale = epsilon ** (-q / 2.0)
    return PairFunctionalEstimate(float(mean[0] * scale), float(se[0] * scale), float(epsilon), n,
                                  f"moment_q{q}")


def wick_prediction(functions: Sequence, vhat: dict) -> tuple[float, float]:
    """``sum over pairings of prod V(f_a, f_b)`` and a delta-method SE.

    ``vhat`` maps ``(a, b)`` (0-based function indices, ``a < b``) to
    ``(value, se)``; the SEs are combined as if independent.
    """
    q = len(functions)
    total = 0.0
    grad: dict = {}
    for pairing in pairings(q):
        keys = [tuple(sorted((a - 1, b - 1))) for a, b in pairing]
        prod = math.prod(vhat[k][0] for k in keys)
        total += prod
        for i, k in enumerate(keys):
            others = math.prod(vhat[kk][0] for j, kk in enumerate(keys) if j != i)
            grad[k] = grad.get(k, 0.0) + others
    se = math.sqrt(sum((grad[k] * vhat[k][1]) ** 2 for k in grad))
    return total, se


def _together_block(law, T, n, seed, tag, block):
    b = simulate_tag_batch(law, 2, T, n, block_rng(seed, tag, block))
    return _block_sums(b.together.astype(float)[None, :])


def frozen_together(law: DislocationLaw, epsilon: float, M: int, seed: int,
                    workers: int = 1) -> PairFunctionalEstimate:
    """Frequency with which two tags freeze on the same fragment."""
    T = -math.log(epsilon)
    tasks = [(law, T, n, seed, f"together:{epsilon!r}", k) for k, n in enumerate(block_sizes(M, TAG_BLOCK))]
    mean, se, n = _moments(run_blocks(_together_block, tasks, workers))
    return PairFunctionalEstimate(float(mean[0]), float(se[0]), float(epsilon), n, "together")


