"""Dislocation laws: how a single fragment splits.

All built-in families are binary. A fragment splits into two pieces with
ratios ``(s1, s2)``, ``s1 >= s2`` and ``s1 + s2 == 1``. The sibling ratio is
thus a deterministic function of the tagged one, which the pair functional
in :mod:`fragstat.limits` relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FAMILIES = ("binary_uniform", "binary_density", "deterministic_binary")


class PiecewiseLinearDensity:
    """Probability density on ``[x0, xn]`` given by linear interpolation of a table.

    The table is normalised on construction. CDF and inverse CDF are exact
    (the CDF is piecewise quadratic).
    """

    def __init__(self, xs: Sequence[float], hs: Sequence[float]):
        x = np.asarray(xs, dtype=float)
        h = np.asarray(hs, dtype=float)
        if x.ndim != 1 or x.size < 2 or x.shape != h.shape:
            raise ValueError("density table needs at least two (x, h) rows")
        if np.any(np.diff(x) <= 0):
            raise ValueError("density table abscissae must be strictly increasing")
        if np.any(h < 0) or not np.all(np.isfinite(h)):
            raise ValueError("density table values must be finite and non-negative")
        mass = float(np.sum(0.5 * (h[1:] + h[:-1]) * np.diff(x)))
        if mass <= 0:
            raise ValueError("density table has zero mass")
        self.x = x
        self.h = h / mass
        cells = 0.5 * (self.h[1:] + self.h[:-1]) * np.diff(x)
        self._cum = np.concatenate(([0.0], np.cumsum(cells)))
        self._cum[-1] = 1.0

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        out = np.interp(v, self.x, self.h)
        # a few ulps of slack so that 1 - (1 - c) still counts as c
        slack = 1e-12
        return np.where((v < self.x[0] - slack) | (v > self.x[-1] + slack), 0.0, out)

    def cdf(self, v):
        v = np.clip(np.asarray(v, dtype=float), self.x[0], self.x[-1])
        k = np.clip(np.searchsorted(self.x, v, side="right") - 1, 0, self.x.size - 2)
        dx = v - self.x[k]
        slope = (self.h[k + 1] - self.h[k]) / (self.x[k + 1] - self.x[k])
        return self._cum[k] + self.h[k] * dx + 0.5 * slope * dx * dx

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        k = np.clip(np.searchsorted(self._cum, u, side="right") - 1, 0, self.x.size - 2)
        rem = u - self._cum[k]
        h0 = self.h[k]
        slope = (self.h[k + 1] - self.h[k]) / (self.x[k + 1] - self.x[k])
        # solve h0*d + slope*d^2/2 = rem, choosing the stable root
        disc = np.sqrt(np.maximum(h0 * h0 + 2.0 * slope * rem, 0.0))
        denom = h0 + disc
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(denom > 0, 2.0 * rem / denom, 0.0)
        return np.clip(self.x[k] + d, self.x[0], self.x[-1])


@dataclass(frozen=True)
class RatioVector:
    """Outcome of one dislocation, ratios in descending order."""

    ratios: tuple

    def __post_init__(self):
        r = tuple(float(s) for s in self.ratios)
        if len(r) < 2:
            raise ValueError("a ratio vector needs at least two entries")
        if any(s <= 0.0 or s >= 1.0 for s in r):
            raise ValueError("ratios must lie in (0, 1)")
        if any(r[i] < r[i + 1] for i in range(len(r) - 1)):
            raise ValueError("ratios must be in descending order")
        object.__setattr__(self, "ratios", r)

    def __iter__(self):
        return iter(self.ratios)

    def __len__(self):
        return len(self.ratios)

    def __getitem__(self, i):
        return self.ratios[i]

    @property
    def total(self) -> float:
        return math.fsum(self.ratios)


@dataclass(frozen=True)
class DislocationLaw:
    """A binary dislocation law.

    Parameters
    ----------
    family : str
        One of ``binary_uniform`` (split point uniform on ``[c, 1-c]``),
        ``binary_density`` (split point with a tabulated density on
        ``[c, 1-c]``) or ``deterministic_binary`` (split point fixed at ``p``,
        a negative control).
    c : float
        Lower bound of the ratios.
    p : float, optional
        Split point of the deterministic family.
    table : tuple of (x, h) pairs, optional
        Density table of the split point for ``binary_density``.
    """

    family: str
    c: float
    p: float | None = None
    table: tuple | None = None
    _density: PiecewiseLinearDensity | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown dislocation family {self.family!r}; expected one of {FAMILIES}")
        top = 0.5 if self.family == "deterministic_binary" else 0.5 - 1e-15
        if not (0.0 <= self.c <= top):
            raise ValueError(f"c must lie in [0, 1/2), got {self.c}")
        if self.family == "binary_density":
            if self.table is None:
                raise ValueError("binary_density needs a density table")
            xs = [row[0] for row in self.table]
            hs = [row[1] for row in self.table]
            if abs(xs[0] - self.c) > 1e-12 or abs(xs[-1] - (1.0 - self.c)) > 1e-12:
                raise ValueError("density table must span exactly [c, 1-c]")
            object.__setattr__(self, "_density", PiecewiseLinearDensity(xs, hs))
        if self.family == "deterministic_binary":
            if self.p is None or not (0.0 < self.p < 1.0):
                raise ValueError("deterministic_binary needs p in (0, 1)")

    # -- metadata -----------------------------------------------------------
    @property
    def conservative(self) -> bool:
        return True

    @property
    def continuous_pi(self) -> bool:
        return self.family != "deterministic_binary"

    @property
    def support_log_ratio(self) -> tuple[float, float]:
        """``[a, b]`` with ``a = -log(1-c)`` and ``b = -log(c)``."""
        if self.family == "deterministic_binary":
            s1 = max(self.p, 1.0 - self.p)
            return (-math.log(s1), -math.log(1.0 - s1))
        b = math.inf if self.c == 0.0 else -math.log(self.c)
        return (-math.log1p(-self.c), b)

    @property
    def metadata(self) -> dict:
        a, b = self.support_log_ratio
        return {"conservative": self.conservative, "continuous_pi": self.continuous_pi,
                "support_log_ratio": [a, b]}

    @property
    def split_density(self) -> PiecewiseLinearDensity | None:
        return self._density

    def split_pdf(self, v):
        """Density of the split point ``V`` (the first child's ratio)."""
        v = np.asarray(v, dtype=float)
        if self.family == "binary_uniform":
            inside = (v >= self.c) & (v <= 1.0 - self.c)
            return np.where(inside, 1.0 / (1.0 - 2.0 * self.c), 0.0)
        if self.family == "binary_density":
            return self._density.pdf(v)
        raise ValueError("deterministic_binary has no split density")

    # -- sampling -----------------------------------------------------------
    def sample_split_points(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.family == "binary_uniform":
            return self.c + (1.0 - 2.0 * self.c) * rng.random(n)
        if self.family == "binary_density":
            return self._density.ppf(rng.random(n))
        return np.full(n, float(self.p))

    def sample_batch(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` independent ratio vectors as an ``(n, 2)`` array, rows descending.

        The second column is computed as ``1 - s1``. Because ``s1 >= 1/2``
        this subtraction is exact, so every row sums to 1 exactly.
        """
        v = self.sample_split_points(rng, n)
        s1 = np.maximum(v, 1.0 - v)
        return np.stack([s1, 1.0 - s1], axis=1)

    def to_config(self) -> dict:
        cfg = {"family": self.family, "c": self.c}
        if self.p is not None:
            cfg["p"] = self.p
        if self.table is not None:
            cfg["table"] = [list(row) for row in self.table]
        return cfg


def binary_uniform(c: float = 0.25) -> DislocationLaw:
    return DislocationLaw("binary_uniform", float(c))


def binary_density(c: float, table) -> DislocationLaw:
    rows = tuple((float(x), float(h)) for x, h in table)
    return DislocationLaw("binary_density", float(c), table=rows)


def deterministic_binary(p: float = 0.5) -> DislocationLaw:
    p = float(p)
    return DislocationLaw("deterministic_binary", min(p, 1.0 - p), p=p)


def law_from_config(cfg: dict) -> DislocationLaw:
    """Build a law from its JSON form, e.g. ``{"family": "binary_uniform", "c": 0.25}``."""
    if not isinstance(cfg, dict) or "family" not in cfg:
        raise ValueError("law config must be an object with a 'family' key")
    fam = cfg["family"]
    if fam == "binary_uniform":
        return binary_uniform(cfg.get("c", 0.25))
    if fam == "binary_density":
        return binary_density(cfg["c"], cfg["table"])
    if fam == "deterministic_binary":
        return deterministic_binary(cfg.get("p", 0.5))
    raise ValueError(f"unknown dislocation family {fam!r}")


def sample_ratios(law: DislocationLaw, rng: np.random.Generator) -> RatioVector:
    """Draw one ratio vector."""
    row = law.sample_batch(rng, 1)[0]
    return RatioVector((float(row[0]), float(row[1])))


def size_biased_pick(ratios, u: float) -> tuple[int, float]:
    """Pick a child with probability equal to its ratio.

    Child ``i`` (1-based) is chosen when ``u`` falls in
    ``[s1 + ... + s_{i-1}, s1 + ... + s_i)``.

    Returns
    -------
    (int, float)
        The child index and ``-log(s_i)``.
    """
    if not (0.0 <= u < 1.0):
        raise ValueError(f"u must lie in [0, 1), got {u}")
    acc = 0.0
    for i, s in enumerate(ratios, start=1):
        acc += s
        if u < acc:
            return i, -math.log(s)
    raise RuntimeError(f"internal error: u={u} not below the ratio total {acc}")


@dataclass
class ValidationReport:
    """Outcome of the four standing checks on a law."""

    assumption1: bool
    assumption2: bool
    assumption3: bool
    assumption4: bool
    messages: dict

    @property
    def ok(self) -> bool:
        return self.assumption1 and self.assumption2 and self.assumption3 and self.assumption4

    @property
    def failed(self) -> list[str]:
        names = ["assumption1", "assumption2", "assumption3", "assumption4"]
        return [n for n in names if not getattr(self, n)]

    def as_dict(self) -> dict:
        return {
            "assumption1": self.assumption1,
            "assumption2": self.assumption2,
            "assumption3": self.assumption3,
            "assumption4": self.assumption4,
            "ok": self.ok,
            "messages": dict(self.messages),
        }


def _density_support_is_interval(law: DislocationLaw) -> bool:
    # pi(x) > 0 iff h(s) + h(1-s) > 0 at s = exp(-x); check every breakpoint of
    # the symmetrised table, a zero run between two breakpoints breaks the interval
    d = law.split_density
    pts = np.unique(np.concatenate([d.x, 1.0 - d.x]))
    pts = pts[(pts >= 0.5 - 1e-15) & (pts <= 1.0 - law.c + 1e-15)]
    g = d.pdf(pts) + d.pdf(1.0 - pts)
    zero = g <= 0.0
    return not np.any(zero[1:] & zero[:-1])


def validate_law(law: DislocationLaw) -> ValidationReport:
    """Check the four standing assumptions on a dislocation law.

    1. ``nu`` is a probability and ``s1 < 1`` almost surely.
    2. Conservative: ratios sum to 1.
    3. The support of the waiting law is a compact interval ``[a, b]`` with
       ``0 < a < b``.
    4. The waiting law has a density, continuous on its support.
    """
    msg = {}
    a1 = True
    msg["assumption1"] = "binary split with s1 in (0, 1)"
    a2 = law.conservative
    msg["assumption2"] = "ratios sum to 1" if a2 else "not conservative"
    a, b = law.support_log_ratio
    if law.family == "deterministic_binary":
        a3 = False
        msg["assumption3"] = "waiting law is atomic, its support is not an interval"
        a4 = False
        msg["assumption4"] = "waiting law has atoms, no density"
    else:
        if law.c <= 0.0:
            a3 = False
            msg["assumption3"] = "c = 0 gives an unbounded support (b = inf)"
        elif not (0.0 < a < b < math.inf):
            a3 = False
            msg["assumption3"] = f"support [{a}, {b}] is not a proper compact interval in (0, inf)"
        elif law.family == "binary_density" and not _density_support_is_interval(law):
            a3 = False
            msg["assumption3"] = "split density vanishes on a sub-interval"
        else:
            a3 = True
            msg["assumption3"] = f"support [{a:.12g}, {b:.12g}]"
        a4 = True
        msg["assumption4"] = "density continuous on the support"
    return ValidationReport(a1, a2, a3, a4, msg)


def require_valid(law: DislocationLaw, allow_invalid: bool = False) -> ValidationReport:
    """Raise unless the law passes every assumption (or ``allow_invalid``)."""
    rep = validate_law(law)
    if not rep.ok and not allow_invalid:
        details = "; ".join(f"{k}: {rep.messages[k]}" for k in rep.failed)
        raise ValueError(f"law {law.to_config()} fails {', '.join(rep.failed)} ({details})")
    return rep
