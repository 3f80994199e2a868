"""Goodness-of-fit tests and small Monte Carlo summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats
from statsmodels.stats.diagnostic import normal_ad


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # keep pytest from collecting this class

    statistic: float
    p_value: float
    n: int
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n": self.n,
            "degenerate": self.degenerate,
        }


def _clean(samples, n_min: int) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if np.isnan(x).any():
        raise ValueError("samples contain NaN")
    if x.size < n_min:
        raise ValueError(f"need at least {n_min} samples, got {x.size}")
    return x


def ks_test(samples, cdf: Callable[[np.ndarray], np.ndarray]) -> TestResult:
    """One-sample Kolmogorov-Smirnov test with the asymptotic p-value.

    Parameters
    ----------
    samples : array_like
        At least 50 observations, in any order.
    cdf : callable
        Vectorised reference CDF.
    """
    x = _clean(samples, 50)
    res = stats.kstest(x, cdf, method="asymp")
    return TestResult(float(res.statistic), float(res.pvalue), int(x.size))


def ad_normality(samples) -> TestResult:
    """Anderson-Darling normality test with estimated mean and variance.

    Uses the small-sample modified statistic and the piecewise p-value
    approximation for the estimated-parameter case. A sample with zero
    variance is returned with ``degenerate=True`` and a NaN p-value.
    """
    x = _clean(samples, 100)
    if float(np.ptp(x)) == 0.0:
        return TestResult(math.nan, math.nan, int(x.size), degenerate=True)
    stat, p = normal_ad(x)
    return TestResult(float(stat), float(p), int(x.size))


def mean_se(values) -> tuple[float, float]:
    """Sample mean and its standard error."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 2:
        raise ValueError("need at least two values")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(n))


def zscore(diff: float, *ses: float) -> float:
    """``diff`` divided by the root-sum-square of the standard errors."""
    se = math.sqrt(sum(s * s for s in ses))
    if se == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return diff / se


def covariance_with_se(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample covariance matrix of the rows of ``z`` and per-entry SEs.

    The standard error of entry (i, j) is estimated from the fourth-moment
    products, ``sd((z_i - m_i)(z_j - m_j)) / sqrt(n)``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n = z.shape[0]
    d = z - z.mean(axis=0)
    cov = d.T @ d / (n - 1)
    q = z.shape[1]
    se = np.zeros((q, q))
    for i in range(q):
        for j in range(q):
            prod = d[:, i] * d[:, j]
            se[i, j] = prod.std(ddof=1) / math.sqrt(n)
    return cov, se
