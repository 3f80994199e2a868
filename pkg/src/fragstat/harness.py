"""Experiment runners and reports.

Every runner takes an :class:`ExperimentConfig`, draws all random numbers
from the block streams of :mod:`fragstat.streams` and returns an
:class:`ExperimentReport`. Reports echo the configuration and contain no
timing or worker information, so that they are byte-identical for a given
configuration whatever the degree of parallelism.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .dislocation import law_from_config, require_valid, validate_law
from .empirical import (
    forest_gammas,
    forest_pair_gammas,
    gamma_infinity,
    make_function,
    phi_transform,
)
from .fragtree import simulate_forest, simulate_tree
from .limits import (
    covariance_K,
    estimate_V_coupled,
    check_centered,
    k1,
    pairtag_moments,
    scaled_moment,
    wick_prediction,
)
from .outputs import write_csv, write_json
from .quadrature import quadrature
from .renewal import (
    derive_pi,
    eta_double_integral,
    log_gap_slope,
    rate_experiment,
    renewal_function,
    residuals,
    stationary_eta,
)
from .stattests import ad_normality, covariance_with_se, ks_test, mean_se, zscore
from .streams import DEFAULT_SEED, block_rng, block_sizes, run_blocks
from .taglines import simulate_tag_batch

TREE_BLOCK = 64
TAG_BLOCK = 1 << 16
SAMPLE_BLOCK = 1 << 16

DEFAULT_LAW = {"family": "binary_uniform", "c": 0.25}

COMMAND_DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate-tree": {"epsilon": 1e-3, "M": 10 ** 4},
    "simulate-tags": {"epsilon": 1e-3, "M": 10 ** 5, "q": 1},
    "renewal-check": {"M": 10 ** 5, "t": 50.0},
    "rate-check": {"M": 10 ** 7, "t_grid": [2.0, 4.0, 6.0, 8.0], "f": "centered:power:1",
                   "estimator": "renewal_reward", "theta_eff": 1.5, "slope_threshold": -1.0},
    "duality": {"epsilon": 1e-2, "M": 10 ** 4, "f": "power:1", "g": "power:2"},
    "lln": {"epsilon": [1e-2, 1e-3, 1e-4], "M": 200, "f": "power:1", "ratio_band": [0.5, 2.0]},
    "clt": {"epsilon": 1e-4, "M": 2000, "functions": ["centered:power:1"], "method": "pairtag_rb",
            "M_v": 10 ** 6},
    "estimate-v": {"epsilon": [1e-2, 2.5e-3, 6.25e-4], "M": 10 ** 6, "q": 2,
                   "f": "centered:power:1", "g": "centered:power:1", "method": "pairtag",
                   "wick": False},
    "covariance": {"epsilon": 1e-3, "M": 10 ** 6, "functions": ["centered:power:1", "centered:power:2"],
                   "method": "pairtag_rb"},
    "selftest": {},
}


# ---------------------------------------------------------------------------
# configuration and reports
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Resolved configuration of one experiment.

    Only result-determining settings live here; worker count and output
    locations are execution details passed separately.
    """

    command: str
    law: dict = field(default_factory=lambda: dict(DEFAULT_LAW))
    seed: int = DEFAULT_SEED
    epsilon: Any = None
    M: int | None = None
    q: int | None = None
    T: float | None = None
    t: float | None = None
    t_grid: list | None = None
    f: str | None = None
    g: str | None = None
    functions: list | None = None
    estimator: str | None = None
    method: str | None = None
    M_v: int | None = None
    wick: bool | None = None
    theta_eff: float | None = None
    slope_threshold: float | None = None
    ratio_band: list | None = None
    store_paths: bool = False
    allow_invalid: bool = False
    significance: float = 0.01
    sigmas: float = 3.0

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "command" not in d:
            raise ValueError("config needs a 'command'")
        if d["command"] not in COMMAND_DEFAULTS:
            raise ValueError(f"unknown command {d['command']!r}")
        merged = {**COMMAND_DEFAULTS[d["command"]], **{k: v for k, v in d.items() if v is not None}}
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @property
    def eps_list(self) -> list[float]:
        e = self.epsilon
        return [float(x) for x in (e if isinstance(e, (list, tuple)) else [e])]

    def validate(self):
        law_from_config(self.law)
        if self.epsilon is not None:
            for e in self.eps_list:
                if not (0.0 < e < 1.0):
                    raise ValueError(f"epsilon must lie in (0, 1), got {e}")
        if self.M is not None:
            floor = 1 if self.command in ("simulate-tree", "simulate-tags") else 100
            if int(self.M) < floor:
                raise ValueError(f"M must be at least {floor}, got {self.M}")
            self.M = int(self.M)
        if self.significance not in (0.01, 0.05):
            raise ValueError("significance must be 0.01 or 0.05")
        if self.seed is None or int(self.seed) < 0:
            raise ValueError("seed must be a non-negative integer")
        self.seed = int(self.seed)
        if self.command == "clt" and self.M is not None and self.M < 1000:
            raise ValueError("the CLT experiment needs M >= 1000")


@dataclass
class Check:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    command: str
    config: dict
    results: dict
    checks: list
    version: str = __version__

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "version": self.version,
            "config": self.config,
            "passed": self.passed,
            "checks": [{"name": c.name, "passed": bool(c.passed), **c.detail} for c in self.checks],
            "results": self.results,
        }

    def summary(self) -> str:
        failed = [c.name for c in self.checks if not c.passed]
        status = "PASS" if self.passed else "FAIL"
        tail = f" failed: {', '.join(failed)}" if failed else ""
        return f"{self.command}: {status} ({len(self.checks)} checks){tail}"

    def write(self, out_dir):
        write_json(Path(out_dir) / f"{self.command}.json", self.as_dict())


def _setup(cfg: ExperimentConfig):
    law = law_from_config(cfg.law)
    require_valid(law, cfg.allow_invalid)
    return law


def _continuous(cfg: ExperimentConfig):
    law = _setup(cfg)
    pi = derive_pi(law, cfg.allow_invalid)
    eta = stationary_eta(pi)
    return law, pi, eta


def _z_check(name, diff, ses, sigmas, **extra) -> Check:
    z = zscore(diff, *ses)
    return Check(name, bool(abs(z) < sigmas), {"z": z, "threshold": sigmas, **extra})


# ---------------------------------------------------------------------------
# simulate-tree
# ---------------------------------------------------------------------------


def _tree_block(law, eps, n, seed, block, keep):
    forest = simulate_forest(law, eps, n, block_rng(seed, "tree", block))
    mass = forest.segment_fsum(forest.sizes)
    counts = np.diff(forest.offsets)
    mins = np.minimum.reduceat(forest.sizes, forest.offsets[:-1])
    maxs = np.maximum.reduceat(forest.sizes, forest.offsets[:-1])
    return counts, mass, mins, maxs, (forest.sizes if keep else None)


def run_simulate_tree(cfg: ExperimentConfig, workers: int = 1, out_dir=None,
                      fragments_path=None) -> ExperimentReport:
    law = _setup(cfg)
    eps = cfg.eps_list[0]
    keep = fragments_path is not None
    rows_out = []
    if cfg.store_paths:
        # depth-first engine, one stream per replicate, paths recorded
        counts, mass, mins, maxs = [], [], [], []
        for rep in range(cfg.M):
            o = simulate_tree(law, eps, block_rng(cfg.seed, "tree-dfs", rep), store_paths=True,
                              allow_invalid=cfg.allow_invalid)
            counts.append(len(o))
            mass.append(math.fsum(o.sizes.tolist()))
            mins.append(o.sizes.min())
            maxs.append(o.sizes.max())
            if keep:
                rows_out.extend((rep, float(s), "/".join(map(str, p))) for s, p in zip(o.sizes, o.paths))
        counts, mass, mins, maxs = map(np.asarray, (counts, mass, mins, maxs))
    else:
        tasks = [(law, eps, n, cfg.seed, k, keep) for k, n in enumerate(block_sizes(cfg.M, TREE_BLOCK))]
        parts = run_blocks(_tree_block, tasks, workers)
        counts = np.concatenate([p[0] for p in parts])
        mass = np.concatenate([p[1] for p in parts])
        mins = np.concatenate([p[2] for p in parts])
        maxs = np.concatenate([p[3] for p in parts])
        if keep:
            rep = 0
            for p in parts:
                sizes = p[4]
                off = np.concatenate([[0], np.cumsum(p[0])])
                for i in range(p[0].size):
                    rows_out.extend((rep, float(s)) for s in sizes[off[i]:off[i + 1]])
                    rep += 1
    if keep:
        header = ["replicate", "size", "path"] if cfg.store_paths else ["replicate", "size"]
        write_csv(fragments_path, header, rows_out)
    c = law.c
    dev = float(np.max(np.abs(mass - 1.0)))
    lo = float(mins.min() / eps)
    hi = float(maxs.max() / eps)
    cnt_mean, cnt_se = mean_se(counts) if counts.size > 1 else (float(counts[0]), 0.0)
    bound = math.ceil(1.0 / (eps * c)) if c > 0 else None
    results = {
        "n_trees": int(counts.size), "total_fragments": int(counts.sum()),
        "mean_count": cnt_mean, "count_se": cnt_se, "max_count": int(counts.max()),
        "count_bound": bound, "max_mass_deviation": dev,
        "min_size_over_eps": lo, "max_size_over_eps": hi,
    }
    checks = [
        Check("conservation", dev <= 1e-12, {"max_mass_deviation": dev, "tolerance": 1e-12}),
        Check("size_window", bool(lo >= c and hi < 1.0), {"min_size_over_eps": lo,
                                                          "max_size_over_eps": hi, "c": c}),
    ]
    if bound is not None:
        checks.append(Check("count_bound", int(counts.max()) <= bound, {"bound": bound}))
    return ExperimentReport(cfg.command, cfg.to_dict(), results, checks)


# ---------------------------------------------------------------------------
# simulate-tags
# ---------------------------------------------------------------------------


def _tags_block(law, q, T, n, seed, block):
    b = simulate_tag_batch(law, q, T, n, block_rng(seed, "tags", block))
    return b.B_T, b.separated, b.n_epochs, b.first_increment, b.rep


def run_simulate_tags(cfg: ExperimentConfig, workers: int = 1, out_dir=None,
                      tags_path=None) -> ExperimentReport:
    law = _setup(cfg)
    q = int(cfg.q or 1)
    if cfg.T is not None:
        T = float(cfg.T)
        eps = math.exp(-T)
    else:
        eps = cfg.eps_list[0]
        T = -math.log(eps)
    tasks = [(law, q, T, n, cfg.seed, k) for k, n in enumerate(block_sizes(cfg.M, TAG_BLOCK))]
    parts = run_blocks(_tags_block, tasks, workers)
    B = np.concatenate([p[0] for p in parts])
    sep = np.concatenate([p[1] for p in parts])
    nep = np.concatenate([p[2] for p in parts])
    first = np.concatenate([p[3] for p in parts])
    rep = np.concatenate([p[4] for p in parts])
    if tags_path is not None:
        rows = ((m, i + 1, float(B[m, i]), bool(sep[m]), int(nep[m, i]))
                for m in range(B.shape[0]) for i in range(q))
        write_csv(tags_path, ["replicate", "tag", "B_T", "separated", "n_epochs"], rows)
    a, b = law.support_log_ratio
    results = {"q": q, "T": T, "epsilon": eps, "M": int(B.shape[0]),
               "mean_B_T": B.mean(axis=0).tolist(), "separated_fraction": float(sep.mean()),
               "mean_epochs": nep.mean(axis=0).tolist()}
    checks = [Check("residual_range", bool(B.min() > 0 and B.max() <= b + 1e-12),
                    {"min": float(B.min()), "max": float(B.max()), "b": b})]
    if law.continuous_pi and validate_law(law).ok:
        pi = derive_pi(law)
        eta = stationary_eta(pi)
        inc = first[:, 0]
        ks = ks_test(inc, pi.cdf)
        results["increment_ks"] = ks.as_dict()
        checks.append(Check("increments_vs_pi", ks.p_value > cfg.significance,
                            {"p_value": ks.p_value, "n": ks.n}))
        ksb = ks_test(B[:, 0], eta.cdf)
        results["residual_ks"] = ksb.as_dict()
    if q >= 2:
        together = rep[:, 1] == rep[:, 0]
        p_hat, p_se = mean_se(together.astype(float))
        bound = k1(2) * eps
        results["frozen_together"] = {"frequency": p_hat, "se": p_se, "bound": bound}
        checks.append(Check("frozen_together_bound", bool(p_hat <= bound + cfg.sigmas * p_se),
                            {"frequency": p_hat, "se": p_se, "bound": bound}))
        d = B[:, 0] - B[:, 1]
        dm, dse = mean_se(d)
        results["exchangeability"] = {"mean_difference": dm, "se": dse}
    return ExperimentReport(cfg.command, cfg.to_dict(), results, checks)


# ---------------------------------------------------------------------------
# renewal-check
# ---------------------------------------------------------------------------


def _eta_block(eta, n, seed, tag, block):
    return eta.sample(block_rng(seed, tag, block), n)


def _pi_block(pi, n, seed, tag, block):
    return pi.sample(block_rng(seed, tag, block), n)


def run_renewal_check(cfg: ExperimentConfig, workers: int = 1, out_dir=None) -> ExperimentReport:
    law, pi, eta = _continuous(cfg)
    t = float(cfg.t)
    M = cfg.M
    sizes = block_sizes(M, SAMPLE_BLOCK)
    bt = residuals(pi, t, M, cfg.seed, workers=workers)
    es = np.concatenate(run_blocks(_eta_block, [(eta, n, cfg.seed, "eta-sampler", k)
                                                for k, n in enumerate(sizes)], workers))
    ps = np.concatenate(run_blocks(_pi_block, [(pi, n, cfg.seed, "pi-sampler", k)
                                               for k, n in enumerate(sizes)], workers))
    ks_bt = ks_test(bt, eta.cdf)
    ks_eta = ks_test(es, eta.cdf)
    ks_pi = ks_test(ps, pi.cdf)
    norm_pi = quadrature(lambda x: float(pi.density(x)), pi.a, pi.b, 1e-10, pi.breakpoints)
    norm_eta = eta.expect(lambda y: 1.0)
    m1 = eta.expect(lambda y: y)
    m1_double = eta_double_integral(pi, lambda y: y)
    results = {"a": pi.a, "b": pi.b, "mu": pi.mu, "t": t, "M": M,
               "residual_ks": ks_bt.as_dict(), "eta_sampler_ks": ks_eta.as_dict(),
               "pi_sampler_ks": ks_pi.as_dict(), "pi_mass": norm_pi, "eta_mass": norm_eta,
               "eta_mean": m1, "eta_mean_double_integral": m1_double}
    sig = cfg.significance
    checks = [
        Check("residual_vs_eta", ks_bt.p_value > sig, {"p_value": ks_bt.p_value}),
        Check("eta_sampler_vs_density", ks_eta.p_value > sig, {"p_value": ks_eta.p_value}),
        Check("pi_sampler_vs_density", ks_pi.p_value > sig, {"p_value": ks_pi.p_value}),
        Check("pi_normalised", abs(norm_pi - 1.0) < 1e-9, {"mass": norm_pi}),
        Check("eta_normalised", abs(norm_eta - 1.0) < 1e-9, {"mass": norm_eta}),
        Check("eta_double_integral", abs(m1 - m1_double) < 1e-8, {"difference": m1 - m1_double}),
    ]
    return ExperimentReport(cfg.command, cfg.to_dict(), results, checks)


# ---------------------------------------------------------------------------
# rate-check
# ---------------------------------------------------------------------------


def run_rate_check(cfg: ExperimentConfig, workers: int = 1, out_dir=None) -> ExperimentReport:
    law, pi, eta = _continuous(cfg)
    f = make_function(cfg.f, eta)
    phi = phi_transform(f)
    eta_f = gamma_infinity(f, eta)
    rows = rate_experiment(pi, phi, cfg.t_grid, cfg.M, cfg.seed, eta_f=eta_f,
                           estimator=cfg.estimator, workers=workers)
    H = renewal_function(pi, phi, max(cfg.t_grid) + 1.0)
    slope = log_gap_slope(rows, cfg.sigmas)
    if out_dir is not None:
        write_csv(Path(out_dir) / "rate.csv", ["t", "gap", "se"],
                  [(r.t, r.gap, r.se) for r in rows])
    results = {
        "function": f.id, "eta_f": eta_f, "estimator": cfg.estimator, "M": cfg.M,
        "theta_eff": cfg.theta_eff,
        "rows": [{"t": r.t, "estimate": r.estimate, "gap": r.gap, "se": r.se,
                  "gap_over_se": (r.gap / r.se if r.se > 0 else None),
                  "renewal_equation_gap": abs(float(H(np.array(r.t))) - eta_f)} for r in rows],
        "slope": slope,
    }
    ref = results["rows"]
    if len(ref) >= 2 and ref[0]["renewal_equation_gap"] > 0 and ref[1]["renewal_equation_gap"] > 0:
        # deterministic reference from the renewal-equation solver, informational only
        results["renewal_equation_slope_first_two"] = (
            (math.log(ref[1]["renewal_equation_gap"]) - math.log(ref[0]["renewal_equation_gap"]))
            / (ref[1]["t"] - ref[0]["t"]))
    checks = []
    if f.is_zero or (not f.terms):
        # constants are integrated exactly: the gap must vanish within noise
        checks.append(Check("constant_zero_gap", all(r.gap <= cfg.sigmas * r.se + 1e-12 for r in rows)))
    else:
        ok_dec = bool(slope["decreasing"]) if slope["decreasing"] is not None else False
        checks.append(Check("gap_decreasing_before_noise", ok_dec, {"n_pre_noise": slope["n_pre_noise"]}))
        s = slope["slope"]
        checks.append(Check("slope_at_most_threshold", s is not None and s <= cfg.slope_threshold,
                            {"slope": s, "kind": slope["kind"], "threshold": cfg.slope_threshold}))
    return ExperimentReport(cfg.command, cfg.to_dict(), results, checks)


# ---------------------------------------------------------------------------
# duality
# ---------------------------------------------------------------------------


def _duality_tree_block(law, eps, n, seed, block, f, g):
    forest = simulate_forest(law, eps, n, block_rng(seed, "duality-tree", block))
    single = forest_gammas(forest, [f])[:, 0]
    pair = forest_pair_gammas(forest, f, g)
    return single, pair


def _duality_tag_block(law, q, T, n, seed, block, f, g):
    b = simulate_tag_batch(law, q, T, n, block_rng(seed, f"duality-tags-q{q}", block))
    pf, pg = phi_transform(f), phi_transform(g)
    if q == 1:
        return pf(b.B_T[:, 0])
    return pf(b.B_T[:, 0]) * pg(b.B_T[:, 1]) * b.separated


def run_duality(cfg: ExperimentConfig, workers: int = 1, out_dir=None) -> ExperimentReport:
    law, pi, eta = _continuous(cfg)
    eps = cfg.eps_list[0]
    T = -math.log(eps)
    f = make_function(cfg.f, eta)
    g = make_function(cfg.g, eta)
    tasks = [(law, eps, n, cfg.seed, k, f, g) for k, n in enumerate(block_sizes(cfg.M, TREE_BLOCK))]
    parts = run_blocks(_duality_tree_block, tasks, workers)
    single = np.concatenate([p[0] for p in parts])
    pair = np.concatenate([p[1] for p in parts])
    t1 = np.concatenate(run_blocks(_duality_tag_block, [(law, 1, T, n, cfg.seed, k, f, g) for k, n in
                                                        enumerate(block_sizes(cfg.M, TAG_BLOCK))], workers))
    t2 = np.concatenate(run_blocks(_duality_tag_block, [(law, 2, T, n, cfg.seed, k, f, g) for k, n in
                                                        enumerate(block_sizes(cfg.M, TAG_BLOCK))], workers))
    m_tree, se_tree = mean_se(single)
    m_tag, se_tag = mean_se(t1)
    m_pair, se_pair = mean_se(pair)
    m_tag2, se_tag2 = mean_se(t2)
    results = {
        "epsilon": eps, "M": cfg.M, "f": f.id, "g": g.id,
        "gamma": {"trees": m_tree, "trees_se": se_tree, "tags": m_tag, "tags_se": se_tag},
        "gamma_odot2": {"trees": m_pair, "trees_se": se_pair, "tags": m_tag2, "tags_se": se_tag2},
    }
    checks = [
        _z_check("duality_q1", m_tree - m_tag, (se_tree, se_tag), cfg.sigmas),
        _z_check("duality_q2_injective", m_pair - m_tag2, (se_pair, se_tag2), cfg.sigmas),
    ]
    return ExperimentReport(cfg.command, cfg.to_dict(), results, checks)


# ---------------------------------------------------------------------------
# lln
# ---------------------------------------------------------------------------


def _gamma_block(law, eps, n, seed, tag, block, fns):
    forest = simulate_forest(law, eps, n, block_rng(seed, tag, block))
    return forest_gammas(forest, fns)


def forest_gamma_samples(law, eps: float, M: int, seed: int, fns, tag: str, workers: int = 1) -> np.ndarray:
    """``gamma_T(f)`` for ``M`` trees and each function, shape ``(M, len(fns))``."""
    tasks = [(law, eps, n, seed, f"{tag}:{eps!r}", k, list(fns))
             for k, n in enumerate(block_sizes(M, TREE_BLOCK))]
    return np.concatenate(run_blocks(_gamma_block, tasks, workers), axis=0)


def run_lln(cfg: ExperimentConfig, workers: int = 1, out_dir=None) -> ExperimentReport:
    law, pi, eta = _continuous(cfg)
    f = make_function(cfg.f, eta)
    ginf = gamma_infinity(f, eta)
    ladder = cfg.eps_list
    rungs = []
    samples = []
    for eps in ladder:
        vals = forest_gamma_samples(law, eps, cfg.M, cfg.seed, [f], "lln", workers)[:, 0]
        err = vals - ginf
        rmse = math.sqrt(float(np.mean(err * err)))
        rungs.append({"epsilon": eps, "rmse": rmse, "mean_error": float(err.mean()),
                      "rmse_over_sqrt_eps": rmse / math.sqrt(eps)})
        samples.extend((m, f"{f.id}@{eps!r}", float(v)) for m, v in enumerate(vals))
    if out_dir is not None:
        write_csv(Path(out_dir) / "lln_samples.csv", ["replicate", "function_id", "value"], samples)
    r = [x["rmse"] for x in rungs]
    ratios = [r[i] / r[i + 1] if r[i + 1] > 0 else None for i in range(len(r) - 1)]
    results = {"function": f.id, "gamma_inf": ginf, "rungs": rungs, "consecutive_ratios": ratios}
    checks = []
    if f.terms:
        checks.append(Check("rmse_decreasing", all(r[i] > r[i + 1] for i in range(len(r) - 1)),
                            {"rmse": r}))
        if len(r) >= 2 and r[-1] > 0:
            # band relative to the nominal sqrt(eps) scaling; [5, 20] for 1e-2 .. 1e-4
            overall = r[0] / r[-1]
            nominal = math.sqrt(ladder[0] / ladder[-1])
            lo, hi = (x * nominal for x in cfg.ratio_band)
            checks.append(Check("rmse_ratio_band", lo <= overall <= hi,
                                {"ratio": overall, "nominal": nominal, "band": [lo, hi]}))
    else:
        checks.append(Check("constant_rmse_zero", max(r) < 1e-12, {"rmse": r}))
    return ExperimentReport(cfg.command, cfg.to_dict(), results, checks)


# ---------------------------------------------------------------------------
# clt
# ---------------------------------------------------------------------------


def run_clt(cfg: ExperimentConfig, workers: int = 1, out_dir=None) -> ExperimentReport:
    law, pi, eta = _continuous(cfg)
    eps = cfg.eps_list[0]
    fns = [make_function(name, eta) for name in cfg.functions]
    ginf = np.array([gamma_infinity(f, eta) for f in fns])
    vals = forest_gamma_samples(law, eps, cfg.M, cfg.seed, fns, "clt", workers)
    Z = (vals - ginf) / math.sqrt(eps)
    if out_dir is not None:
        rows = ((m, fns[j].id, float(Z[m, j])) for m in range(Z.shape[0]) for j in range(len(fns)))
        write_csv(Path(out_dir) / "clt_samples.csv", ["replicate", "function_id", "value"], rows)
    q = len(fns)
    checks = []
    live = [j for j in range(q) if not fns[j].is_zero and np.ptp(Z[:, j]) > 0]
    K = covariance_K(law, pi, eta, fns, method=cfg.method, epsilon=eps, M=cfg.M_v,
                     seed=cfg.seed, workers=workers)
    cov, cov_se = covariance_with_se(Z)
    normality = []
    for j in range(q):
        if j not in live:
            normality.append({"function": fns[j].id, "degenerate": True})
            continue
        ad = ad_normality(Z[:, j])
        normality.append({"function": fns[j].id, **ad.as_dict()})
        checks.append(Check(f"normality[{fns[j].id}]", ad.p_value > cfg.significance,
                            {"statistic": ad.statistic, "p_value": ad.p_value}))
    entries = []
    for i in range(q):
        for j in range(q):
            if i not in live or j not in live:
                continue
            diff = cov[i, j] - K.entries[i, j]
            z = zscore(diff, cov_se[i, j], K.se[i, j])
            entries.append({"i": i, "j": j, "sample": cov[i, j], "sample_se": cov_se[i, j],
                            "K": K.entries[i, j], "K_se": K.se[i, j], "z": z})
            checks.append(Check(f"covariance[{i},{j}]", bool(abs(z) < cfg.sigmas),
                                {"z": z, "threshold": cfg.sigmas}))
    results = {
        "epsilon": eps, "M": cfg.M, "functions": [f.id for f in fns], "gamma_inf": ginf.tolist(),
        "mean_Z": Z.mean(axis=0).tolist(), "normality": normality, "covariance": entries,
        "K": K.as_dict(),
        "degenerate": [fns[j].id for j in range(q) if j not in live],
    }
    return ExperimentReport(cfg.command, cfg.to_dict(), results, checks)


# ---------------------------------------------------------------------------
# estimate-v
# ---------------------------------------------------------------------------


def run_estimate_v(cfg: ExperimentConfig, workers: int = 1, out_dir=None) -> ExperimentReport:
    law, pi, eta = _continuous(cfg)
    f = make_function(cfg.f, eta)
    g = make_function(cfg.g, eta)
    pf, pg = phi_transform(f), phi_transform(g)
    q = int(cfg.q or 2)
    ladder = cfg.eps_list
    checks = []
    results: dict = {"q": q, "f": f.id, "g": g.id, "method": cfg.method, "M": cfg.M}
    csv_rows = []
    if q == 2 and cfg.method == "coupled":
        est = estimate_V_coupled(pi, law, pf, pg, cfg.M, cfg.seed, workers=workers, eta=eta)
        vm = est.extras["v_min"]
        # doubling v_min adds the slab [-2 v_min, -v_min]; estimate it on its own
        tail = estimate_V_coupled(pi, law, pf, pg, cfg.M, cfg.seed, v_min=2 * vm, v_max=-vm,
                                  workers=workers, eta=eta)
        csv_rows.append(("coupled", None, cfg.M, est.value, est.se))
        results["estimate"] = est.as_dict()
        results["doubled_v_min"] = {"value": est.value + tail.value, "se": math.hypot(est.se, tail.se),
                                    "change": tail.value, "change_se": tail.se, "v_min": 2 * vm}
        ok = abs(tail.value) < est.se
        checks.append(Check("truncation", ok, {"change": tail.value, "change_se": tail.se, "se": est.se,
                                               "rule": "|change from doubling v_min| < 1 SE"}))
    elif q == 2:
        conditioned = cfg.method == "pairtag_rb"
        if cfg.method not in ("pairtag", "pairtag_rb"):
            raise ValueError(f"unknown method {cfg.method!r}")
        check_centered([pf, pg], eta, [f.id, g.id])
        rungs = []
        for eps in ladder:
            mean, se, n = pairtag_moments(law, [(pf, pg), (pg, pf)], eps, cfg.M, cfg.seed, workers,
                                          conditioned, pi)
            rungs.append({"epsilon": eps, "value": float(mean[0]), "se": float(se[0]),
                          "swapped_value": float(mean[1]), "swapped_se": float(se[1])})
            csv_rows.append((cfg.method, eps, n, float(mean[0]), float(se[0])))
        results["ladder"] = rungs
        if len(rungs) >= 2:
            diffs = [abs(rungs[i + 1]["value"] - rungs[i]["value"]) for i in range(len(rungs) - 1)]
            results["successive_differences"] = diffs
            last, prev = rungs[-1], rungs[-2]
            checks.append(_z_check("last_rungs_agree", last["value"] - prev["value"],
                                   (last["se"], prev["se"]), cfg.sigmas))
        if cfg.wick:
            eps = ladder[-1]
            fns = [pf, pf, pf, pf] if cfg.functions is None else [
                phi_transform(make_function(n, eta)) for n in cfg.functions]
            m4 = scaled_moment(law, fns, eps, cfg.M, cfg.seed, workers)
            idx = [(a, b) for a in range(4) for b in range(a + 1, 4)]
            mean, se, _ = pairtag_moments(law, [(fns[a], fns[b]) for a, b in idx], eps, cfg.M,
                                          cfg.seed, workers, conditioned, pi)
            vhat = {k: (float(mean[n]), float(se[n])) for n, k in enumerate(idx)}
            pred, pred_se = wick_prediction(fns, vhat)
            results["wick"] = {"epsilon": eps, "moment": m4.value, "moment_se": m4.se,
                               "pairing_sum": pred, "pairing_sum_se": pred_se}
            csv_rows.append(("moment_q4", eps, m4.M, m4.value, m4.se))
            checks.append(_z_check("wick_q4", m4.value - pred, (m4.se, pred_se), cfg.sigmas))
    else:
        fns = [pf] * q if cfg.functions is None else [phi_transform(make_function(n, eta))
                                                      for n in cfg.functions]
        moments = []
        for eps in ladder:
            m = scaled_moment(law, fns, eps, cfg.M, cfg.seed, workers)
            z = zscore(m.value, m.se)
            moments.append({"epsilon": eps, "value": m.value, "se": m.se, "z": z})
            csv_rows.append((f"moment_q{q}", eps, m.M, m.value, m.se))
            if q % 2:
                checks.append(Check(f"odd_q_vanishes@{eps!r}", bool(abs(z) < cfg.sigmas),
                                    {"z": z, "threshold": cfg.sigmas}))
        results["moments"] = moments
    if out_dir is not None:
        write_csv(Path(out_dir) / "v.csv", ["method", "eps", "M", "value", "se"], csv_rows)
    return ExperimentReport(cfg.command, cfg.to_dict(), results, checks)


# ---------------------------------------------------------------------------
# covariance
# ---------------------------------------------------------------------------


def run_covariance(cfg: ExperimentConfig, workers: int = 1, out_dir=None) -> ExperimentReport:
    law, pi, eta = _continuous(cfg)
    fns = [make_function(name, eta) for name in cfg.functions]
    eps = cfg.eps_list[0] if cfg.epsilon is not None else None
    K = covariance_K(law, pi, eta, fns, method=cfg.method, epsilon=eps, M=cfg.M, seed=cfg.seed,
                     workers=workers)
    q = len(fns)
    checks = []
    for i in range(q):
        if K.se[i, i] > 0 or K.entries[i, i] != 0:
            checks.append(Check(f"diagonal_nonnegative[{i}]",
                                bool(K.entries[i, i] >= -cfg.sigmas * K.se[i, i])))
        for j in range(i + 1, q):
            checks.append(_z_check(f"symmetric[{i},{j}]", K.entries[i, j] - K.entries[j, i],
                                   (K.se[i, j], K.se[j, i]), cfg.sigmas))
    if out_dir is not None:
        write_csv(Path(out_dir) / "covariance.csv", ["i", "j", "eta_term", "v_term", "K", "se"],
                  [(i, j, float(K.eta_term[i, j]), float(K.v_term[i, j]), float(K.entries[i, j]),
                    float(K.se[i, j])) for i in range(q) for j in range(q)])
    return ExperimentReport(cfg.command, cfg.to_dict(), {"K": K.as_dict()}, checks)


# ---------------------------------------------------------------------------
# selftest: the small exact examples
# ---------------------------------------------------------------------------


def run_selftest(cfg: ExperimentConfig, workers: int = 1, out_dir=None) -> ExperimentReport:
    from .selftest import trivial_checks

    checks = [Check(name, bool(ok)) for name, ok in trivial_checks()]
    return ExperimentReport(cfg.command, cfg.to_dict(), {"n_checks": len(checks)}, checks)


RUNNERS = {
    "simulate-tree": run_simulate_tree,
    "simulate-tags": run_simulate_tags,
    "renewal-check": run_renewal_check,
    "rate-check": run_rate_check,
    "duality": run_duality,
    "lln": run_lln,
    "clt": run_clt,
    "estimate-v": run_estimate_v,
    "covariance": run_covariance,
    "selftest": run_selftest,
}
