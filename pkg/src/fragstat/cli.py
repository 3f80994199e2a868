"""Command-line entry point.

Settings are resolved per key as: command-line flag, then the JSON config
file, then the subcommand default. The seed additionally falls back to the
``FRAGSTAT_SEED`` environment variable before the default 42.

Exit codes: 0 when every check passes, 2 on a statistical failure, 1 on a
usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .harness import COMMAND_DEFAULTS, RUNNERS, ExperimentConfig
from .streams import resolve_seed

SUBCOMMANDS = tuple(COMMAND_DEFAULTS)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _law(text: str) -> dict:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"--law expects a JSON object: {exc}") from exc
    if not isinstance(d, dict):
        raise argparse.ArgumentTypeError("--law expects a JSON object")
    return d


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fragstat", description="Monte Carlo experiments on conservative fragmentation chains.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="JSON config file")
        s.add_argument("--seed", type=int)
        s.add_argument("--out-dir", type=Path, help="directory for CSV/JSON artifacts")
        s.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
        if name == "selftest":
            continue
        s.add_argument("--law", type=_law, help='e.g. \'{"family":"binary_uniform","c":0.25}\'')
        s.add_argument("--allow-invalid", action="store_true", default=None,
                       help="run laws that fail the assumptions")
        s.add_argument("--significance", type=float)
        s.add_argument("--sigmas", type=float, help="z-score threshold of the agreement checks")
        s.add_argument("-M", "--M", dest="M", type=int, help="number of replicates")
        if name not in ("renewal-check", "rate-check"):
            s.add_argument("--epsilon", type=_floats, help="threshold, or a comma-separated ladder")
        if name in ("simulate-tags", "estimate-v"):
            s.add_argument("--q", type=int)
        if name == "simulate-tags":
            s.add_argument("--T", type=float, help="freezing level, overrides --epsilon")
            s.add_argument("--tags-out", type=Path, help="per-tag CSV, relative to --out-dir")
        if name == "simulate-tree":
            s.add_argument("--store-paths", action="store_true", default=None)
            s.add_argument("--fragments-out", type=Path, help="per-fragment CSV, relative to --out-dir")
        if name == "renewal-check":
            s.add_argument("--t", type=float)
        if name == "rate-check":
            s.add_argument("--t-grid", "--tgrid", dest="t_grid", type=_floats)
            s.add_argument("--estimator", choices=("crude", "renewal_reward"))
            s.add_argument("--theta-eff", type=float)
            s.add_argument("--slope-threshold", type=float)
        if name in ("rate-check", "duality", "lln", "estimate-v"):
            s.add_argument("--f", help="test function id, e.g. power:1 or centered:power:1")
        if name in ("duality", "estimate-v"):
            s.add_argument("--g")
        if name in ("clt", "covariance", "estimate-v"):
            s.add_argument("--functions", type=_names, help="comma-separated function ids")
        if name in ("clt", "covariance", "estimate-v"):
            s.add_argument("--method", choices=("pairtag", "pairtag_rb", "coupled"))
        if name == "clt":
            s.add_argument("--M-v", dest="M_v", type=int, help="replicates of the V estimator")
        if name == "estimate-v":
            s.add_argument("--wick", action="store_true", default=None)
        if name == "lln":
            s.add_argument("--ratio-band", type=_floats)
    return p


EXECUTION_KEYS = ("config", "out_dir", "workers", "command", "tags_out", "fragments_out")


def _load_config(path: Path) -> dict:
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return d


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge flags, config file, environment and defaults into a config."""
    file_cfg = _load_config(args.config) if args.config is not None else {}
    if file_cfg.get("command", args.command) != args.command:
        raise UsageError(f"config {args.config} is for {file_cfg['command']!r}, not {args.command!r}")
    flags = {k: v for k, v in vars(args).items() if k not in EXECUTION_KEYS and v is not None}
    if "epsilon" in flags and len(flags["epsilon"]) == 1:
        flags["epsilon"] = flags["epsilon"][0]
    merged = {**file_cfg, **flags, "command": args.command}
    merged["seed"] = resolve_seed(flags.get("seed"), file_cfg.get("seed"), os.environ.get("FRAGSTAT_SEED"))
    try:
        return ExperimentConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def run(argv=None) -> tuple[int, object]:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(f"missing subcommand; choose one of {', '.join(SUBCOMMANDS)}")
    cfg = resolve_config(args)
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    out_dir = args.out_dir
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    extra = {}
    for key in ("tags_out", "fragments_out"):
        target = getattr(args, key, None)
        if target is not None:
            name = "tags_path" if key == "tags_out" else "fragments_path"
            extra[name] = (out_dir / target) if out_dir is not None and not target.is_absolute() else target
    try:
        report = RUNNERS[cfg.command](cfg, workers=args.workers, out_dir=out_dir, **extra)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if out_dir is not None:
        report.write(out_dir)
    return (0 if report.passed else 2), report


def main(argv=None) -> int:
    try:
        code, report = run(argv)
    except UsageError as exc:
        print(f"fragstat: error: {exc}", file=sys.stderr)
        return 1
    print(report.summary())
    return code


if __name__ == "__main__":
    sys.exit(main())
