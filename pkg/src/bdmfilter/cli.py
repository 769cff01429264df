"""Command-line entry point: ``bdmfilter {run,pcrb,plot}``."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import BACKEND
from .experiment import ConfigError, ExperimentConfig, emit_plots, lambda_tag, run_campaign, run_pcrb


def _filters(text: str):
    return tuple(f.strip() for f in text.split(",") if f.strip())


def _common(p: argparse.ArgumentParser, filters: bool = True) -> None:
    p.add_argument("--config", type=Path, help="JSON config file; flags override its values")
    p.add_argument("--case", choices=("persistent", "momentary", "none"), help="bias scenario")
    p.add_argument("--lambda", dest="lambdas", type=float, nargs="+", metavar="LAMBDA",
                   help="bias occurrence probabilities")
    p.add_argument("--steps", type=int, help="time steps per run")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    if filters:
        p.add_argument("--filters", type=_filters, help="comma-separated subset of bdm,ukf")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdmfilter", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s (kernels: {BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte-Carlo campaign")
    _common(run)
    run.add_argument("--runs", type=int, help="Monte-Carlo runs per lambda")
    run.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
    run.add_argument("--pcrb", action="store_true", default=None, help="also write PCRB series")

    pcrb = sub.add_parser("pcrb", help="write PCRB series only")
    _common(pcrb, filters=False)

    plot = sub.add_parser("plot", help="(re)write plot.gp for an existing campaign directory")
    plot.add_argument("--out", required=True, help="campaign output directory")
    plot.add_argument("--config", type=Path, help="config file (defaults to OUT/config.json)")
    plot.add_argument("--filters", type=_filters, help="comma-separated subset of bdm,ukf")
    plot.add_argument("--lambda", dest="lambdas", type=float, nargs="+", metavar="LAMBDA")
    return parser


def _load(args, keys) -> ExperimentConfig:
    overrides = {k: getattr(args, k, None) for k in keys}
    if args.config is not None:
        return ExperimentConfig.from_file(args.config, **overrides)
    return ExperimentConfig.from_dict({}, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _load(args, ("case", "lambdas", "runs", "steps", "seed", "out", "filters",
                               "workers", "pcrb"))
            campaign = run_campaign(cfg)
            for path in campaign.files:
                print(path)
        elif args.command == "pcrb":
            cfg = _load(args, ("case", "lambdas", "steps", "seed", "out"))
            for path in run_pcrb(replace(cfg, pcrb=True)):
                print(path)
        else:
            out = Path(args.out)
            if args.config is None and (out / "config.json").exists():
                args.config = out / "config.json"
            cfg = _load(args, ("filters", "lambdas"))
            print(emit_plots(out, cfg.filters, cfg.lambdas))
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"bdmfilter: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
