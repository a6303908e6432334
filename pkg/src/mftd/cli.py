"""Command line: ``mftd {seed,evolve,report,resume}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, RunConfig


def _parser():
    ap = argparse.ArgumentParser(prog="mftd", description="Multifidelity stress-based topology design of an L-bracket.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, with_config=True):
        if with_config:
            p.add_argument("--config", type=Path, help="JSON run configuration")
            p.add_argument("--seed", type=int, help="master RNG seed")
            p.add_argument("--population", type=int, help="elite archive size")
        p.add_argument("--out", type=Path, help="run directory")
        p.add_argument("--iters", type=int, help="MFTD iteration cap")
        p.add_argument("--threads", type=int, help="worker processes")

    common(sub.add_parser("seed", help="low-fidelity seed population"))
    common(sub.add_parser("evolve", help="evaluate seeds and run the evolutionary loop"))
    p = sub.add_parser("report", help="write CSV, PGM, VTK and PNG exports for a run")
    p.add_argument("--out", type=Path, required=True, help="run directory")
    p.add_argument("--vtk", action="store_true", help="also export front-1 meshes")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p = sub.add_parser("resume", help="continue from the last checkpoint")
    common(p, with_config=False)
    p.add_argument("--checkpoint", type=Path, help="checkpoint file (default: <out>/checkpoint.npz)")
    return ap


def resolve_config(args) -> RunConfig:
    """Config file (or the run directory's config.json, or defaults) plus flag overrides."""
    if args.config is not None:
        config = RunConfig.load(args.config)
    elif args.out is not None and (args.out / "config.json").exists():
        config = RunConfig.load(args.out / "config.json")
    else:
        config = RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.threads is not None:
        changes["threads"] = args.threads
    if args.out is not None:
        changes["output"] = str(args.out)
    evolve = {}
    if args.iters is not None:
        evolve["max_iterations"] = args.iters
    if args.population is not None:
        evolve["population"] = args.population
    if evolve:
        changes["evolve"] = dataclasses.replace(config.evolve, **evolve)
    return config.replace(**changes) if changes else config


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "seed":
            config = resolve_config(args)
            seeds = pipeline.cmd_seed(config)
            print(f"{len(seeds)} seeds written to {Path(config.output) / 'seeds'}")
        elif args.command == "evolve":
            config = resolve_config(args)
            state = pipeline.cmd_evolve(config)
            print(f"finished iteration {state.iteration}; hypervolume {state.hv_history[-1][1]:.6g}")
        elif args.command == "resume":
            if args.out is None and args.checkpoint is None:
                raise ConfigError("resume needs --out or --checkpoint")
            out = args.out or args.checkpoint.parent
            state = pipeline.cmd_resume(out, args.checkpoint, args.iters, args.threads)
            print(f"at iteration {state.iteration}; hypervolume {state.hv_history[-1][1]:.6g}")
        elif args.command == "report":
            rep = pipeline.cmd_report(args.out, vtk=args.vtk, figures=not args.no_figures)
            print(f"report written to {rep}")
    except (ConfigError, FileNotFoundError, pipeline.CheckpointError, ValueError, RuntimeError) as exc:
        print(f"mftd: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
