"""Command-line front end: ABER sweeps and bound evaluation to CSV."""

import argparse
import dataclasses
import sys
import time

from .geometry import Scheme
from .simulator import SimulationConfig, run_bound, run_sweep


def _load_config(args) -> SimulationConfig:
    config = SimulationConfig.from_json(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    if getattr(args, "scheme", None) is not None:
        overrides["scheme"] = Scheme(args.scheme)
    return dataclasses.replace(config, **overrides) if overrides else config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="otfs-scma",
        description="Uplink OTFS-SCMA link simulator with joint dual-chain reception",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo ABER sweep")
    sim.add_argument("--config", required=True, help="JSON configuration file")
    sim.add_argument("--out", required=True, help="output CSV path")
    sim.add_argument("--seed", type=int, default=None, help="override the seed")
    sim.add_argument("--trials", type=int, default=None, help="override trial count")
    sim.add_argument(
        "--scheme",
        choices=[s.value for s in Scheme],
        default=None,
        help="override the deployment scheme",
    )
    sim.add_argument("--quiet", action="store_true", help="suppress progress output")

    bound = sub.add_parser("bound", help="evaluate the single-user ABER union bound")
    bound.add_argument("--config", required=True, help="JSON configuration file")
    bound.add_argument("--out", required=True, help="output CSV path")
    bound.add_argument("--seed", type=int, default=None, help="override the seed")

    args = parser.parse_args(argv)
    config = _load_config(args)

    start = time.time()
    if args.command == "simulate":
        if args.quiet:
            progress = None
        else:
            def progress(point, trial):
                if trial % 100 == 0:
                    print(
                        f"point {point + 1}/{len(config.power_sweep_dbm)} "
                        f"trial {trial + 1}/{config.trials}",
                        file=sys.stderr,
                    )
        report = run_sweep(config, progress=progress)
    else:
        report = run_bound(config)
    report.to_csv(args.out)
    elapsed = time.time() - start
    print(f"wrote {len(report.rows)} rows to {args.out} in {elapsed:.1f} s")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
