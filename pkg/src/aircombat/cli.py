"""Command-line entry point: ``aircombat {train,evaluate,simulate,aggregate,defaults}``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import harness, nn
from .curriculum import CurriculumKind
from .policy import SCRIPTED


def _config(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else harness.config_from_dict({})
    train = cfg.train
    if getattr(args, "iterations", None) is not None:
        train = replace(train, iterations=args.iterations)
    if getattr(args, "cycles", None) is not None:
        train = replace(train, cycles_per_iteration=args.cycles)
    if getattr(args, "batch_size", None) is not None:
        train = replace(train, batch_size=args.batch_size)
    cfg.train = train
    if getattr(args, "curriculum", None):
        cfg.kinds = [CurriculumKind.parse(c) for c in args.curriculum]
    if getattr(args, "seeds", None):
        cfg.seeds = list(args.seeds)
    if getattr(args, "out", None):
        cfg.out = Path(args.out)
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "deterministic", False):
        cfg.workers = 1
    harness.ExperimentConfig.__post_init__(cfg)
    return cfg


def cmd_train(args) -> int:
    cfg = _config(args)
    result = harness.run_experiment(cfg)
    print(f"raw CSV:       {', '.join(str(p) for p in result['raw'].values())}")
    print(f"aggregate CSV: {result['aggregate']}")
    for f in result["failures"]:
        print(f"FAILED {f['method']} seed {f['seed']}: {f['error']}", file=sys.stderr)
    return 1 if result["failures"] else 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    params = nn.load(args.model)
    kind = CurriculumKind.parse(args.curriculum_stage[0])
    tally = harness.evaluate(
        params, kind, int(args.curriculum_stage[1]), args.episodes, args.seed, args.opponent,
        cfg.engagement, cfg.missile, cfg.physics,
    )
    print(f"episodes={tally.episodes} wins={tally.wins} losses={tally.losses} draws={tally.draws}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    params = nn.load(args.model)
    azimuth = math.radians(args.azimuth_deg) if args.azimuth is None else args.azimuth
    res = harness.simulate(
        params, azimuth, args.distance, args.opponent, args.trajectory, args.seed, cfg.engagement, cfg.missile, cfg.physics
    )
    print(f"outcome={res.outcome.name} reason={res.reason.name} time={res.duration:.1f}s trajectory={res.trajectory}")
    return 0


def cmd_aggregate(args) -> int:
    records = []
    for path in args.raw:
        records += harness.read_records(path)
    harness.write_aggregate(args.output, harness.aggregate(records))
    print(f"aggregate CSV: {args.output}")
    return 0


def cmd_defaults(args) -> int:
    sys.stdout.write(harness.DEFAULT_CONFIG)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aircombat", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="YAML configuration file (see `aircombat defaults`)")

    t = sub.add_parser("train", help="run the curriculum x seed training sweep")
    common(t)
    t.add_argument("--curriculum", nargs="+", choices=[k.value for k in CurriculumKind], help="curricula to train")
    t.add_argument("--seeds", nargs="+", type=int)
    t.add_argument("--iterations", type=int)
    t.add_argument("--cycles", type=int, help="collect/update cycles per iteration")
    t.add_argument("--batch-size", type=int)
    t.add_argument("--out", type=Path)
    t.add_argument("--workers", type=int)
    t.add_argument("--deterministic", action="store_true", help="single worker; reproducible byte-for-byte")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="deterministic win/loss/draw tallies of a saved model")
    common(e)
    e.add_argument("model", type=Path)
    e.add_argument("--stage", dest="curriculum_stage", nargs=2, metavar=("CURRICULUM", "INDEX"), default=["none", "0"])
    e.add_argument("--episodes", type=int, default=50)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--opponent", default="self", choices=["self", *SCRIPTED])
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("simulate", help="one engagement against a scripted target, with trajectory export")
    common(s)
    s.add_argument("model", type=Path)
    az = s.add_mutually_exclusive_group()
    az.add_argument("--azimuth", type=float, help="target bearing off the nose, radians")
    az.add_argument("--azimuth-deg", type=float, default=0.0, help="target bearing off the nose, degrees")
    s.add_argument("--distance", type=float, default=60_000.0, help="initial separation, m")
    s.add_argument("--opponent", default="straight-line", choices=list(SCRIPTED))
    s.add_argument("--trajectory", type=Path, default=Path("trajectory.jsonl"))
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("aggregate", help="recompute the aggregate CSV from raw CSV files")
    a.add_argument("raw", nargs="+", type=Path)
    a.add_argument("-o", "--output", type=Path, default=Path("aggregate.csv"))
    a.set_defaults(func=cmd_aggregate)

    d = sub.add_parser("defaults", help="print the documented default configuration")
    d.set_defaults(func=cmd_defaults)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (harness.ConfigError, nn.ModelFormatError, ValueError, IndexError, OSError) as exc:
        print(f"aircombat: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
