"""``fednod`` command line: synth, train, sweep, serve, join, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .data import synth_generate, write_folder_dataset
from .errors import FednodError
from .experiment import (
    GRID,
    HYPER_AXES,
    ExperimentConfig,
    aggregate_runs,
    apply_seed_env,
    config_id,
    emit_metrics,
    load_configs,
    load_summaries,
    run_experiment,
    save_runs,
    sweep,
)
from .models import DDD_2D, DDD_3D


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags below override it")
    p.add_argument("--model", choices=[DDD_2D, DDD_3D])
    p.add_argument("--resolution", type=int)
    p.add_argument("--clients", dest="nbr_clients", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--local-epochs", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", dest="master_seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int, help="parallel client workers in simulation")
    p.add_argument("--sequence-length", type=int)
    p.add_argument("--frame-skipping", type=int)
    for axis in HYPER_AXES:
        p.add_argument("--" + axis.replace("_", "-"), dest=axis, type=type(GRID[axis][0]))
    p.add_argument("--data", help="class-folder dataset root (default: synthetic)")
    p.add_argument("--frames-per-class", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--video-length", type=int)


def resolve_config(args) -> ExperimentConfig:
    """Config file, then command-line flags, then ``FEDNOD_SEED``."""
    base = ExperimentConfig.load(args.config).to_dict() if args.config else ExperimentConfig().to_dict()
    for key in ("model", "resolution", "nbr_clients", "rounds", "local_epochs", "runs", "master_seed",
                "output_dir", "workers", "sequence_length", "frame_skipping"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    for axis in HYPER_AXES:
        if getattr(args, axis, None) is not None:
            base["hyper"][axis] = getattr(args, axis)
    ds = base["dataset"]
    if args.data:
        ds.update(kind="folder", path=args.data)
    for key in ("frames_per_class", "noise", "video_length"):
        if getattr(args, key, None) is not None:
            ds[key] = getattr(args, key)
    return apply_seed_env(ExperimentConfig.from_dict(base))


def cmd_synth(args) -> int:
    ds = synth_generate(args.frames_per_class, args.resolution, args.noise, seed=args.seed,
                        video_length=args.video_length)
    n = write_folder_dataset(ds, args.output)
    print(f"wrote {n} frames to {args.output}")
    return 0


def cmd_train(args) -> int:
    config = resolve_config(args)
    cid = config_id(config)
    summaries = run_experiment(config, cid, jobs=args.jobs, emit=True)
    save_runs(summaries, config.output_dir, config)
    for s in summaries:
        print(f"run {s.run} (seed {s.seed}): final accuracy {s.final_accuracy:.4f} loss {s.final_loss:.4f}")
    mean, hw = aggregate_runs([[s.final_accuracy] for s in summaries])
    print(f"{cid}: mean final accuracy {mean[0]:.4f} +/- {hw[0]:.4f} over {len(summaries)} run(s)")
    return 0


def _parse_grid(items) -> dict:
    grid = {}
    for item in items:
        axis, sep, values = item.partition("=")
        if not sep or axis not in GRID:
            raise FednodError(f"grid axis must be one of {list(GRID)} as axis=v1,v2; got {item!r}")
        kind = type(GRID[axis][0])
        grid[axis] = [kind(v) for v in values.split(",") if v]
    return grid


def cmd_sweep(args) -> int:
    config = resolve_config(args)
    grid = json.load(open(args.grid_file)) if args.grid_file else _parse_grid(args.grid or [])
    rows = sweep(grid, config, config.output_dir, resume=not args.no_resume)
    print(f"{len(rows)} row(s) in {config.output_dir}/sweep.csv")
    return 0


def cmd_serve(args) -> int:
    from .network import serve

    config = resolve_config(args)
    summary = serve(config, args.listen, run=args.run)
    emit_metrics({summary.config_id: [summary]}, config.output_dir, {summary.config_id: config})
    print(f"final accuracy {summary.final_accuracy:.4f} after {len(summary.accuracy)} round(s)")
    return 0


def cmd_join(args) -> int:
    from .network import join

    rounds = join(args.connect, args.client_id)
    print(f"client {args.client_id}: trained {rounds} round(s)")
    return 0


def cmd_report(args) -> int:
    results = load_summaries(args.input)
    emit_metrics(results, args.output or args.input, load_configs(args.input))
    for cid, runs in results.items():
        mean, hw = aggregate_runs([[s.final_accuracy] for s in runs])
        print(f"{cid}: {mean[0]:.4f} +/- {hw[0]:.4f} ({len(runs)} run(s))")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fednod", description="Federated driver drowsiness detection experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic class-folder dataset")
    p.add_argument("output")
    p.add_argument("--frames-per-class", type=int, default=500)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--video-length", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run one configuration for several seeds")
    _add_config_flags(p)
    p.add_argument("--jobs", type=int, default=1, help="runs executed in parallel processes")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="grid search over search-space axes")
    _add_config_flags(p)
    p.add_argument("--grid", nargs="*", metavar="AXIS=V1,V2", help="e.g. nbr_clients=2,4,8")
    p.add_argument("--grid-file", help="JSON object mapping axis to value list")
    p.add_argument("--no-resume", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="coordinate one run with networked clients")
    _add_config_flags(p)
    p.add_argument("--listen", default="127.0.0.1:7641", metavar="HOST:PORT")
    p.add_argument("--run", type=int, default=0, help="run index (seed = master_seed + run)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("join", help="take part in a networked run")
    p.add_argument("--connect", required=True, metavar="HOST:PORT")
    p.add_argument("--client-id", type=int, required=True)
    p.set_defaults(func=cmd_join)

    p = sub.add_parser("report", help="re-aggregate stored runs")
    p.add_argument("input", help="directory holding runs/")
    p.add_argument("--output")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FednodError, OSError, ValueError) as exc:
        print(f"fednod: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
