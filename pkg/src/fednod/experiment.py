"""Experiment configuration, repeated runs, grid sweeps and metric files."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import (
    CLASS_NAMES,
    build_sequence_dataset,
    load_folder_dataset,
    partition_clients,
    stratified_split,
    synth_generate,
)
from .errors import AggregationError, ConfigError
from .federation import Client, ServerState, evaluate, run_round
from .models import DDD_2D, DDD_3D, SUPPORTED_RESOLUTIONS, build_model, weights_extract
from .nn.optim import Hyperparameters

log = logging.getLogger(__name__)

SEED_ENV = "FEDNOD_SEED"

# Search space. The sequence_length row lists 26 where 16 (the
# documented starting value) is evidently meant; both are accepted.
GRID = {
    "learning_rate": (0.0001, 0.001, 0.002, 0.005, 0.01, 0.1),
    "momentum": (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 0.9),
    "batch_size": (2, 8, 16, 32, 64, 128),
    "weight_decay": (0.0001, 0.001, 0.002, 0.005, 0.01, 0.1),
    "nbr_clients": (2, 4, 8, 16, 20, 40),
    "sequence_length": (8, 10, 12, 14, 16, 18, 20, 26),
    "frame_skipping": (2, 3, 4, 5, 6, 8, 10, 12),
}
HYPER_AXES = ("learning_rate", "momentum", "batch_size", "weight_decay")
SEQUENCE_AXES = ("sequence_length", "frame_skipping")

# stream tags keep the per-run random streams apart
_SPLIT, _PARTITION, _TRAIN = 101, 102, 103


@dataclass
class DatasetSource:
    """Either a class-folder dataset on disk or a synthetic generator spec."""

    kind: str = "synthetic"  # "synthetic" | "folder"
    path: str | None = None
    frames_per_class: int = 500
    noise: float = 0.05
    video_length: int = 100

    def validate(self):
        if self.kind == "folder":
            if not self.path:
                raise ConfigError("folder dataset needs a path")
        elif self.kind == "synthetic":
            if self.frames_per_class < 1 or self.video_length < 1:
                raise ConfigError("synthetic dataset needs frames_per_class >= 1 and video_length >= 1")
            if self.noise < 0:
                raise ConfigError("synthetic noise must be non-negative")
        else:
            raise ConfigError(f"dataset kind must be 'synthetic' or 'folder', got {self.kind!r}")


@dataclass
class ExperimentConfig:
    model: str = DDD_2D
    resolution: int = 64
    nbr_clients: int = 2
    rounds: int = 20
    local_epochs: int = 1
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    sequence_length: int | None = None
    frame_skipping: int | None = None
    dataset: DatasetSource = field(default_factory=DatasetSource)
    runs: int = 5
    master_seed: int = 0
    output_dir: str = "results"
    train_fraction: float = 0.9
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.hyper, dict):
            self.hyper = Hyperparameters(**self.hyper)
        if isinstance(self.dataset, dict):
            self.dataset = DatasetSource(**self.dataset)
        if self.model == DDD_3D:
            if self.sequence_length is None:
                self.sequence_length = 16
            if self.frame_skipping is None:
                self.frame_skipping = 5
        self.validate()

    def validate(self):
        if self.model not in (DDD_2D, DDD_3D):
            raise ConfigError(f"model must be {DDD_2D} or {DDD_3D}, got {self.model!r}")
        if self.resolution not in SUPPORTED_RESOLUTIONS:
            raise ConfigError(f"resolution {self.resolution} not in {SUPPORTED_RESOLUTIONS}")
        for name in ("nbr_clients", "runs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("rounds", "local_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        has_seq = self.sequence_length is not None or self.frame_skipping is not None
        if self.model == DDD_2D and has_seq:
            raise ConfigError("sequence_length/frame_skipping only apply to DDD-3D")
        if self.model == DDD_3D and (self.sequence_length < 2 or self.frame_skipping < 1):
            raise ConfigError("DDD-3D needs sequence_length >= 2 and frame_skipping >= 1")
        self.dataset.validate()

    def out_of_grid(self) -> list[str]:
        """Names of swept parameters whose value lies outside the search space."""
        flagged = []
        for axis, allowed in GRID.items():
            value = self.axis_value(axis)
            if value is not None and not any(math.isclose(value, a) for a in allowed):
                flagged.append(axis)
        return flagged

    def axis_value(self, axis: str):
        if axis in HYPER_AXES:
            return getattr(self.hyper, axis)
        return getattr(self, axis)

    def with_axis(self, axis: str, value) -> ExperimentConfig:
        if axis in HYPER_AXES:
            return dataclasses.replace(self, hyper=dataclasses.replace(self.hyper, **{axis: value}))
        return dataclasses.replace(self, **{axis: value})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config field(s) {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None


def apply_seed_env(config: ExperimentConfig, environ=None) -> ExperimentConfig:
    """Honour ``FEDNOD_SEED`` when set."""
    environ = os.environ if environ is None else environ
    value = environ.get(SEED_ENV)
    if value is None or value == "":
        return config
    try:
        return dataclasses.replace(config, master_seed=int(value))
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {value!r}") from None


@dataclass
class RunSummary:
    config_id: str
    run: int
    seed: int
    accuracy: list[float]
    loss: list[float]
    wall_time: list[float]
    confusion: list[list[int]]  # final; of the initial model when rounds == 0
    initial_accuracy: float
    initial_loss: float
    test_size: int
    total_time: float = 0.0

    @property
    def final_accuracy(self) -> float:
        return self.accuracy[-1] if self.accuracy else self.initial_accuracy

    @property
    def final_loss(self) -> float:
        return self.loss[-1] if self.loss else self.initial_loss

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d) -> RunSummary:
        return cls(**d)

    def same_outcome(self, other: RunSummary) -> bool:
        a, b = self.to_dict(), other.to_dict()
        for d in (a, b):
            d.pop("wall_time")
            d.pop("total_time")
        return a == b


@dataclass
class RunContext:
    """Everything a single run needs; built identically on server and clients."""

    config: ExperimentConfig
    run: int
    seed: int
    shards: list
    test_set: object

    def make_model(self):
        cfg = self.config
        return build_model(cfg.model, cfg.resolution, cfg.sequence_length or 16, seed=self.seed)

    def make_client(self, client_id: int, model=None) -> Client:
        cfg = self.config
        return Client(client_id, self.shards[client_id], model or self.make_model(), cfg.hyper,
                      cfg.local_epochs, seed=[self.seed, _TRAIN])


def load_source(config: ExperimentConfig, seed: int):
    """Frame or clip dataset for one run."""
    src = config.dataset
    if src.kind == "folder":
        data = load_folder_dataset(src.path, resolution=config.resolution)
    else:
        data = synth_generate(src.frames_per_class, config.resolution, src.noise, seed=seed,
                              video_length=src.video_length)
    if config.model == DDD_3D:
        data = build_sequence_dataset(data, config.sequence_length, config.frame_skipping)
        if len(data) == 0:
            raise ConfigError("no clip fits in any video at this sequence_length/frame_skipping")
    return data


def prepare_run(config: ExperimentConfig, run: int, data=None) -> RunContext:
    seed = config.master_seed + run
    if data is None:
        data = load_source(config, seed)
    train, test = stratified_split(data, config.train_fraction, seed=[seed, _SPLIT])
    shards = partition_clients(train, config.nbr_clients, seed=[seed, _PARTITION])
    return RunContext(config, run, seed, shards, test)


def config_id(config: ExperimentConfig, axes=None) -> str:
    """``nbr_clients=2__learning_rate=0.001``; without axes, a default label."""
    if not axes:
        return f"{config.model}_K{config.nbr_clients}"
    return "__".join(f"{axis}={config.axis_value(axis)}" for axis in axes)


def execute_run(config: ExperimentConfig, run: int, cid: str | None = None, data=None, clients=None,
                on_round=None) -> RunSummary:
    """Full pipeline for one run.

    ``clients`` replaces the in-process clients (networked mode passes
    remote proxies); ``on_round(report)`` is called after every round.
    """
    started = time.perf_counter()
    ctx = prepare_run(config, run, data)
    model = ctx.make_model()
    if clients is None:
        shared = config.workers <= 1
        clients = [ctx.make_client(k, model if shared else None) for k in range(config.nbr_clients)]
    state = ServerState(0, weights_extract(model), config)
    init_acc, init_loss, confusion = evaluate(model, state.global_weights, ctx.test_set)
    for _ in range(config.rounds):
        state = run_round(state, clients, ctx.test_set, model, workers=config.workers)
        confusion = state.history[-1].confusion
        if on_round:
            on_round(state.history[-1])
    hist = state.history
    return RunSummary(
        config_id=cid or config_id(config),
        run=run,
        seed=ctx.seed,
        accuracy=[r.test_accuracy for r in hist],
        loss=[r.test_loss for r in hist],
        wall_time=[r.wall_time for r in hist],
        confusion=np.asarray(confusion).tolist(),
        initial_accuracy=init_acc,
        initial_loss=init_loss,
        test_size=len(ctx.test_set),
        total_time=time.perf_counter() - started,
    )


def _run_job(args):
    config, run, cid = args
    return execute_run(config, run, cid)


def check_writable(output_dir) -> None:
    try:
        os.makedirs(output_dir, exist_ok=True)
        probe = os.path.join(output_dir, ".write_probe")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        raise OSError(f"output directory {output_dir} is not writable: {exc}") from exc


def run_experiment(config: ExperimentConfig, cid: str | None = None, jobs: int = 1, emit: bool = False,
                   run_indices=None) -> list[RunSummary]:
    """``config.runs`` runs with seeds ``master_seed + r``.

    The dataset source is checked before any training. With ``jobs > 1``
    runs execute in separate processes; results do not depend on ``jobs``.
    """
    config.validate()
    if emit:
        check_writable(config.output_dir)
    if config.dataset.kind == "folder":
        load_source(config, config.master_seed)  # fail fast on layout problems
    runs = list(range(config.runs)) if run_indices is None else list(run_indices)
    cid = cid or config_id(config)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_run_job, [(config, r, cid) for r in runs]))
    else:
        summaries = []
        for r in runs:
            summaries.append(execute_run(config, r, cid))
            log.info("%s run %d: final accuracy %.4f", cid, r, summaries[-1].final_accuracy)
    if emit:
        emit_metrics({cid: summaries}, config.output_dir, {cid: config})
    return summaries


# -- aggregation -------------------------------------------------------------

def aggregate_runs(series) -> tuple[np.ndarray, np.ndarray]:
    """Per-round mean and 95% normal-approximation halfwidth over runs.

    ``series`` is a list of per-run sequences (or RunSummaries, whose
    accuracy curve is used). The halfwidth is ``1.96 * s / sqrt(n)`` with
    the sample standard deviation ``s``; it is zero for a single run.
    """
    rows = [s.accuracy if isinstance(s, RunSummary) else s for s in series]
    if not rows:
        raise AggregationError("no runs to aggregate")
    if len({len(r) for r in rows}) != 1:
        raise AggregationError(f"runs have different lengths: {sorted({len(r) for r in rows})}")
    values = np.asarray(rows, dtype=np.float64)
    mean = values.mean(axis=0)
    if len(rows) == 1:
        return mean, np.zeros_like(mean)
    return mean, 1.96 * values.std(axis=0, ddof=1) / math.sqrt(len(rows))


def best_run(summaries: list[RunSummary]) -> RunSummary:
    """Highest final accuracy; the lowest run index wins ties."""
    return max(sorted(summaries, key=lambda s: s.run), key=lambda s: s.final_accuracy)


def _safe(cid: str) -> str:
    return "".join(c if c.isalnum() or c in "=._-" else "_" for c in cid)


def write_confusion_csv(path, confusion) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *CLASS_NAMES])
        for name, row in zip(CLASS_NAMES, confusion):
            w.writerow([name, *map(int, row)])


def read_confusion_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[int(v) for v in r[1:]] for r in rows], dtype=np.int64)


def emit_metrics(results: dict, output_dir, configs: dict | None = None) -> list[str]:
    """Write ``rounds.csv``, ``summary.json`` and one ``confusion_<config>.csv`` per config.

    ``results`` maps config_id to its RunSummaries. The confusion file holds
    the matrix of the best run (see :func:`best_run`). Returns written paths.
    """
    check_writable(output_dir)
    written = []
    rounds_path = os.path.join(output_dir, "rounds.csv")
    with open(rounds_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config_id", "run", "round", "accuracy", "loss", "wall_time_s"])
        for cid, runs in results.items():
            for s in sorted(runs, key=lambda s: s.run):
                for i, (acc, loss, wt) in enumerate(zip(s.accuracy, s.loss, s.wall_time)):
                    w.writerow([cid, s.run, i + 1, repr(acc), repr(loss), f"{wt:.6f}"])
    written.append(rounds_path)

    summary = {}
    for cid, runs in results.items():
        runs = sorted(runs, key=lambda s: s.run)
        acc_mean, acc_hw = aggregate_runs([s.accuracy for s in runs])
        loss_mean, loss_hw = aggregate_runs([s.loss for s in runs])
        final_mean, final_hw = aggregate_runs([[s.final_accuracy] for s in runs])
        best = best_run(runs)
        entry = {
            "runs": len(runs),
            "seeds": [s.seed for s in runs],
            "accuracy_mean": acc_mean.tolist(),
            "accuracy_halfwidth": acc_hw.tolist(),
            "loss_mean": loss_mean.tolist(),
            "loss_halfwidth": loss_hw.tolist(),
            "final_accuracy": [s.final_accuracy for s in runs],
            "final_accuracy_mean": float(final_mean[0]),
            "final_accuracy_halfwidth": float(final_hw[0]),
            "final_confusion": {str(s.run): s.confusion for s in runs},
            "best_run": best.run,
            "test_size": best.test_size,
        }
        if configs and cid in configs:
            entry["config"] = configs[cid].to_dict()
            entry["out_of_grid"] = configs[cid].out_of_grid()
        summary[cid] = entry
        conf_path = os.path.join(output_dir, f"confusion_{_safe(cid)}.csv")
        write_confusion_csv(conf_path, best.confusion)
        written.append(conf_path)
    summary_path = os.path.join(output_dir, "summary.json")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    written.insert(1, summary_path)
    return written


# -- sweeps ------------------------------------------------------------------

SWEEP_COLUMNS = ["config_id", "run", "seed", "final_accuracy", "final_loss", "wall_time_s"]


def validate_grid(grid: dict, base: ExperimentConfig) -> None:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("sweep grid is empty")
    for axis, values in grid.items():
        if axis not in GRID:
            raise ConfigError(f"unknown sweep axis {axis!r}; allowed axes: {list(GRID)}")
        if axis in SEQUENCE_AXES and base.model != DDD_3D:
            raise ConfigError(f"axis {axis} only applies to DDD-3D")
        for v in values:
            if not any(math.isclose(v, a) for a in GRID[axis]):
                raise ConfigError(f"{axis}={v} is not in the search space; allowed values: {list(GRID[axis])}")


def expand_grid(grid: dict, base: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    """Cartesian product in axis order, last axis varying fastest."""
    validate_grid(grid, base)
    axes = list(grid)
    configs = [base]
    for axis in axes:
        configs = [c.with_axis(axis, v) for c in configs for v in grid[axis]]
    return [(config_id(c, axes), c) for c in configs]


def _run_path(output_dir, cid, run):
    return os.path.join(output_dir, "runs", _safe(cid), f"run_{run}.json")


def _write_config(output_dir, cid, config: ExperimentConfig) -> None:
    path = os.path.join(output_dir, "runs", _safe(cid), "config.json")
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(config.to_json())


def _completed_rows(sweep_csv) -> set:
    if not os.path.exists(sweep_csv):
        return set()
    with open(sweep_csv, newline="") as fh:
        return {(row["config_id"], int(row["run"])) for row in csv.DictReader(fh)}


def sweep(grid: dict, base: ExperimentConfig, output_dir=None, resume: bool = True) -> list[dict]:
    """Run every grid point ``base.runs`` times, sequentially.

    Each finished run is stored under ``runs/<config_id>/run_<r>.json`` and
    listed in ``sweep.csv``. On re-run a (config, run) pair is skipped only
    when both its row and its JSON file exist. Returns the table rows.
    """
    output_dir = output_dir or base.output_dir
    points = expand_grid(grid, base)
    check_writable(output_dir)
    sweep_csv = os.path.join(output_dir, "sweep.csv")
    done = _completed_rows(sweep_csv) if resume else set()
    results, configs = {}, {}
    for cid, cfg in points:
        configs[cid] = cfg
        results[cid] = []
        _write_config(output_dir, cid, cfg)
        for r in range(cfg.runs):
            path = _run_path(output_dir, cid, r)
            if (cid, r) in done and os.path.exists(path):
                with open(path) as fh:
                    results[cid].append(RunSummary.from_dict(json.load(fh)))
                continue
            log.info("sweep: %s run %d", cid, r)
            summary = execute_run(cfg, r, cid)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, "w") as fh:
                json.dump(summary.to_dict(), fh)
            results[cid].append(summary)
            _write_sweep_csv(sweep_csv, results, grid)
    rows = _write_sweep_csv(sweep_csv, results, grid)
    emit_metrics(results, output_dir, configs)
    return rows


def _write_sweep_csv(path, results, grid) -> list[dict]:
    rows = []
    for cid, runs in results.items():
        for s in sorted(runs, key=lambda s: s.run):
            rows.append({
                "config_id": cid,
                "run": s.run,
                "seed": s.seed,
                "final_accuracy": repr(s.final_accuracy),
                "final_loss": repr(s.final_loss),
                "wall_time_s": f"{s.total_time:.6f}",
            })
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    os.replace(tmp, path)
    return rows


def load_summaries(output_dir) -> dict:
    """RunSummaries stored by :func:`sweep` (or ``train --save-runs``), keyed by config_id."""
    results: dict = {}
    root = os.path.join(output_dir, "runs")
    if not os.path.isdir(root):
        raise FileNotFoundError(f"no runs/ directory under {output_dir}")
    for sub in sorted(os.listdir(root)):
        folder = os.path.join(root, sub)
        for name in sorted(os.listdir(folder)):
            if name.startswith("run_") and name.endswith(".json"):
                with open(os.path.join(folder, name)) as fh:
                    s = RunSummary.from_dict(json.load(fh))
                results.setdefault(s.config_id, []).append(s)
    return results


def load_configs(output_dir) -> dict:
    """Configs stored next to their runs, keyed by config_id."""
    configs = {}
    root = os.path.join(output_dir, "runs")
    for cid, runs in load_summaries(output_dir).items():
        path = os.path.join(root, _safe(cid), "config.json")
        if os.path.exists(path):
            configs[cid] = ExperimentConfig.load(path)
    return configs


def save_runs(summaries: list[RunSummary], output_dir, config: ExperimentConfig | None = None) -> None:
    if config is not None:
        for cid in {s.config_id for s in summaries}:
            _write_config(output_dir, cid, config)
    for s in summaries:
        path = _run_path(output_dir, s.config_id, s.run)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w") as fh:
            json.dump(s.to_dict(), fh)

