import csv
import json
import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fednod.experiment as experiment
from fednod.errors import AggregationError, ConfigError
from fednod.experiment import (
    GRID,
    DatasetSource,
    ExperimentConfig,
    RunSummary,
    aggregate_runs,
    apply_seed_env,
    best_run,
    emit_metrics,
    execute_run,
    expand_grid,
    load_summaries,
    read_confusion_csv,
    run_experiment,
    sweep,
)
from fednod.nn import Hyperparameters


def tiny(**kw):
    base = dict(rounds=1, runs=1, hyper=Hyperparameters(batch_size=16),
                dataset=DatasetSource(frames_per_class=30, video_length=10))
    base.update(kw)
    return ExperimentConfig(**base)


# -- config --------------------------------------------------------------------

def test_defaults_follow_the_preset():
    c = ExperimentConfig()
    assert (c.model, c.nbr_clients, c.runs, c.local_epochs) == ("DDD-2D", 2, 5, 1)
    h = c.hyper
    assert (h.learning_rate, h.momentum, h.batch_size, h.weight_decay) == (0.001, 0.9, 32, 0.0001)
    assert c.out_of_grid() == []


def test_sequence_fields_only_for_3d():
    with pytest.raises(ConfigError):
        ExperimentConfig(sequence_length=16)
    c = ExperimentConfig(model="DDD-3D")
    assert (c.sequence_length, c.frame_skipping) == (16, 5)


def test_out_of_grid_values_are_flagged():
    c = ExperimentConfig(nbr_clients=3, hyper=Hyperparameters(learning_rate=0.003))
    assert set(c.out_of_grid()) == {"nbr_clients", "learning_rate"}


@pytest.mark.parametrize("bad", [dict(model="DDD-4D"), dict(resolution=65), dict(rounds=-1), dict(runs=0),
                                 dict(train_fraction=1.0), dict(dataset=DatasetSource(kind="ftp"))])
def test_invalid_config(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(**bad)


def test_config_json_roundtrip(tmp_path):
    c = ExperimentConfig(model="DDD-3D", nbr_clients=8, hyper=Hyperparameters(batch_size=8),
                         dataset=DatasetSource(kind="folder", path="/data"))
    path = tmp_path / "c.json"
    path.write_text(c.to_json())
    assert ExperimentConfig.load(path) == c
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**c.to_dict(), "colour": "red"})


def test_seed_env_override():
    c = ExperimentConfig(master_seed=1)
    assert apply_seed_env(c, {"FEDNOD_SEED": "7"}).master_seed == 7
    assert apply_seed_env(c, {}).master_seed == 1
    with pytest.raises(ConfigError):
        apply_seed_env(c, {"FEDNOD_SEED": "seven"})


# -- runs ----------------------------------------------------------------------

def test_zero_rounds_evaluates_initial_model():
    s = execute_run(tiny(rounds=0), 0)
    assert s.accuracy == [] and s.loss == [] and s.wall_time == []
    assert s.final_accuracy == s.initial_accuracy
    conf = np.array(s.confusion)
    assert conf.sum() == s.test_size
    assert np.trace(conf) / conf.sum() == s.initial_accuracy


def test_run_is_deterministic_and_seeded_per_run():
    c = tiny(rounds=2, runs=2)
    a = run_experiment(c)
    b = run_experiment(c)
    assert all(x.same_outcome(y) for x, y in zip(a, b))
    assert [s.seed for s in a] == [0, 1]
    assert a[0].accuracy != a[1].accuracy or a[0].loss != a[1].loss


def test_parallel_runs_match_sequential():
    c = tiny(runs=2)
    seq = run_experiment(c, jobs=1)
    par = run_experiment(c, jobs=2)
    assert all(x.same_outcome(y) for x, y in zip(seq, par))


def test_series_lengths_and_ranges():
    s = execute_run(tiny(rounds=3), 0)
    assert len(s.accuracy) == len(s.loss) == len(s.wall_time) == 3
    assert all(0.0 <= a <= 1.0 for a in s.accuracy) and all(v >= 0 for v in s.loss)


def test_unwritable_output_fails_before_training(tmp_path, monkeypatch):
    blocker = tmp_path / "file"
    blocker.write_text("")
    monkeypatch.setattr(experiment, "execute_run", lambda *a, **k: pytest.fail("training started"))
    with pytest.raises(OSError):
        run_experiment(tiny(output_dir=str(blocker / "out")), emit=True)


def test_missing_dataset_fails_before_training(tmp_path, monkeypatch):
    monkeypatch.setattr(experiment, "execute_run", lambda *a, **k: pytest.fail("training started"))
    with pytest.raises(Exception):
        run_experiment(tiny(dataset=DatasetSource(kind="folder", path=str(tmp_path / "nothing"))))


# -- aggregation -----------------------------------------------------------------

def test_identical_runs_have_zero_halfwidth():
    mean, hw = aggregate_runs([[0.2, 0.5, 0.9]] * 5)
    assert mean.tolist() == pytest.approx([0.2, 0.5, 0.9])
    assert hw.tolist() == [0.0, 0.0, 0.0]


def test_two_point_halfwidth():
    mean, hw = aggregate_runs([[0.0], [1.0]])
    assert mean[0] == 0.5
    assert hw[0] == pytest.approx(1.96 * math.sqrt(0.5) / math.sqrt(2))
    assert round(hw[0], 2) == 0.98


def test_single_run_halfwidth_zero():
    _, hw = aggregate_runs([[0.3, 0.4]])
    assert hw.tolist() == [0.0, 0.0]


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 8), st.integers(1, 10), st.integers(0, 2**31))
def test_aggregate_matches_statistics_module(n_runs, n_rounds, seed):
    rng = np.random.default_rng(seed)
    rows = rng.uniform(0, 1, (n_runs, n_rounds)).tolist()
    mean, hw = aggregate_runs(rows)
    for j in range(n_rounds):
        col = [r[j] for r in rows]
        assert abs(mean[j] - statistics.fmean(col)) <= 1e-9
        assert abs(hw[j] - 1.96 * statistics.stdev(col) / math.sqrt(n_runs)) <= 1e-9
        assert min(col) - 1e-12 <= mean[j] <= max(col) + 1e-12


def test_aggregate_errors():
    with pytest.raises(AggregationError):
        aggregate_runs([])
    with pytest.raises(AggregationError):
        aggregate_runs([[0.1, 0.2], [0.3]])


def fake_summary(run, final, cid="c"):
    return RunSummary(cid, run, run, [0.1, final], [1.0, 0.5], [0.1, 0.1], [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
                      0.3, 1.1, 3)


def test_best_run_prefers_lowest_index_on_ties():
    runs = [fake_summary(2, 0.9), fake_summary(0, 0.8), fake_summary(1, 0.9)]
    assert best_run(runs).run == 1


# -- emitted files ---------------------------------------------------------------

def test_emit_one_run_one_round(tmp_path):
    c = tiny(output_dir=str(tmp_path))
    (s,) = run_experiment(c, emit=True)
    lines = (tmp_path / "rounds.csv").read_text().splitlines()
    assert lines[0] == "config_id,run,round,accuracy,loss,wall_time_s"
    assert len(lines) == 2
    conf_file = tmp_path / "confusion_DDD-2D_K2.csv"
    assert conf_file.read_text().splitlines()[0] == "true\\pred,normal,talking,yawning"
    conf = read_confusion_csv(conf_file)
    assert conf.sum() == s.test_size
    assert np.trace(conf) / conf.sum() == s.final_accuracy
    text = (tmp_path / "summary.json").read_text()
    data = json.loads(text)
    assert json.loads(json.dumps(data)) == data
    assert data["DDD-2D_K2"]["final_accuracy"] == [s.final_accuracy]


def test_emitted_bytes_reproducible_except_wall_time(tmp_path):
    outs = []
    for name in ("a", "b"):
        run_experiment(tiny(rounds=2, runs=2, output_dir=str(tmp_path / name)), emit=True)
        outs.append(tmp_path / name)
    assert (outs[0] / "confusion_DDD-2D_K2.csv").read_bytes() == (outs[1] / "confusion_DDD-2D_K2.csv").read_bytes()
    a, b = (json.loads((d / "summary.json").read_text()) for d in outs)
    for d in (a, b):
        d["DDD-2D_K2"]["config"].pop("output_dir")
    assert a == b

    def rows(d):
        with open(d / "rounds.csv") as fh:
            return [{k: v for k, v in r.items() if k != "wall_time_s"} for r in csv.DictReader(fh)]
    assert rows(outs[0]) == rows(outs[1])
    assert all(0 <= float(r["accuracy"]) <= 1 and float(r["loss"]) >= 0 for r in rows(outs[0]))


def test_emit_to_unwritable_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_metrics({"c": [fake_summary(0, 0.5)]}, blocker / "x")


# -- sweeps --------------------------------------------------------------------

def test_grid_values():
    assert GRID["nbr_clients"] == (2, 4, 8, 16, 20, 40)


def test_client_grid_gives_six_configs(tmp_path):
    rows = sweep({"nbr_clients": list(GRID["nbr_clients"])}, tiny(), tmp_path)
    assert len(rows) == 6
    assert [r["config_id"] for r in rows] == [f"nbr_clients={k}" for k in GRID["nbr_clients"]]
    assert len((tmp_path / "sweep.csv").read_text().splitlines()) == 7


def test_grid_product_order():
    points = expand_grid({"batch_size": [8, 16], "learning_rate": [0.001, 0.01]}, tiny())
    assert [cid for cid, _ in points] == [
        "batch_size=8__learning_rate=0.001", "batch_size=8__learning_rate=0.01",
        "batch_size=16__learning_rate=0.001", "batch_size=16__learning_rate=0.01"]
    assert points[3][1].hyper.batch_size == 16 and points[3][1].hyper.learning_rate == 0.01


@pytest.mark.parametrize("grid", [{}, {"nbr_clients": []}])
def test_empty_grid_is_an_error(grid, tmp_path):
    with pytest.raises(ConfigError):
        sweep(grid, tiny(), tmp_path)


def test_invalid_axis_value_lists_allowed(tmp_path):
    with pytest.raises(ConfigError) as info:
        sweep({"learning_rate": [0.003]}, tiny(), tmp_path)
    assert "0.0001" in str(info.value) and "0.1" in str(info.value)
    with pytest.raises(ConfigError):
        sweep({"dropout": [0.5]}, tiny(), tmp_path)
    with pytest.raises(ConfigError):
        sweep({"frame_skipping": [5]}, tiny(), tmp_path)


def test_interrupted_sweep_reruns_only_missing_rows(tmp_path, monkeypatch):
    grid = {"nbr_clients": [2, 4]}
    first = sweep(grid, tiny(runs=2), tmp_path)
    csv_path = tmp_path / "sweep.csv"
    lines = csv_path.read_text().splitlines()
    dropped = lines.pop(3)
    csv_path.write_text("\n".join(lines) + "\n")

    calls = []
    real = experiment.execute_run

    def counting(config, run, cid=None, **kw):
        calls.append((cid, run))
        return real(config, run, cid, **kw)

    monkeypatch.setattr(experiment, "execute_run", counting)
    second = sweep(grid, tiny(runs=2), tmp_path)
    assert calls == [(dropped.split(",")[0], int(dropped.split(",")[1]))]
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_time_s"} for r in rows]
    assert strip(first) == strip(second)
    assert sum(len(v) for v in load_summaries(tmp_path).values()) == 4
