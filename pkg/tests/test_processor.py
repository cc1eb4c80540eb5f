# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

import pytest

from core.config import EnvConfig, ReachConfig, RunConfig, SimConfig
from core.errors import ValidationError
from core.processor import (PipelineStats, build_report, compare_losses, evaluate_model, gen_envs, label_dataset,
                            make_world, run_monte_carlo, simulate, train_model)
from core.storage import Dataset, read_csv, read_json
from helpers import tiny_train_config


@pytest.fixture
def small_config() -> RunConfig:
    """2.4 m windows at 0.12 m, a 5×5×4 state grid and a tiny network."""
    return RunConfig(
        env=EnvConfig(resolution=0.12, window_side=2.4, window_obstacle_count=(1, 2), obstacle_size=(0.2, 0.4)),
        reach=ReachConfig(counts=(5, 5, 4), max_sweeps=200),
        train=tiny_train_config(),
        sim=SimConfig(max_steps=3, modes=("none",), horizons=(2,), episodes=2),
    )


@pytest.fixture
def labeled_root(tmp_path, small_config):
    root = tmp_path / "dataset"
    gen_envs(root, small_config, count=3, seed=0)
    label_dataset(root, small_config)
    return root


def test_pipeline_stats_merge():
    total = PipelineStats(produced=2).merge(PipelineStats(produced=1, skipped=4, failed=1))
    assert (total.produced, total.skipped, total.failed) == (3, 4, 1)


# =============================================================================
# Dataset steps
# =============================================================================

def test_gen_envs_writes_windows(tmp_path, small_config):
    calls = []
    stats = gen_envs(tmp_path / "ds", small_config, count=3, seed=5, on_progress=lambda i, n: calls.append((i, n)))
    assert stats.produced + stats.failed == 3
    dataset = Dataset.open(tmp_path / "ds")
    assert dataset.count == stats.produced
    assert (dataset.manifest.width, dataset.manifest.height) == (20, 20)
    assert dataset.manifest.state_grid.counts == (5, 5, 4)
    assert dataset.manifest.config_hash
    assert calls[-1] == (3, 3)


def test_gen_envs_augment_stores_eight_variants(tmp_path, small_config):
    stats = gen_envs(tmp_path / "ds", small_config, count=1, seed=0, with_augment=True)
    assert stats.produced == 8 * (1 - stats.failed)


def test_gen_envs_rejects_zero_count(tmp_path, small_config):
    with pytest.raises(ValidationError, match="count"):
        gen_envs(tmp_path / "ds", small_config, count=0, seed=0)


def test_labeling_skips_labeled_samples(labeled_root, small_config):
    stats = label_dataset(labeled_root, small_config)
    assert stats.produced == 0
    assert stats.skipped == Dataset.open(labeled_root).count


def test_interrupted_labeling_resumes_to_same_bytes(tmp_path, small_config):
    reference, resumed = tmp_path / "reference", tmp_path / "resumed"
    gen_envs(reference, small_config, count=3, seed=2)
    gen_envs(resumed, small_config, count=3, seed=2)
    label_dataset(reference, small_config)

    def interrupt(done, total):
        raise KeyboardInterrupt

    with pytest.raises(KeyboardInterrupt):
        label_dataset(resumed, small_config, on_progress=interrupt)
    assert Dataset.open(resumed).is_labeled(0)

    stats = label_dataset(resumed, small_config)
    assert stats.skipped == 1
    for entry in Dataset.open(reference).manifest.samples:
        assert (resumed / entry["vf"]).read_bytes() == (reference / entry["vf"]).read_bytes()


# =============================================================================
# Training and evaluation
# =============================================================================

def test_train_and_evaluate(labeled_root, small_config, tmp_path):
    out = tmp_path / "run"
    result = train_model(labeled_root, small_config, out)
    assert (out / "checkpoint.json").exists() and (out / "checkpoint.f32").exists()
    assert len(read_csv(out / "metrics.csv")) == small_config.train.epochs
    assert read_json(out / "checkpoint.json")["param_count"] == result.checkpoint.param_count
    assert read_json(out / "checkpoint.json")["r_robot"] == pytest.approx(small_config.reach.r_robot)

    slice_path = tmp_path / "slice.csv"
    metrics = evaluate_model(out / "checkpoint.json", labeled_root, "val", slice_theta=0.0, slice_path=slice_path)
    assert 0.0 <= metrics.iou <= 1.0
    rows = read_csv(slice_path)
    assert len(rows) == 25
    assert set(rows[0]) == {"x", "y", "v_true", "v_pred"}


def test_compare_losses_writes_both_runs(labeled_root, small_config, tmp_path):
    results = compare_losses(labeled_root, small_config, tmp_path / "compare")
    assert set(results) == {"rwmse", "mse"}
    rows = read_csv(tmp_path / "compare" / "comparison.csv")
    assert [r["loss"] for r in rows] == ["rwmse", "mse"]
    assert (tmp_path / "compare" / "mse" / "checkpoint.json").exists()


# =============================================================================
# Simulation and reports
# =============================================================================

def test_make_world_names(small_config):
    assert make_world("empty", small_config, 0).name == "empty"
    assert make_world("fig1", small_config, 0).name == "fig1"
    with pytest.raises(ValidationError, match="world"):
        make_world("maze", small_config, 0)


def test_simulate_writes_trace_and_summary(small_config, tmp_path):
    result = simulate(small_config, tmp_path, "empty", "none", 2, seed=0)
    trace = read_csv(tmp_path / "trace.csv")
    assert len(trace) == result.steps + 1
    summary = read_json(tmp_path / "episode.json")
    assert summary["kind"] == "episode"
    assert summary["outcome"] == result.outcome
    assert summary["min_terminal_value"] is None


def test_monte_carlo_report_and_tables(small_config, tmp_path):
    report = run_monte_carlo(small_config, tmp_path)
    assert len(report.rows) == 2
    assert len(read_csv(tmp_path / "episodes.csv")) == 2
    assert read_json(tmp_path / "report.json")["seeds"] == [0, 1]

    stats = build_report(tmp_path)
    assert stats.produced == 3
    (rates,) = read_csv(tmp_path / "success_rates.csv")
    assert rates["mode"] == "none" and "N=2" in rates
    outcomes = read_csv(tmp_path / "outcomes.csv")
    assert sum(int(outcomes[0][o]) for o in ("success", "collision", "stuck", "timeout", "solver-error")) == 2
