# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

"""
core/processor.py

Pipeline steps behind the CLI subcommands. Each step reads and writes
artifacts through core.storage and reports progress as
on_progress(current, total).

  gen_envs        random local windows → dataset (occ + sdf per sample)
  label_dataset   HJ value function per sample (resumable)
  train_model     hypernetwork training → checkpoint + metrics.csv
  compare_losses  RWMSE and MSE from the same init, side by side
  evaluate_model  IoU / confusion on a split, optional value slice CSV
  simulate        one closed-loop episode with its trace
  run_monte_carlo paired batch → report.json + episodes.csv
  build_report    episodes.csv → plot-ready summary tables
"""

import dataclasses
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from core.config import RunConfig, config_hash
from core.dynamics import make_model
from core.errors import GeomError, ReachError, ValidationError
from core.geom import augment, gen_random_env, occupancy_to_sdf
from core.hyper import Metrics, TrainResult, evaluate, hyper_forward_batch, main_forward, split_indices, train
from core.logger import get_logger
from core.reach import SolveOpts, StateGrid, build_failure_field, default_state_grid, solve_vi
from core.sim import (OUTCOMES, EpisodeResult, McReport, PlannerConfig, empty_world, fig1_scenario,
                      monte_carlo, random_world, run_episode, summarize)
from core.storage import (Dataset, DatasetManifest, load_checkpoint, read_csv, save_checkpoint, save_metrics,
                          save_report, save_trace, write_csv, write_json, make_header)

logger = get_logger()

ProgressFn = Optional[Callable[[int, int], None]]

WORLDS = ("fig1", "empty", "random")


@dataclass
class PipelineStats:
    """
    Counts for one pipeline step.
    produced: samples or artifacts written.
    skipped:  already present (e.g. samples labeled by an earlier run).
    failed:   attempted but not produced.
    """
    produced: int = 0
    skipped: int = 0
    failed: int = 0

    def merge(self, other: "PipelineStats") -> "PipelineStats":
        self.produced += other.produced
        self.skipped += other.skipped
        self.failed += other.failed
        return self


# =============================================================================
# Dataset
# =============================================================================

def gen_envs(out_dir: Path, config: RunConfig, count: int, seed: int, with_augment: bool = False,
             on_progress: ProgressFn = None) -> PipelineStats:
    """
    Random local windows (config.env.window_spec) with their SDFs.
    Window i uses seed + i; with_augment stores the 8 symmetric variants of each.
    """
    if count < 1:
        raise ValidationError("must be at least 1", field="count")
    stats = PipelineStats()
    env = config.env
    model = make_model(config.dynamics.model, config.dynamics.params)

    probe = gen_random_env(dataclasses.replace(env.window_spec(seed), obstacle_count=(0, 0)))
    grid = default_state_grid(model, occupancy_to_sdf(probe), config.reach.counts)
    manifest = DatasetManifest(model.id, grid, probe.width, probe.height, probe.resolution, probe.origin,
                               config.reach.r_robot, seed, config_hash(config))
    dataset = Dataset.create(out_dir, manifest)

    logger.info(f"gen_envs: {count} windows {probe.width}×{probe.height}@{probe.resolution} "
                f"seed={seed} augment={with_augment} → {out_dir}")

    for i in range(count):
        try:
            window = gen_random_env(env.window_spec(seed + i))
        except GeomError as e:
            stats.failed += 1
            logger.warning(f"gen_envs: window seed {seed + i} skipped — {e}")
            continue
        for variant in (augment([window]) if with_augment else [window]):
            dataset.add_sample(variant, occupancy_to_sdf(variant))
            stats.produced += 1
        if on_progress:
            on_progress(i + 1, count)

    dataset.save_manifest()
    logger.info(f"gen_envs: done — produced={stats.produced} failed={stats.failed}")
    return stats


def _label_one(task: tuple) -> tuple:
    """HJ label of one sample; top-level so worker processes can run it."""
    index, model_id, params, grid, sdf, r_robot, opts = task
    started = time.perf_counter()
    try:
        vf = solve_vi(make_model(model_id, params), build_failure_field(sdf, grid, r_robot), opts)
    except ReachError as e:
        return index, None, time.perf_counter() - started, str(e)
    return index, vf, time.perf_counter() - started, None


def label_dataset(root: Path, config: RunConfig, workers: int = 1, on_progress: ProgressFn = None) -> PipelineStats:
    """
    Solve the HJ value function of every unlabeled sample. Labels are
    committed one by one, so an interrupted run picks up where it stopped
    and ends with the same bytes as an uninterrupted one.
    """
    dataset = Dataset.open(root)
    m = dataset.manifest
    params = config.dynamics.params if config.dynamics.model == m.model_id else {}
    opts = SolveOpts(config.reach.cfl, config.reach.conv_tol, config.reach.max_sweeps)
    opts.validate()

    stats = PipelineStats()
    pending = [i for i in range(dataset.count) if not dataset.is_labeled(i)]
    stats.skipped = dataset.count - len(pending)
    logger.info(f"label_dataset: {root} — {len(pending)} to label, {stats.skipped} already labeled, "
                f"grid={m.state_grid.counts} workers={workers}")

    tasks = ((i, m.model_id, params, m.state_grid, dataset.sdf(i), m.r_robot, opts) for i in pending)

    def commit(done: int, result: tuple) -> None:
        index, vf, seconds, error = result
        if vf is None:
            stats.failed += 1
            logger.error(f"label_dataset: sample {index} failed after {seconds:.1f}s — {error}")
        else:
            dataset.write_label(index, vf)
            stats.produced += 1
            logger.info(f"label_dataset: sample {index} — sweeps={vf.sweeps} converged={vf.converged} "
                        f"hj_time={seconds:.2f}s")
        if on_progress:
            on_progress(done, len(pending))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for done, result in enumerate(pool.map(_label_one, tasks), start=1):
                commit(done, result)
    else:
        for done, task in enumerate(tasks, start=1):
            commit(done, _label_one(task))

    logger.info(f"label_dataset: done — labeled={stats.produced} skipped={stats.skipped} failed={stats.failed}")
    return stats


# =============================================================================
# Training and evaluation
# =============================================================================

def train_model(dataset_root: Path, config: RunConfig, out_dir: Path, init_seed: int | None = None,
                on_progress: ProgressFn = None) -> TrainResult:
    """Train on a labeled dataset; writes checkpoint.json/.f32 and metrics.csv to out_dir."""
    data = Dataset.open(dataset_root).labeled()
    result = train(data, config.train, init_seed=init_seed, on_progress=on_progress)
    out_dir = Path(out_dir)
    save_checkpoint(result.checkpoint, out_dir / "checkpoint.json", config_hash(config))
    save_metrics(result.history, out_dir / "metrics.csv")
    return result


def compare_losses(dataset_root: Path, config: RunConfig, out_dir: Path,
                   on_progress: ProgressFn = None) -> dict[str, TrainResult]:
    """
    RWMSE and MSE runs from the same seed and initialization, written to
    out_dir/rwmse and out_dir/mse plus a side-by-side comparison.csv.
    """
    out_dir = Path(out_dir)
    results: dict[str, TrainResult] = {}
    for loss in ("rwmse", "mse"):
        run_config = dataclasses.replace(config, train=config.train.replace(loss=loss))
        results[loss] = train_model(dataset_root, run_config, out_dir / loss, init_seed=config.train.seed,
                                    on_progress=on_progress)

    rows = []
    for loss, result in results.items():
        last = result.history[-1]
        rows.append([loss, f"{last.val_loss:.8g}", f"{last.val_iou:.6f}", last.tp, last.fn, last.fp, last.tn])
    write_csv(out_dir / "comparison.csv", ("loss", "val_loss", "val_iou", "tp", "fn", "fp", "tn"), rows)
    logger.info("compare_losses: " + " ".join(f"{r[0]} iou={r[2]}" for r in rows))
    return results


def _slice_rows(grid: StateGrid, truth: np.ndarray, pred: np.ndarray, theta: float) -> list[list]:
    """x, y, V, V̂ on the θ slice nearest to theta; other axes at their middle node."""
    axes = grid.axes()
    index = [slice(None), slice(None), int(np.argmin(np.abs(np.angle(np.exp(1j * (axes[2] - theta))))))]
    index += [c // 2 for c in grid.counts[3:]]
    truth_slice = truth.reshape(grid.shape)[tuple(index)]
    pred_slice = pred.reshape(grid.shape)[tuple(index)]
    rows = []
    for i, x in enumerate(axes[0]):
        for j, y in enumerate(axes[1]):
            rows.append([f"{x:.6f}", f"{y:.6f}", f"{truth_slice[i, j]:.6g}", f"{pred_slice[i, j]:.6g}"])
    return rows


def evaluate_model(ckpt_path: Path, dataset_root: Path, split: str = "val", slice_theta: float | None = None,
                   slice_path: Path | None = None) -> Metrics:
    """IoU and confusion of a checkpoint on a split; optional value slice of the split's first sample."""
    ckpt = load_checkpoint(ckpt_path)
    data = Dataset.open(dataset_root).labeled()
    metrics = evaluate(ckpt, data, split)
    logger.info(f"evaluate_model: split={split} iou={metrics.iou:.4f} loss={metrics.loss:.6g} "
                f"tp={metrics.tp} fn={metrics.fn} fp={metrics.fp} tn={metrics.tn}")

    if slice_theta is not None and slice_path is not None:
        train_idx, val_idx = split_indices(data.count, ckpt.seed,
                                           float(ckpt.train_config.get("val_fraction", 0.2)))
        first = int({"train": train_idx, "val": val_idx}.get(split, np.arange(data.count))[0])
        params = hyper_forward_batch(ckpt, data.sdf[first:first + 1])[0]
        pred = main_forward(ckpt.main_spec, params, data.grid.points())
        write_csv(slice_path, ("x", "y", "v_true", "v_pred"),
                  _slice_rows(data.grid, data.labels[first], pred, slice_theta))
        logger.info(f"evaluate_model: slice θ={slice_theta} of sample {first} → {slice_path}")
    return metrics


# =============================================================================
# Simulation
# =============================================================================

def make_world(name: str, config: RunConfig, seed: int):
    if name == "fig1":
        return fig1_scenario()
    if name == "empty":
        return empty_world(resolution=config.env.resolution, window_side=config.env.window_side)
    if name == "random":
        return random_world(config, seed)
    raise ValidationError(f"expected one of {list(WORLDS)}, got '{name}'", field="world")


def simulate(config: RunConfig, out_dir: Path, world_name: str, mode: str, horizon: int, seed: int,
             checkpoint_path: Path | None = None) -> EpisodeResult:
    """One episode; writes trace.csv and episode.json to out_dir."""
    checkpoint = load_checkpoint(checkpoint_path) if checkpoint_path else None
    world = make_world(world_name, config, seed)
    result = run_episode(world, PlannerConfig(mode, horizon, config, checkpoint), seed)

    out_dir = Path(out_dir)
    save_trace(result.trace, out_dir / "trace.csv")
    write_json(out_dir / "episode.json", make_header(
        "episode", config_hash(config), world=world.name, min_terminal_value=_json_float(result.min_terminal_value),
        **result.summary_row()))
    return result


def _json_float(value: float):
    return None if not np.isfinite(value) else float(value)


def run_monte_carlo(config: RunConfig, out_dir: Path, checkpoint_paths: dict[str, Path] | None = None,
                    on_progress: ProgressFn = None) -> McReport:
    checkpoints = {label: load_checkpoint(path) for label, path in (checkpoint_paths or {}).items()}
    report = monte_carlo(config, checkpoints, on_progress)
    save_report(report, out_dir)
    return report


_INT_FIELDS = ("horizon", "seed", "steps")
_FLOAT_FIELDS = ("path_m", "mean_solve_ms", "p95_solve_ms", "mean_hyper_ms")


def build_report(report_dir: Path) -> PipelineStats:
    """episodes.csv → success_rates.csv, solve_times.csv and outcomes.csv."""
    report_dir = Path(report_dir)
    rows = read_csv(report_dir / "episodes.csv")
    for row in rows:
        for key in _INT_FIELDS:
            row[key] = int(row[key])
        for key in _FLOAT_FIELDS:
            row[key] = float(row.get(key) or 0.0)

    modes = list(dict.fromkeys(r["mode"] for r in rows))
    horizons = sorted({r["horizon"] for r in rows})
    summary = summarize(rows, modes, horizons)

    write_csv(report_dir / "success_rates.csv", ["mode"] + [f"N={h}" for h in horizons],
              [[m] + [f"{summary[f'{m}|{h}']['success_rate']:.4f}" for h in horizons] for m in modes])
    write_csv(report_dir / "solve_times.csv",
              ("mode", "horizon", "mean_solve_ms", "median_solve_ms", "p95_solve_ms", "mean_hyper_ms"),
              [[e["mode"], e["horizon"], f"{e['mean_solve_ms']:.4f}", f"{e['median_solve_ms']:.4f}",
                f"{e['p95_solve_ms']:.4f}", f"{e['mean_hyper_ms']:.4f}"] for e in summary.values()])
    write_csv(report_dir / "outcomes.csv", ("mode", "horizon") + OUTCOMES,
              [[e["mode"], e["horizon"]] + [e["outcomes"][o] for o in OUTCOMES] for e in summary.values()])

    logger.info(f"build_report: {len(rows)} episodes, {len(summary)} mode/horizon groups → {report_dir}")
    return PipelineStats(produced=3)
