# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

"""
core/config.py

Run configuration: one JSON document with sections env / dynamics / reach /
train / mpc / sim and a top-level "language".

- load_run_config() reads the file, rejects unknown keys and wrong types
  with a dotted field path, and validates ranges. A missing file means
  defaults; an unreadable one is a ConfigError.
- Every section is a frozen dataclass; defaults are the desk-scale values.
- config_hash() fingerprints the resolved config; it is embedded in every
  artifact the pipeline writes.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from core.errors import ConfigError
from core.geom import EnvSpec
from core.logger import get_logger

logger = get_logger()

CONSTRAINT_MODES = ("none", "sdf", "dcbf", "ntc", "ntc-oracle")
LOSSES = ("rwmse", "mse")


def _require(condition: bool, field_path: str, message: str) -> None:
    if not condition:
        raise ConfigError(message, field=field_path)


def _check_range(value, field_path: str, count: int = 2, positive: bool = False) -> None:
    _require(len(value) == count, field_path, f"expected {count} values, got {len(value)}")
    if count == 2:
        _require(value[0] <= value[1], field_path, f"range is empty: {list(value)}")
    if positive:
        _require(all(v > 0 for v in value), field_path, f"values must be positive: {list(value)}")


@dataclass(frozen=True)
class EnvConfig:
    """
    World maps for simulation and local windows for the dataset.
    window_* describe dataset samples: square maps of side window_side
    centered on the origin, as seen by the planner.
    """
    world_size: tuple[float, float] = (10.0, 8.0)
    resolution: float = 0.06
    obstacle_count: tuple[int, int] = (3, 7)
    obstacle_size: tuple[float, float] = (0.3, 0.9)
    shapes: tuple[str, ...] = ("disc", "rect")
    start: tuple[float, float] = (1.0, 4.0)
    goal: tuple[float, float] = (9.0, 4.0)
    clearance: float = 1.0
    window_side: float = 6.0
    window_obstacle_count: tuple[int, int] = (1, 4)

    def validate(self) -> None:
        _check_range(self.world_size, "env.world_size", positive=True)
        _require(self.resolution > 0, "env.resolution", "must be positive")
        _check_range(self.obstacle_count, "env.obstacle_count")
        _require(self.obstacle_count[0] >= 0, "env.obstacle_count", "must be non-negative")
        _check_range(self.obstacle_size, "env.obstacle_size", positive=True)
        _require(len(self.shapes) > 0 and all(s in ("disc", "rect") for s in self.shapes),
                 "env.shapes", "must be a non-empty subset of [disc, rect]")
        _require(len(self.start) == 2, "env.start", "expected [x, y]")
        _require(len(self.goal) == 2, "env.goal", "expected [x, y]")
        _require(self.clearance >= 0, "env.clearance", "must be non-negative")
        _require(self.window_side > 0, "env.window_side", "must be positive")
        _check_range(self.window_obstacle_count, "env.window_obstacle_count")

    def world_spec(self, seed: int) -> EnvSpec:
        return EnvSpec(size=tuple(self.world_size), resolution=self.resolution, origin=(0.0, 0.0),
                       obstacle_count=tuple(self.obstacle_count), shapes=tuple(self.shapes),
                       obstacle_size=tuple(self.obstacle_size), corridor=True,
                       start=tuple(self.start), goal=tuple(self.goal), clearance=self.clearance, seed=seed)

    def window_spec(self, seed: int) -> EnvSpec:
        half = 0.5 * self.window_side
        return EnvSpec(size=(self.window_side, self.window_side), resolution=self.resolution,
                       origin=(-half, -half), obstacle_count=tuple(self.window_obstacle_count),
                       shapes=tuple(self.shapes), obstacle_size=tuple(self.obstacle_size),
                       corridor=False, start=(0.0, 0.0), goal=(0.0, 0.0), clearance=0.0, seed=seed)


@dataclass(frozen=True)
class DynamicsConfig:
    model: str = "dubins"
    params: dict = field(default_factory=dict)

    def validate(self) -> None:
        _require(self.model in ("dubins", "unicycle2"), "dynamics.model",
                 f"expected dubins or unicycle2, got '{self.model}'")
        for key, value in self.params.items():
            _require(isinstance(value, (int, float)) and not isinstance(value, bool) and value > 0,
                     f"dynamics.params.{key}", "expected a positive number")


@dataclass(frozen=True)
class ReachConfig:
    cfl: float = 0.5
    conv_tol: float = 1e-3
    max_sweeps: int = 2000
    r_robot: float = 0.3
    counts: tuple[int, ...] | None = None

    def validate(self) -> None:
        _require(0.0 < self.cfl < 1.0, "reach.cfl", f"must lie in (0, 1), got {self.cfl}")
        _require(self.conv_tol > 0, "reach.conv_tol", "must be positive")
        _require(self.max_sweeps >= 1, "reach.max_sweeps", "must be at least 1")
        _require(self.r_robot >= 0, "reach.r_robot", "must be non-negative")
        if self.counts is not None:
            _require(all(c >= 3 for c in self.counts), "reach.counts", "every axis needs at least 3 points")


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "rwmse"
    alpha: float = 1000.0
    beta: float = 10.0
    epochs: int = 30
    batch: int = 4
    lr: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.2
    subsample: float = 0.25
    hidden: tuple[int, ...] = (32, 32, 32, 16, 16, 16, 8, 8, 8)
    sine_layers: int = 3
    conv: tuple[tuple[int, int, int], ...] = ((8, 5, 2), (16, 3, 2), (32, 3, 2))
    fc_hidden: tuple[int, ...] = (512,)
    head_scale: float = 0.01

    def validate(self) -> None:
        _require(self.loss in LOSSES, "train.loss", f"expected one of {list(LOSSES)}, got '{self.loss}'")
        _require(self.alpha >= 0, "train.alpha", "must be non-negative")
        _require(self.beta > 0, "train.beta", "must be positive")
        _require(self.epochs >= 1, "train.epochs", "must be at least 1")
        _require(self.batch >= 1, "train.batch", "must be at least 1")
        _require(self.lr > 0, "train.lr", "must be positive")
        _require(0.0 <= self.val_fraction < 1.0, "train.val_fraction", "must lie in [0, 1)")
        _require(0.25 <= self.subsample <= 1.0, "train.subsample", "must lie in [0.25, 1]")
        _require(len(self.hidden) > 0 and all(h >= 1 for h in self.hidden), "train.hidden",
                 "needs at least one positive width")
        _require(0 <= self.sine_layers <= len(self.hidden), "train.sine_layers", "must lie in [0, len(hidden)]")
        _require(all(len(c) == 3 and min(c) >= 1 for c in self.conv), "train.conv",
                 "each layer is [channels, kernel, stride] with positive entries")
        _require(self.head_scale > 0, "train.head_scale", "must be positive")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 10
    dt: float = 0.1
    q: tuple[float, ...] | None = None
    r: tuple[float, ...] | None = None
    qn_scale: float = 10.0
    gamma: float = 0.3
    mode: str = "ntc"
    outer_iters: int = 10
    inner_iters: int = 100
    viol_tol: float = 1e-3
    grad_tol: float = 1e-4
    penalty_init: float = 10.0
    penalty_growth: float = 10.0

    def validate(self) -> None:
        _require(self.horizon >= 1, "mpc.horizon", "must be at least 1")
        _require(self.dt > 0, "mpc.dt", "must be positive")
        if self.q is not None:
            _require(all(v >= 0 for v in self.q), "mpc.q", "diagonal entries must be non-negative")
        if self.r is not None:
            _require(all(v >= 0 for v in self.r), "mpc.r", "diagonal entries must be non-negative")
        _require(self.qn_scale >= 0, "mpc.qn_scale", "must be non-negative")
        _require(0.0 < self.gamma <= 1.0, "mpc.gamma", f"must lie in (0, 1], got {self.gamma}")
        _require(self.mode in CONSTRAINT_MODES, "mpc.mode", f"expected one of {list(CONSTRAINT_MODES)}")
        _require(self.outer_iters >= 1 and self.inner_iters >= 1, "mpc.outer_iters",
                 "iteration caps must be at least 1")
        _require(self.viol_tol > 0 and self.grad_tol > 0, "mpc.viol_tol", "tolerances must be positive")
        _require(self.penalty_init > 0, "mpc.penalty_init", "must be positive")
        _require(self.penalty_growth > 1, "mpc.penalty_growth", "must exceed 1")


@dataclass(frozen=True)
class SimConfig:
    r_robot: float = 0.2
    planner_margin: float = 0.1
    goal_tol: float = 0.3
    stuck_steps: int = 50
    stuck_dist: float = 0.05
    max_steps: int = 2000
    substeps: int = 10
    modes: tuple[str, ...] = ("sdf", "dcbf", "ntc-oracle")
    horizons: tuple[int, ...] = (5, 10)
    episodes: int = 50
    seed: int = 0
    workers: int = 1

    def validate(self) -> None:
        _require(self.r_robot >= 0, "sim.r_robot", "must be non-negative")
        _require(self.planner_margin >= 0, "sim.planner_margin", "must be non-negative")
        _require(self.goal_tol > 0, "sim.goal_tol", "must be positive")
        _require(self.stuck_steps >= 1 and self.stuck_dist >= 0, "sim.stuck_steps", "invalid stuck rule")
        _require(self.max_steps >= 1, "sim.max_steps", "must be at least 1")
        _require(self.substeps >= 1, "sim.substeps", "must be at least 1")
        for mode in self.modes:
            base = mode.split(":", 1)[0]
            _require(base in CONSTRAINT_MODES and (base == "ntc" or ":" not in mode), "sim.modes",
                     f"unknown mode '{mode}'")
        _require(len(self.horizons) > 0 and all(h >= 1 for h in self.horizons), "sim.horizons",
                 "needs at least one horizon ≥ 1")
        _require(self.episodes >= 1, "sim.episodes", "must be at least 1")
        _require(self.workers >= 1, "sim.workers", "must be at least 1")


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    reach: ReachConfig = field(default_factory=ReachConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    language: str = "en"

    def validate(self) -> None:
        for section in (self.env, self.dynamics, self.reach, self.train, self.mpc, self.sim):
            section.validate()
        _require(isinstance(self.language, str) and self.language != "", "language", "must be a language code")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))


# =============================================================================
# Parsing
# =============================================================================

def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(value, default, path: str):
    """Check a JSON value against the type of the field default."""
    if dataclasses.is_dataclass(default):
        _require(isinstance(value, dict), path, "expected an object")
        return _build(type(default), value, path)
    if isinstance(default, bool):
        _require(isinstance(value, bool), path, "expected true or false")
        return value
    if isinstance(default, int):
        _require(isinstance(value, int) and not isinstance(value, bool), path, "expected an integer")
        return value
    if isinstance(default, float):
        _require(_is_number(value), path, "expected a number")
        return float(value)
    if isinstance(default, str):
        _require(isinstance(value, str), path, "expected a string")
        return value
    if isinstance(default, dict):
        _require(isinstance(value, dict), path, "expected an object")
        return dict(value)
    if isinstance(default, tuple) or default is None:
        if value is None and default is None:
            return None
        _require(isinstance(value, list), path, "expected a list")
        return _tuple_of(value, default, path)
    return value


def _tuple_of(items: list, default, path: str) -> tuple:
    sample = default[0] if default else None
    out = []
    for i, item in enumerate(items):
        item_path = f"{path}[{i}]"
        if isinstance(item, list):
            out.append(_tuple_of(item, sample if isinstance(sample, tuple) else None, item_path))
        elif isinstance(sample, str):
            _require(isinstance(item, str), item_path, "expected a string")
            out.append(item)
        elif isinstance(sample, int) and not isinstance(sample, bool):
            _require(isinstance(item, int) and not isinstance(item, bool), item_path, "expected an integer")
            out.append(item)
        else:
            _require(_is_number(item) or isinstance(item, str), item_path, "expected a number")
            out.append(float(item) if _is_number(item) and isinstance(sample, float) else item)
    return tuple(out)


def _build(cls, data: dict, prefix: str):
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError("unknown key", field=f"{prefix}.{key}" if prefix else key)
    values = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            path = f"{prefix}.{f.name}" if prefix else f.name
            values[f.name] = _coerce(data[f.name], getattr(defaults, f.name), path)
    return dataclasses.replace(defaults, **values)


def parse_run_config(data: dict) -> RunConfig:
    """RunConfig from an already-parsed JSON object, validated."""
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object")
    config = _build(RunConfig, data, "")
    config.validate()
    return config


def load_run_config(path: Path | str | None = None) -> RunConfig:
    """
    Read and validate a run config. None or a missing file yields defaults.
    """
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        logger.debug(f"config: {path} not found — using defaults")
        return RunConfig()
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read {path} — {type(e).__name__}: {e}") from e

    config = parse_run_config(data)
    logger.info(f"config: loaded {path} — hash={config_hash(config)}")
    return config


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(config: RunConfig) -> str:
    """First 16 hex digits of SHA-256 over the canonical resolved config."""
    return hashlib.sha256(canonical_json(config.to_dict()).encode("utf-8")).hexdigest()[:16]
