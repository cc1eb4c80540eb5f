# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

"""
core/sim.py

Closed-loop 2D navigation with local observation windows.

Per control step:
  extract_window → occupancy_to_sdf → (ntc: hyper_forward) → mpc.solve
  → apply u_0 with RK4 sub-steps at δt/substeps → adjudicate

Adjudication uses the global SDF at every sub-step:
  collision  SDF(position) < r_robot
  success    within goal_tol of the goal (position only)
  stuck      < stuck_dist displacement over stuck_steps control steps
  timeout    max_steps control steps
  solver-error  the planner raised

Planners plan with r_robot + planner_margin; adjudication uses r_robot.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from core.config import RunConfig, config_hash
from core.dynamics import DynamicsModel, make_model, step_rk4
from core.errors import SafeSetError, ValidationError
from core.geom import (OccupancyGrid, SdfGrid, add_rect, extract_window, gen_random_env, make_empty_grid,
                       occupancy_to_sdf, sample_sdf)
from core.hyper import Checkpoint, hyper_forward
from core.logger import get_logger
from core.mpc import ConstraintContext, make_problem, shift_controls, solve
from core.reach import (DEFAULT_COUNTS, SolveOpts, StateGrid, ValueFunction, build_failure_field,
                        solve_vi)

logger = get_logger()

OUTCOMES = ("success", "collision", "stuck", "timeout", "solver-error")

TRACE_FIELDS = ("step", "x", "y", "theta", "sdf", "terminal_value", "status", "iters", "violation", "solve_ms")

EPISODE_FIELDS = ("mode", "horizon", "seed", "env_hash", "outcome", "steps", "path_m",
                  "mean_solve_ms", "p95_solve_ms", "mean_hyper_ms")


@dataclass(frozen=True, eq=False)
class World:
    """Global map with its SDF, a start pose (x, y, θ) and a goal position."""
    grid: OccupancyGrid
    sdf: SdfGrid
    start: tuple[float, float, float]
    goal: tuple[float, float]
    window_side: float = 6.0
    name: str = "world"

    def validate(self, r_robot: float) -> None:
        for label, (x, y) in (("start", self.start[:2]), ("goal", self.goal)):
            clearance = sample_sdf(self.sdf, x, y)
            if clearance <= r_robot:
                raise ValidationError(f"{label} clearance {clearance:.3f} m does not exceed r_robot {r_robot} m",
                                      field=f"world.{label}")

    @property
    def env_hash(self) -> str:
        return self.grid.fingerprint()


def make_world(grid: OccupancyGrid, start, goal, window_side: float = 6.0, name: str = "world") -> World:
    return World(grid, occupancy_to_sdf(grid), tuple(float(v) for v in start),
                 tuple(float(v) for v in goal), window_side, name)


def random_world(config: RunConfig, seed: int) -> World:
    """Random obstacle field from env config; start heading points at the goal."""
    env = config.env
    grid = gen_random_env(env.world_spec(seed))
    heading = math.atan2(env.goal[1] - env.start[1], env.goal[0] - env.start[0])
    return make_world(grid, (env.start[0], env.start[1], heading), env.goal, env.window_side, f"random-{seed}")


def empty_world(distance: float = 3.0, resolution: float = 0.06, window_side: float = 6.0) -> World:
    """Obstacle-free map with the goal `distance` meters straight ahead."""
    width = int(round((distance + 6.0) / resolution))
    height = int(round(6.0 / resolution))
    grid = make_empty_grid(width, height, resolution, (-3.0, -3.0))
    return make_world(grid, (0.0, 0.0, 0.0), (distance, 0.0), window_side, "empty")


# Wall scenario geometry (m). The wall face is 3 m ahead of the start: the
# default Dubins turn radius is v / omega_max = 2 m, and the oracle planner
# needs grid-resolution slack on top of that to clear the wall end.
FIG1_EXTENT = (-2.1, 9.9, -5.7, 5.7)
FIG1_RESOLUTION = 0.06
FIG1_SIDE_WALLS = (5.0, 5.3)
FIG1_WALL = (2.5, -1.2, 2.8, 1.2)
FIG1_START = (-0.5, 0.3, 0.0)
FIG1_GOAL = (8.0, 0.0)


def fig1_scenario() -> World:
    """
    Corridor 10 m wide with a 2.4 m wall segment across the robot's lane,
    3 m ahead of a robot heading straight at it. The goal lies behind the
    wall; getting there needs a detour that starts well before the wall
    enters a 0.5 s lookahead.
    """
    x0, x1, y0, y1 = FIG1_EXTENT
    width = int(round((x1 - x0) / FIG1_RESOLUTION))
    height = int(round((y1 - y0) / FIG1_RESOLUTION))
    grid = make_empty_grid(width, height, FIG1_RESOLUTION, (x0, y0))
    inner, outer = FIG1_SIDE_WALLS
    grid = add_rect(grid, x0, inner, x1, outer)
    grid = add_rect(grid, x0, -outer, x1, -inner)
    grid = add_rect(grid, *FIG1_WALL)
    return make_world(grid, FIG1_START, FIG1_GOAL, 6.0, "fig1")


# =============================================================================
# Planner and oracle
# =============================================================================

@dataclass
class PlannerConfig:
    """One planner: constraint mode and horizon, plus what the mode needs."""
    mode: str
    horizon: int
    config: RunConfig = field(default_factory=RunConfig)
    checkpoint: Checkpoint | None = None
    oracle: ValueFunction | None = None

    @property
    def model(self) -> DynamicsModel:
        return make_model(self.config.dynamics.model, self.config.dynamics.params)

    @property
    def r_plan(self) -> float:
        return self.config.sim.r_robot + self.config.sim.planner_margin

    @property
    def base_mode(self) -> str:
        return self.mode.split(":", 1)[0]


def oracle_grid(world: World, model: DynamicsModel) -> StateGrid:
    """State grid over the whole map with the desk-scale position spacing."""
    default = DEFAULT_COUNTS[model.id]
    spacing = world.window_side / (default[0] - 1)
    x_min, x_max, y_min, y_max = world.sdf.center_extent()
    nx = max(3, int(round((x_max - x_min) / spacing)) + 1)
    ny = max(3, int(round((y_max - y_min) / spacing)) + 1)
    mins = [x_min, y_min, -np.pi] + [float(model.x_lo[d]) for d in range(3, model.n)]
    maxs = [x_max, y_max, np.pi] + [float(model.x_hi[d]) for d in range(3, model.n)]
    return StateGrid(tuple(mins), tuple(maxs), (nx, ny) + tuple(default[2:]), tuple(model.periodic))


def compute_oracle(world: World, model: DynamicsModel, config: RunConfig, r_plan: float) -> ValueFunction:
    """HJ value function of the global map, used by the ntc-oracle planner."""
    started = time.perf_counter()
    grid = oracle_grid(world, model)
    failure = build_failure_field(world.sdf, grid, r_plan)
    opts = SolveOpts(config.reach.cfl, config.reach.conv_tol, config.reach.max_sweeps)
    vf = solve_vi(model, failure, opts)
    logger.info(f"compute_oracle [{world.name}]: grid={grid.counts} sweeps={vf.sweeps} "
                f"time={time.perf_counter() - started:.2f}s")
    return vf


def check_label_radius(checkpoint: Checkpoint, r_plan: float) -> None:
    """The network must have been trained on labels solved with the planning radius."""
    if not math.isclose(checkpoint.r_robot, r_plan, abs_tol=1e-6):
        raise ValidationError(
            f"checkpoint labels use r_robot {checkpoint.r_robot:g} m, planner uses {r_plan:g} m "
            f"(set reach.r_robot to sim.r_robot + sim.planner_margin and relabel)",
            field="reach.r_robot",
        )


def initial_state(model: DynamicsModel, start: tuple[float, float, float]) -> np.ndarray:
    """Start pose with zero speed and turn rate for the unicycle."""
    return np.array(list(start[:3]) + [0.0] * (model.n - 3))


# =============================================================================
# Episode
# =============================================================================

@dataclass
class EpisodeResult:
    outcome: str
    steps: int
    path_length: float
    solve_times: list[float]
    hyper_times: list[float]
    trace: list[dict]
    mode: str = ""
    horizon: int = 0
    seed: int = 0
    env_hash: str = ""

    @property
    def min_terminal_value(self) -> float:
        values = [row["terminal_value"] for row in self.trace if np.isfinite(row["terminal_value"])]
        return float(min(values)) if values else float("nan")

    def summary_row(self) -> dict:
        solve_ms = np.asarray(self.solve_times) * 1000.0
        hyper_ms = np.asarray(self.hyper_times) * 1000.0
        return {
            "mode": self.mode, "horizon": self.horizon, "seed": self.seed, "env_hash": self.env_hash,
            "outcome": self.outcome, "steps": self.steps, "path_m": round(self.path_length, 6),
            "mean_solve_ms": round(float(solve_ms.mean()), 4) if solve_ms.size else 0.0,
            "p95_solve_ms": round(float(np.percentile(solve_ms, 95)), 4) if solve_ms.size else 0.0,
            "mean_hyper_ms": round(float(hyper_ms.mean()), 4) if hyper_ms.size else 0.0,
        }


def _reference(model: DynamicsModel, x: np.ndarray, goal: tuple[float, float]) -> np.ndarray:
    ref = np.zeros(model.n)
    ref[0], ref[1] = goal
    ref[2] = math.atan2(goal[1] - x[1], goal[0] - x[0])
    return ref


def _trace_row(step: int, x: np.ndarray, sdf_value: float, terminal: float, status: str,
               iters: int, violation: float, solve_ms: float) -> dict:
    return {"step": step, "x": float(x[0]), "y": float(x[1]), "theta": float(x[2]), "sdf": float(sdf_value),
            "terminal_value": terminal, "status": status, "iters": iters,
            "violation": violation, "solve_ms": solve_ms}


def run_episode(world: World, planner: PlannerConfig, seed: int = 0) -> EpisodeResult:
    """
    Closed-loop episode; deterministic for (world, planner, seed).
    Planner exceptions end the episode with outcome solver-error.
    """
    sim = planner.config.sim
    model = planner.model
    mode = planner.base_mode
    world.validate(sim.r_robot)

    if mode == "ntc" and planner.checkpoint is None:
        raise ValidationError("mode ntc needs a checkpoint", field="planner.checkpoint")
    if mode == "ntc":
        check_label_radius(planner.checkpoint, planner.r_plan)
    oracle = planner.oracle
    if mode == "ntc-oracle" and oracle is None:
        oracle = compute_oracle(world, model, planner.config, planner.r_plan)

    problem = make_problem(model, planner.horizon, mode, planner.config.mpc)
    dt = problem.dt
    sub_dt = dt / sim.substeps

    x = initial_state(model, world.start)
    warm = None
    path = 0.0
    solve_times: list[float] = []
    hyper_times: list[float] = []
    trace: list[dict] = []
    positions = [x[:2].copy()]
    outcome = "timeout"
    steps = 0

    for k in range(sim.max_steps):
        window = extract_window(world.grid, (x[0], x[1]), world.window_side)
        local_sdf = occupancy_to_sdf(window)
        ctx_args = {"sdf": local_sdf, "r_robot": planner.r_plan}
        try:
            if mode == "ntc":
                started = time.perf_counter()
                params = hyper_forward(planner.checkpoint, local_sdf)
                hyper_times.append(time.perf_counter() - started)
                ctx_args.update(main_spec=planner.checkpoint.main_spec, params=params,
                                frame_origin=window.center)
            elif mode == "ntc-oracle":
                ctx_args["vf"] = oracle
            result = solve(problem, ConstraintContext(**ctx_args), x, _reference(model, x, world.goal), warm)
        except SafeSetError as e:
            logger.warning(f"run_episode [{world.name} {planner.mode} N={planner.horizon}]: "
                           f"planner failed at step {k} — {type(e).__name__}: {e}")
            outcome = "solver-error"
            break

        solve_times.append(result.wall_time)
        terminal = result.terminal_value if result.terminal_value is not None else float("nan")
        trace.append(_trace_row(k, x, sample_sdf(world.sdf, x[0], x[1]), terminal, result.status,
                                result.iterations, result.max_violation, result.wall_time * 1000.0))

        u = result.first_control
        finished = None
        for _ in range(sim.substeps):
            x_next = step_rk4(model, x, u, sub_dt)
            path += float(np.hypot(x_next[0] - x[0], x_next[1] - x[1]))
            x = x_next
            if sample_sdf(world.sdf, x[0], x[1]) < sim.r_robot:
                finished = "collision"
                break
            if math.hypot(x[0] - world.goal[0], x[1] - world.goal[1]) <= sim.goal_tol:
                finished = "success"
                break

        steps = k + 1
        warm = shift_controls(result.controls)
        positions.append(x[:2].copy())
        if finished:
            outcome = finished
            break
        if steps >= sim.stuck_steps and \
                np.hypot(*(positions[-1] - positions[-1 - sim.stuck_steps])) < sim.stuck_dist:
            outcome = "stuck"
            break

    trace.append(_trace_row(steps, x, sample_sdf(world.sdf, x[0], x[1]), float("nan"), "", 0, 0.0, 0.0))
    logger.info(f"run_episode [{world.name} {planner.mode} N={planner.horizon}]: {outcome} — "
                f"steps={steps} path={path:.2f}m")
    return EpisodeResult(outcome, steps, path, solve_times, hyper_times, trace,
                         planner.mode, planner.horizon, seed, world.env_hash)


# =============================================================================
# Monte Carlo
# =============================================================================

@dataclass
class McReport:
    """
    rows:    one summary row per episode (EPISODE_FIELDS)
    summary: per "mode|horizon" key: episodes, successes, success_rate,
             solve-time statistics (ms)
    """
    rows: list[dict]
    summary: dict
    seeds: list[int]
    env_hashes: list[str]
    config_hash: str

    def success_rate(self, mode: str, horizon: int) -> float:
        return self.summary[f"{mode}|{horizon}"]["success_rate"]


def _resolve_checkpoint(mode: str, checkpoints: dict[str, Checkpoint],
                        r_plan: float | None = None) -> Checkpoint | None:
    """Checkpoint of an ntc mode; with r_plan given, its label radius is checked too."""
    if not mode.startswith("ntc") or mode == "ntc-oracle":
        return None
    label = mode.split(":", 1)[1] if ":" in mode else None
    if label is None:
        if len(checkpoints) != 1:
            raise ValidationError("mode ntc needs exactly one checkpoint (use ntc:<label> for several)",
                                  field="sim.modes")
        checkpoint = next(iter(checkpoints.values()))
    elif label in checkpoints:
        checkpoint = checkpoints[label]
    else:
        raise ValidationError(f"no checkpoint labeled '{label}'", field="sim.modes")
    if checkpoint is not None and r_plan is not None:
        check_label_radius(checkpoint, r_plan)
    return checkpoint


def _run_world(task: tuple) -> list[dict]:
    """All (mode, horizon) episodes on one world; top-level for process pools."""
    config, seed, modes, horizons, checkpoints = task
    world = random_world(config, seed)
    model = make_model(config.dynamics.model, config.dynamics.params)
    oracle = None
    if "ntc-oracle" in modes:
        oracle = compute_oracle(world, model, config, config.sim.r_robot + config.sim.planner_margin)
    rows = []
    for mode in modes:
        for horizon in horizons:
            planner = PlannerConfig(mode, horizon, config, _resolve_checkpoint(mode, checkpoints), oracle)
            try:
                rows.append(run_episode(world, planner, seed).summary_row())
            except ValidationError as e:
                logger.warning(f"monte_carlo: world {seed} skipped for {mode} — {e}")
                rows.append({"mode": mode, "horizon": horizon, "seed": seed, "env_hash": world.env_hash,
                             "outcome": "solver-error", "steps": 0, "path_m": 0.0, "mean_solve_ms": 0.0,
                             "p95_solve_ms": 0.0, "mean_hyper_ms": 0.0})
    return rows


def summarize(rows: list[dict], modes: list[str], horizons: list[int]) -> dict:
    """Per mode × horizon success rate and solve-time statistics."""
    summary = {}
    for mode in modes:
        for horizon in horizons:
            group = [r for r in rows if r["mode"] == mode and r["horizon"] == horizon]
            successes = sum(1 for r in group if r["outcome"] == "success")
            solve = np.array([r["mean_solve_ms"] for r in group if r["steps"] > 0])
            p95 = np.array([r["p95_solve_ms"] for r in group if r["steps"] > 0])
            hyper = np.array([r["mean_hyper_ms"] for r in group if r["mean_hyper_ms"] > 0])
            summary[f"{mode}|{horizon}"] = {
                "mode": mode, "horizon": horizon, "episodes": len(group), "successes": successes,
                "success_rate": successes / len(group) if group else 0.0,
                "outcomes": {o: sum(1 for r in group if r["outcome"] == o) for o in OUTCOMES},
                "mean_solve_ms": float(solve.mean()) if solve.size else 0.0,
                "median_solve_ms": float(np.median(solve)) if solve.size else 0.0,
                "p95_solve_ms": float(p95.max()) if p95.size else 0.0,
                "mean_hyper_ms": float(hyper.mean()) if hyper.size else 0.0,
            }
    return summary


def monte_carlo(config: RunConfig, checkpoints: dict[str, Checkpoint] | None = None,
                on_progress: Callable[[int, int], None] | None = None) -> McReport:
    """
    Paired Monte Carlo: every mode and horizon runs on the same sequence of
    worlds (seeds sim.seed .. sim.seed + episodes − 1). Worlds run in
    parallel across sim.workers processes.
    """
    config.validate()
    sim = config.sim
    checkpoints = checkpoints or {}
    modes, horizons = list(sim.modes), list(sim.horizons)
    r_plan = sim.r_robot + sim.planner_margin
    for mode in modes:
        _resolve_checkpoint(mode, checkpoints, r_plan)
    seeds = [sim.seed + i for i in range(sim.episodes)]
    tasks = [(config, seed, modes, horizons, checkpoints) for seed in seeds]

    rows: list[dict] = []
    logger.info(f"monte_carlo: modes={modes} horizons={horizons} episodes={sim.episodes} workers={sim.workers}")
    if sim.workers > 1:
        with ProcessPoolExecutor(max_workers=sim.workers) as pool:
            for done, world_rows in enumerate(pool.map(_run_world, tasks), start=1):
                rows.extend(world_rows)
                if on_progress:
                    on_progress(done, len(tasks))
    else:
        for done, task in enumerate(tasks, start=1):
            rows.extend(_run_world(task))
            if on_progress:
                on_progress(done, len(tasks))

    order = {mode: i for i, mode in enumerate(modes)}
    rows.sort(key=lambda r: (order[r["mode"]], r["horizon"], r["seed"]))
    env_hashes = [next(r["env_hash"] for r in rows if r["seed"] == seed) for seed in seeds]

    summary = summarize(rows, modes, horizons)
    for key, entry in summary.items():
        logger.info(f"monte_carlo: {key} — success {entry['successes']}/{entry['episodes']} "
                    f"({entry['success_rate']:.0%}) mean_solve={entry['mean_solve_ms']:.1f}ms")
    return McReport(rows, summary, seeds, env_hashes, config_hash(config))
