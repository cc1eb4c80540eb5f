# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

"""
core/mpc.py

Horizon-N MPC with pluggable safety constraints.

Decision variables are the controls u_0..u_{N−1} only (single shooting);
states come from the Euler rollout. Safety constraints h(x) ≥ 0:

  none        no safety constraint
  sdf         d(x_i) ≥ 0                          i = 0..N
  dcbf        d(x_i) − d(x_{i−1}) + γ·d(x_{i−1}) ≥ 0   i = 1..N
  ntc         d(x_i) ≥ 0 for i = 0..N−1  and  V̂(x_N) ≥ 0   (main network)
  ntc-oracle  d(x_i) ≥ 0 for i = 0..N−1  and  V(x_N) ≥ 0    (HJ value function)

with d(x) = SDF(x_p, y_p) − r_robot.

Solver:
  outer  PHR augmented Lagrangian, λ ← max(0, λ − μh), μ ×growth when the
         violation does not shrink enough
  inner  projected gradient on the control box, Barzilai-Borwein trial step,
         monotone Armijo backtracking on the augmented merit
  gradients by a reverse (adjoint) sweep through the rollout
"""

import time
from dataclasses import dataclass, field

import numpy as np

from core.config import MpcConfig
from core.dynamics import DynamicsModel, step_euler, step_euler_linearized, wrap_angle
from core.errors import MpcError
from core.geom import SdfGrid, sdf_value_and_gradient
from core.hyper import MainNetEvaluator, MainNetSpec
from core.logger import get_logger
from core.reach import ValueFunction, value_and_gradient

logger = get_logger()

MODES = ("none", "sdf", "dcbf", "ntc", "ntc-oracle")

STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max-iter"
STATUS_INFEASIBLE = "infeasible-soft"

# Armijo sufficient-decrease constant and backtracking factor
_ARMIJO_C = 1e-4
_BACKTRACK = 0.5
_MAX_BACKTRACKS = 40

# Barzilai-Borwein step safeguards
_BB_MIN, _BB_MAX = 1e-8, 1e4


@dataclass(frozen=True)
class SolverOptions:
    outer_iters: int = 10
    inner_iters: int = 100
    viol_tol: float = 1e-3
    grad_tol: float = 1e-4
    penalty_init: float = 10.0
    penalty_growth: float = 10.0


@dataclass(frozen=True, eq=False)
class MpcProblem:
    """Diagonal weights q (n,), r (m,), qn (n,)."""
    model: DynamicsModel
    horizon: int
    q: np.ndarray
    r: np.ndarray
    qn: np.ndarray
    dt: float = 0.1
    mode: str = "sdf"
    gamma: float = 0.3
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        for name in ("q", "r", "qn"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.horizon < 1:
            raise MpcError(f"horizon must be at least 1, got {self.horizon}")
        if not self.dt > 0:
            raise MpcError(f"dt must be positive, got {self.dt}")
        if self.q.shape != (self.model.n,) or self.qn.shape != (self.model.n,) or self.r.shape != (self.model.m,):
            raise MpcError(f"weight shapes q{self.q.shape} r{self.r.shape} qn{self.qn.shape} do not match "
                           f"{self.model.id} (n={self.model.n}, m={self.model.m})")
        if np.any(self.q < 0) or np.any(self.r < 0) or np.any(self.qn < 0):
            raise MpcError("weight diagonals must be non-negative")
        if self.mode not in MODES:
            raise MpcError(f"unknown constraint mode '{self.mode}'")
        if not 0.0 < self.gamma <= 1.0:
            raise MpcError(f"gamma must lie in (0, 1], got {self.gamma}")


def default_weights(model: DynamicsModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Q = diag(1, 1, 0.1[, 0.1, 0.1]), R = 0.1·I, Q_N = 10·Q."""
    q = np.array([1.0, 1.0] + [0.1] * (model.n - 2))
    return q, np.full(model.m, 0.1), 10.0 * q


def make_problem(model: DynamicsModel, horizon: int, mode: str = "sdf", config: MpcConfig | None = None) -> MpcProblem:
    """Problem from an MpcConfig (defaults when None); horizon and mode given explicitly."""
    config = config or MpcConfig()
    q_default, r_default, _ = default_weights(model)
    q = np.asarray(config.q, dtype=np.float64) if config.q is not None else q_default
    r = np.asarray(config.r, dtype=np.float64) if config.r is not None else r_default
    options = SolverOptions(config.outer_iters, config.inner_iters, config.viol_tol, config.grad_tol,
                            config.penalty_init, config.penalty_growth)
    return MpcProblem(model, horizon, q, r, config.qn_scale * q, config.dt, mode, config.gamma, options)


@dataclass(frozen=True, eq=False)
class ConstraintContext:
    """
    Perception and terminal-set data for one solve.

    sdf:          local SDF (all modes except none)
    main_spec +
    params:       main network (ntc), evaluated in the frame whose origin is
                  frame_origin (positions are shifted by −frame_origin)
    vf:           HJ value function in world coordinates (ntc-oracle)
    r_robot:      radius subtracted from SDF distances
    """
    sdf: SdfGrid | None = None
    main_spec: MainNetSpec | None = None
    params: np.ndarray | None = None
    vf: ValueFunction | None = None
    r_robot: float = 0.0
    frame_origin: tuple[float, float] = (0.0, 0.0)
    evaluator: MainNetEvaluator | None = None

    def __post_init__(self):
        if self.evaluator is None and self.main_spec is not None and self.params is not None:
            object.__setattr__(self, "evaluator", MainNetEvaluator(self.main_spec, self.params))

    def require(self, mode: str) -> None:
        if mode == "none":
            return
        if self.sdf is None:
            raise MpcError(f"mode {mode} needs an SDF in the constraint context")
        if mode == "ntc" and self.evaluator is None:
            raise MpcError("mode ntc needs main_spec and params in the constraint context")
        if mode == "ntc-oracle" and self.vf is None:
            raise MpcError("mode ntc-oracle needs a value function in the constraint context")


@dataclass
class SolveResult:
    status: str
    controls: np.ndarray
    states: np.ndarray
    objective: float
    max_violation: float
    iterations: int
    outer_iterations: int
    wall_time: float
    terminal_value: float | None = None
    merit_history: list[list[float]] = field(default_factory=list)

    @property
    def first_control(self) -> np.ndarray:
        return self.controls[0]


# =============================================================================
# Rollout, objective, constraints
# =============================================================================

def rollout(model: DynamicsModel, x0, controls, dt: float = 0.1) -> np.ndarray:
    """States x_0..x_N with x_{i+1} = step_euler(x_i, u_i, δt)."""
    controls = np.asarray(controls, dtype=np.float64)
    states = np.empty((len(controls) + 1, model.n))
    states[0] = np.asarray(x0, dtype=np.float64)
    for i, u in enumerate(controls):
        states[i + 1] = step_euler(model, states[i], u, dt)
    return states


def _rollout_linearized(problem: MpcProblem, x0: np.ndarray, controls: np.ndarray):
    model, n = problem.model, problem.model.n
    states = np.empty((len(controls) + 1, n))
    fx = np.empty((len(controls), n, n))
    fu = np.empty((len(controls), n, model.m))
    states[0] = x0
    for i, u in enumerate(controls):
        states[i + 1], fx[i], fu[i] = step_euler_linearized(model, states[i], u, problem.dt)
    return states, fx, fu


def _residuals(problem: MpcProblem, states: np.ndarray, x_ref) -> np.ndarray:
    x_ref = np.broadcast_to(np.asarray(x_ref, dtype=np.float64), states.shape)
    e = states - x_ref
    e[:, 2] = wrap_angle(e[:, 2])
    return e


def objective(problem: MpcProblem, states, controls, x_ref) -> float:
    """p(x_N) + Σ_{i<N} q(x_i, u_i); x_ref is one state or one per step."""
    states = np.asarray(states, dtype=np.float64)
    controls = np.asarray(controls, dtype=np.float64)
    if states.shape != (problem.horizon + 1, problem.model.n) or controls.shape != (problem.horizon, problem.model.m):
        raise MpcError(f"expected states {(problem.horizon + 1, problem.model.n)} and controls "
                       f"{(problem.horizon, problem.model.m)}, got {states.shape} and {controls.shape}")
    e = _residuals(problem, states, x_ref)
    stage = np.sum(e[:-1] ** 2 * problem.q) + np.sum(controls ** 2 * problem.r)
    return float(stage + np.sum(e[-1] ** 2 * problem.qn))


def _objective_gradients(problem: MpcProblem, states, controls, x_ref):
    e = _residuals(problem, states, x_ref)
    gx = 2.0 * e * problem.q
    gx[-1] = 2.0 * e[-1] * problem.qn
    gu = 2.0 * controls * problem.r
    return gx, gu


def _distances(ctx: ConstraintContext, states: np.ndarray):
    value, gx, gy = sdf_value_and_gradient(ctx.sdf, states[:, 0], states[:, 1])
    return value - ctx.r_robot, gx, gy


def _terminal(problem: MpcProblem, ctx: ConstraintContext, x_n: np.ndarray) -> tuple[float, np.ndarray]:
    if problem.mode == "ntc":
        local = x_n.copy()
        local[0] -= ctx.frame_origin[0]
        local[1] -= ctx.frame_origin[1]
        return ctx.evaluator.value_and_grad(local)
    return value_and_gradient(ctx.vf, x_n)


def _constraints(problem: MpcProblem, ctx: ConstraintContext, states: np.ndarray,
                 with_jacobian: bool) -> tuple[np.ndarray, np.ndarray | None]:
    """h (K,) and optionally ∂h/∂states (K, N+1, n)."""
    mode = problem.mode
    ctx.require(mode)
    n_steps = len(states)
    if mode == "none":
        return np.zeros(0), (np.zeros((0, n_steps, problem.model.n)) if with_jacobian else None)

    d, gx, gy = _distances(ctx, states)
    rows: list[float] = []
    jac: list[np.ndarray] = []

    def stage_row(i: int) -> np.ndarray:
        row = np.zeros((n_steps, problem.model.n))
        row[i, 0], row[i, 1] = gx[i], gy[i]
        return row

    if mode == "sdf":
        for i in range(n_steps):
            rows.append(d[i])
            if with_jacobian:
                jac.append(stage_row(i))
    elif mode == "dcbf":
        keep = 1.0 - problem.gamma
        for i in range(1, n_steps):
            rows.append(d[i] - keep * d[i - 1])
            if with_jacobian:
                jac.append(stage_row(i) - keep * stage_row(i - 1))
    else:
        for i in range(n_steps - 1):
            rows.append(d[i])
            if with_jacobian:
                jac.append(stage_row(i))
        value, grad = _terminal(problem, ctx, states[-1])
        rows.append(value)
        if with_jacobian:
            row = np.zeros((n_steps, problem.model.n))
            row[-1] = grad
            jac.append(row)

    h = np.asarray(rows, dtype=np.float64)
    return h, (np.stack(jac) if with_jacobian else None)


def eval_constraints(problem: MpcProblem, ctx: ConstraintContext, states) -> np.ndarray:
    """Constraint values h (satisfied when ≥ 0) in the order documented above."""
    h, _ = _constraints(problem, ctx, np.asarray(states, dtype=np.float64), with_jacobian=False)
    return h


def shift_controls(controls: np.ndarray) -> np.ndarray:
    """Warm start for the next step: drop u_0, repeat the last control."""
    controls = np.asarray(controls, dtype=np.float64)
    return np.vstack([controls[1:], controls[-1:]])


# =============================================================================
# Solver
# =============================================================================

class _AugmentedMerit:
    """J(U) + Σ (max(0, λ − μh)² − λ²) / 2μ and its gradient."""

    def __init__(self, problem: MpcProblem, ctx: ConstraintContext, x0: np.ndarray, x_ref):
        self.problem = problem
        self.ctx = ctx
        self.x0 = x0
        self.x_ref = x_ref
        self.lam = None
        self.mu = problem.options.penalty_init

    def value(self, controls: np.ndarray) -> float:
        states = rollout(self.problem.model, self.x0, controls, self.problem.dt)
        h, _ = _constraints(self.problem, self.ctx, states, with_jacobian=False)
        return self._merit(states, controls, h)

    def _merit(self, states, controls, h) -> float:
        cost = objective(self.problem, states, controls, self.x_ref)
        if len(h) == 0:
            return cost
        shifted = np.maximum(0.0, self.lam - self.mu * h)
        return cost + float(np.sum(shifted ** 2 - self.lam ** 2) / (2.0 * self.mu))

    def value_and_gradient(self, controls: np.ndarray) -> tuple[float, np.ndarray]:
        problem = self.problem
        states, fx, fu = _rollout_linearized(problem, self.x0, controls)
        h, jac = _constraints(problem, self.ctx, states, with_jacobian=True)
        merit = self._merit(states, controls, h)

        gx, gu = _objective_gradients(problem, states, controls, self.x_ref)
        if len(h):
            weights = -np.maximum(0.0, self.lam - self.mu * h)
            gx = gx + np.tensordot(weights, jac, axes=1)

        # Adjoint sweep; x_0 is fixed
        grad = np.empty_like(controls)
        costate = gx[-1]
        for i in range(problem.horizon - 1, -1, -1):
            grad[i] = gu[i] + fu[i].T @ costate
            costate = gx[i] + fx[i].T @ costate
        return merit, grad


def _projected_gradient_norm(model: DynamicsModel, controls: np.ndarray, grad: np.ndarray) -> float:
    projected = np.clip(controls - grad, model.u_lo, model.u_hi)
    return float(np.max(np.abs(controls - projected))) if controls.size else 0.0


def _inner_solve(merit: _AugmentedMerit, controls: np.ndarray, max_iters: int,
                 grad_tol: float, history: list[float]) -> tuple[np.ndarray, float, int]:
    """Projected gradient with BB trial steps; returns (controls, projected-gradient norm, iterations)."""
    model = merit.problem.model
    value, grad = merit.value_and_gradient(controls)
    if not np.isfinite(value):
        raise MpcError("NaN in augmented merit")
    history.append(value)

    span = float(np.max(model.u_hi - model.u_lo))
    step = 0.5 * span / max(float(np.max(np.abs(grad))), 1e-12)
    pg_norm = _projected_gradient_norm(model, controls, grad)
    iterations = 0

    while iterations < max_iters and pg_norm >= grad_tol:
        iterations += 1
        t = step
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            candidate = np.clip(controls - t * grad, model.u_lo, model.u_hi)
            delta = candidate - controls
            if not np.any(delta):
                break
            cand_value = merit.value(candidate)
            if not np.isfinite(cand_value):
                raise MpcError("NaN in augmented merit")
            if cand_value <= value + _ARMIJO_C * float(np.sum(grad * delta)):
                accepted = True
                break
            t *= _BACKTRACK
        if not accepted:
            break

        new_value, new_grad = merit.value_and_gradient(candidate)
        s = (candidate - controls).ravel()
        y = (new_grad - grad).ravel()
        sy = float(s @ y)
        step = float(np.clip(float(s @ s) / sy, _BB_MIN, _BB_MAX)) if sy > 0 else min(2.0 * t, _BB_MAX)

        controls, value, grad = candidate, new_value, new_grad
        history.append(value)
        pg_norm = _projected_gradient_norm(model, controls, grad)

    return controls, pg_norm, iterations


def solve(problem: MpcProblem, ctx: ConstraintContext, x0, x_ref, warm=None) -> SolveResult:
    """
    Solve the OCP from x0. warm (N, m) is used as given (clipped to the box);
    shift_controls() turns the previous solution into a warm start.
    Never raises on infeasibility: the least-violating iterate comes back
    with status infeasible-soft.
    """
    started = time.perf_counter()
    model = problem.model
    opts = problem.options
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (model.n,) or not np.all(np.isfinite(x0)):
        raise MpcError(f"x0 must be a finite state of length {model.n}")
    ctx.require(problem.mode)

    if warm is None:
        controls = np.zeros((problem.horizon, model.m))
    else:
        controls = np.asarray(warm, dtype=np.float64)
        if controls.shape != (problem.horizon, model.m):
            raise MpcError(f"warm start shape {controls.shape} does not match {(problem.horizon, model.m)}")
    controls = np.clip(controls, model.u_lo, model.u_hi)

    merit = _AugmentedMerit(problem, ctx, x0, x_ref)
    h0 = eval_constraints(problem, ctx, rollout(model, x0, controls, problem.dt))
    merit.lam = np.zeros(len(h0))

    history: list[list[float]] = []
    best_controls, best_key = controls, None
    total_iters = 0
    status = STATUS_MAX_ITER
    prev_violation = np.inf
    outer = 0
    pg_norm = np.inf

    for outer in range(1, opts.outer_iters + 1):
        inner_history: list[float] = []
        controls, pg_norm, iters = _inner_solve(merit, controls, opts.inner_iters, opts.grad_tol, inner_history)
        history.append(inner_history)
        total_iters += iters

        states = rollout(model, x0, controls, problem.dt)
        h = eval_constraints(problem, ctx, states)
        violation = float(np.max(np.maximum(0.0, -h))) if len(h) else 0.0
        cost = objective(problem, states, controls, x_ref)
        key = (violation, cost)
        if best_key is None or key < best_key:
            best_controls, best_key = controls.copy(), key

        if violation < opts.viol_tol and pg_norm < opts.grad_tol:
            status = STATUS_CONVERGED
            best_controls, best_key = controls.copy(), key
            break
        if len(h) == 0:
            break

        merit.lam = np.maximum(0.0, merit.lam - merit.mu * h)
        if violation > opts.viol_tol and violation > 0.25 * prev_violation:
            merit.mu *= opts.penalty_growth
        prev_violation = violation

    states = rollout(model, x0, best_controls, problem.dt)
    h = eval_constraints(problem, ctx, states)
    violation = float(np.max(np.maximum(0.0, -h))) if len(h) else 0.0
    if status != STATUS_CONVERGED:
        status = STATUS_MAX_ITER if violation < opts.viol_tol else STATUS_INFEASIBLE

    terminal = float(h[-1]) if problem.mode in ("ntc", "ntc-oracle") else None
    result = SolveResult(
        status=status, controls=best_controls, states=states,
        objective=objective(problem, states, best_controls, x_ref),
        max_violation=violation, iterations=total_iters, outer_iterations=outer,
        wall_time=time.perf_counter() - started, terminal_value=terminal, merit_history=history,
    )
    if status == STATUS_INFEASIBLE:
        logger.debug(f"solve [{problem.mode} N={problem.horizon}]: infeasible-soft — "
                     f"violation={violation:.3e} iters={total_iters}")
    return result
