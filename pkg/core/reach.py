# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

"""
core/reach.py

Grid-based Hamilton-Jacobi reachability.

- build_failure_field(): l(x) = SDF(x_p, y_p) − r_robot on a StateGrid
- solve_vi(): infinite-horizon value by Lax-Friedrichs pseudo-time sweeps
      Vⁿ⁺¹ = min( Vⁿ, l, Vⁿ + Δτ·Ĥ(x, DVⁿ) )
- semi_lagrangian_oracle(): independent value iteration used as a cross-check
- brt_mask() / interpolate_vf() / value_and_gradient()

Sign convention:
  The update adds Δτ·Ĥ, so the Lax-Friedrichs dissipation enters as
  Ĥ = H(x, (p⁻+p⁺)/2) + Σ αᵢ(pᵢ⁺ − pᵢ⁻)/2, the scheme for V_τ = H. Under
  Δτ = cfl / Σ αᵢ/Δxᵢ every update is a monotone combination of neighbors.

Array layout:
  values have shape grid.counts, dimension order of the state vector,
  row-major. Periodic axes exclude the duplicate endpoint.
"""

import time
from dataclasses import dataclass
from itertools import product
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from core.dynamics import DynamicsModel, hamiltonian, dissipation_bounds, vector_field
from core.errors import ReachError, ValidationError
from core.geom import SdfGrid, sample_sdf
from core.logger import get_logger

logger = get_logger()

# Desk-scale default node counts per model
DEFAULT_COUNTS = {
    "dubins":    (50, 50, 21),
    "unicycle2": (40, 40, 7, 7, 7),
}

# Slack when comparing grid and SDF extents (m)
_EXTENT_TOL = 1e-9

# Log a DEBUG line every this many sweeps
_SWEEP_LOG_INTERVAL = 100


@dataclass(frozen=True)
class StateGrid:
    """
    Rectilinear grid over the state space.
    Non-periodic axes include both endpoints; periodic axes cover [min, max)
    with spacing (max − min) / count.
    """
    mins: tuple[float, ...]
    maxs: tuple[float, ...]
    counts: tuple[int, ...]
    periodic: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "mins", tuple(float(v) for v in self.mins))
        object.__setattr__(self, "maxs", tuple(float(v) for v in self.maxs))
        object.__setattr__(self, "counts", tuple(int(v) for v in self.counts))
        object.__setattr__(self, "periodic", tuple(bool(v) for v in self.periodic))
        n = len(self.counts)
        if not (len(self.mins) == len(self.maxs) == len(self.periodic) == n) or n == 0:
            raise ValidationError("mins, maxs, counts and periodic must have equal non-zero length",
                                  field="reach.grid")
        for d in range(n):
            if self.counts[d] < 3:
                raise ValidationError(f"axis {d} needs at least 3 points, got {self.counts[d]}",
                                      field="reach.grid.counts")
            if not self.maxs[d] > self.mins[d]:
                raise ValidationError(f"axis {d} has max ≤ min", field="reach.grid")

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def spacing(self) -> np.ndarray:
        return np.array([
            (hi - lo) / (c if per else c - 1)
            for lo, hi, c, per in zip(self.mins, self.maxs, self.counts, self.periodic)
        ])

    def axes(self) -> list[np.ndarray]:
        """Node coordinates along each axis."""
        dx = self.spacing
        return [lo + np.arange(c) * dx[d] for d, (lo, c) in enumerate(zip(self.mins, self.counts))]

    def mesh(self) -> np.ndarray:
        """All nodes as an array of shape counts + (ndim,)."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def points(self) -> np.ndarray:
        """All nodes as (size, ndim), row-major node order."""
        return self.mesh().reshape(-1, self.ndim)

    def to_dict(self) -> dict:
        return {"mins": list(self.mins), "maxs": list(self.maxs),
                "counts": list(self.counts), "periodic": list(self.periodic)}

    @classmethod
    def from_dict(cls, data: dict) -> "StateGrid":
        return cls(tuple(data["mins"]), tuple(data["maxs"]), tuple(data["counts"]), tuple(data["periodic"]))


def default_state_grid(model: DynamicsModel, sdf: SdfGrid, counts: tuple[int, ...] | None = None) -> StateGrid:
    """
    Grid whose position axes span the SDF cell centers, θ ∈ [−π, π) and
    the remaining axes the model's state bounds.
    """
    counts = tuple(counts or DEFAULT_COUNTS[model.id])
    if len(counts) != model.n:
        raise ValidationError(f"{model.id} needs {model.n} grid counts, got {len(counts)}",
                              field="reach.counts")
    x_min, x_max, y_min, y_max = sdf.center_extent()
    mins = [x_min, y_min, -np.pi] + [float(model.x_lo[d]) for d in range(3, model.n)]
    maxs = [x_max, y_max, np.pi] + [float(model.x_hi[d]) for d in range(3, model.n)]
    return StateGrid(tuple(mins), tuple(maxs), counts, tuple(model.periodic))


@dataclass(frozen=True, eq=False)
class FailureField:
    """l(x) on every node of grid; constant along non-position axes."""
    grid: StateGrid
    values: np.ndarray
    r_robot: float


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """HJ value samples (float32) on grid."""
    grid: StateGrid
    values: np.ndarray
    converged: bool
    sweeps: int
    model_id: str
    r_robot: float

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.shape != self.grid.shape:
            raise ValidationError(f"values shape {values.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class SolveOpts:
    cfl: float = 0.5
    conv_tol: float = 1e-3
    max_sweeps: int = 2000

    def validate(self) -> None:
        if not 0.0 < self.cfl < 1.0:
            raise ValidationError(f"must lie in (0, 1), got {self.cfl}", field="reach.cfl")
        if not self.conv_tol > 0:
            raise ValidationError(f"must be positive, got {self.conv_tol}", field="reach.conv_tol")
        if self.max_sweeps < 1:
            raise ValidationError(f"must be at least 1, got {self.max_sweeps}", field="reach.max_sweeps")


def build_failure_field(sdf: SdfGrid, grid: StateGrid, r_robot: float) -> FailureField:
    """
    l(x) = bilinear SDF at (x_p, y_p) − r_robot, replicated over the other axes.
    The position extent of grid must lie inside the SDF cell-center extent.
    """
    x_min, x_max, y_min, y_max = sdf.center_extent()
    if (grid.mins[0] < x_min - _EXTENT_TOL or grid.maxs[0] > x_max + _EXTENT_TOL
            or grid.mins[1] < y_min - _EXTENT_TOL or grid.maxs[1] > y_max + _EXTENT_TOL):
        raise ReachError(
            f"state grid position extent x[{grid.mins[0]:.4f}, {grid.maxs[0]:.4f}] "
            f"y[{grid.mins[1]:.4f}, {grid.maxs[1]:.4f}] exceeds SDF extent "
            f"x[{x_min:.4f}, {x_max:.4f}] y[{y_min:.4f}, {y_max:.4f}]"
        )

    axes = grid.axes()
    xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
    plane = sample_sdf(sdf, xx, yy) - r_robot
    tail = (1,) * (grid.ndim - 2)
    values = np.ascontiguousarray(np.broadcast_to(plane.reshape(plane.shape + tail), grid.shape))
    return FailureField(grid, values, float(r_robot))


def _one_sided_differences(values: np.ndarray, axis: int, dx: float,
                           periodic: bool) -> tuple[np.ndarray, np.ndarray]:
    """(p⁻, p⁺) along axis; at non-periodic borders the missing side copies the other."""
    if periodic:
        p_minus = (values - np.roll(values, 1, axis=axis)) / dx
        p_plus = (np.roll(values, -1, axis=axis) - values) / dx
        return p_minus, p_plus

    forward = np.diff(values, axis=axis) / dx
    n = values.shape[axis]
    p_minus = np.empty_like(values)
    p_plus = np.empty_like(values)

    def sl(start, stop):
        index = [slice(None)] * values.ndim
        index[axis] = slice(start, stop)
        return tuple(index)

    p_minus[sl(1, n)] = forward
    p_minus[sl(0, 1)] = forward[sl(0, 1)]
    p_plus[sl(0, n - 1)] = forward
    p_plus[sl(n - 1, n)] = forward[sl(n - 2, n - 1)]
    return p_minus, p_plus


def _grid_dissipation(model: DynamicsModel, grid: StateGrid) -> np.ndarray:
    """dissipation_bounds over every axis value the grid can take."""
    axes = grid.axes()
    longest = max(len(a) for a in axes)
    samples = np.zeros((longest, model.n))
    for d, a in enumerate(axes):
        samples[:, d] = np.resize(a, longest)
    return dissipation_bounds(model, samples)


def solve_vi(model: DynamicsModel, l: FailureField, opts: SolveOpts | None = None,
             on_sweep: Callable[[int, np.ndarray], None] | None = None,
             on_progress: Callable[[int, int], None] | None = None) -> ValueFunction:
    """
    Solve the final-value HJ variational inequality to convergence.

    on_sweep(sweep, values) receives a read-only view after each sweep.
    on_progress(sweep, max_sweeps) is meant for progress bars.

    Raises ReachError("numerical blow-up at sweep k") on NaN/Inf.
    """
    opts = opts or SolveOpts()
    opts.validate()
    grid = l.grid
    if grid.ndim != model.n:
        raise ReachError(f"{model.id} has {model.n} state dims, grid has {grid.ndim}")

    dx = grid.spacing
    alpha = _grid_dissipation(model, grid)
    rate = float(np.sum(alpha / dx))
    if not rate > 0:
        raise ReachError("all dissipation bounds are zero; pseudo-time step undefined")
    dtau = opts.cfl / rate
    stop_change = opts.conv_tol * dtau

    states = grid.mesh()
    failure = l.values
    values = failure.astype(np.float64, copy=True)
    converged = False
    sweep = 0
    started = time.perf_counter()

    logger.info(f"solve_vi [{model.id}]: grid={grid.counts} dtau={dtau:.5f} "
                f"alpha={np.round(alpha, 4).tolist()} r_robot={l.r_robot}")

    for sweep in range(1, opts.max_sweeps + 1):
        p_mid = np.empty(grid.shape + (grid.ndim,))
        dissipation = np.zeros(grid.shape)
        for d in range(grid.ndim):
            p_minus, p_plus = _one_sided_differences(values, d, dx[d], grid.periodic[d])
            p_mid[..., d] = 0.5 * (p_minus + p_plus)
            dissipation += 0.5 * alpha[d] * (p_plus - p_minus)

        h_hat = hamiltonian(model, states, p_mid) + dissipation
        # clamped to the previous sweep, so values never rise
        updated = np.minimum(np.minimum(failure, values + dtau * h_hat), values)

        if not np.all(np.isfinite(updated)):
            logger.error(f"solve_vi [{model.id}]: non-finite values at sweep {sweep}")
            raise ReachError(f"numerical blow-up at sweep {sweep}")

        change = float(np.max(np.abs(updated - values)))
        values = updated

        if on_sweep is not None:
            view = values.view()
            view.flags.writeable = False
            on_sweep(sweep, view)
        if on_progress is not None:
            on_progress(sweep, opts.max_sweeps)
        if sweep % _SWEEP_LOG_INTERVAL == 0:
            logger.debug(f"solve_vi [{model.id}]: sweep {sweep} max_change={change:.3e}")

        if change < stop_change:
            converged = True
            break

    elapsed = time.perf_counter() - started
    if converged:
        logger.info(f"solve_vi [{model.id}]: converged — sweeps={sweep} time={elapsed:.2f}s")
    else:
        logger.warning(f"solve_vi [{model.id}]: not converged after {sweep} sweeps ({elapsed:.2f}s)")

    return ValueFunction(grid, values.astype(np.float32), converged, sweep, model.id, l.r_robot)


# =============================================================================
# Semi-Lagrangian oracle
# =============================================================================

def _control_set(model: DynamicsModel) -> np.ndarray:
    """Corners of the control box plus the zero control."""
    corners = np.array(list(product(*zip(model.u_lo, model.u_hi))), dtype=np.float64)
    return np.vstack([corners, np.zeros((1, model.m))])


def _padded_interpolator(grid: StateGrid, values: np.ndarray) -> RegularGridInterpolator:
    """Linear interpolator with each periodic axis closed by its first slice."""
    axes = grid.axes()
    padded = values
    for d in range(grid.ndim):
        if grid.periodic[d]:
            first = np.take(padded, [0], axis=d)
            padded = np.concatenate([padded, first], axis=d)
            axes[d] = np.append(axes[d], grid.maxs[d])
    return RegularGridInterpolator(tuple(axes), padded, method="linear")


def _fold_into_grid(grid: StateGrid, points: np.ndarray) -> np.ndarray:
    """Wrap periodic coordinates into [min, max) and clamp the others to the extent."""
    out = points.copy()
    for d in range(grid.ndim):
        lo, hi = grid.mins[d], grid.maxs[d]
        if grid.periodic[d]:
            out[..., d] = lo + np.mod(out[..., d] - lo, hi - lo)
            out[..., d] = np.minimum(out[..., d], hi)
        else:
            out[..., d] = np.clip(out[..., d], lo, hi)
    return out


def semi_lagrangian_oracle(model: DynamicsModel, l: FailureField, grid: StateGrid | None = None,
                           dt: float = 0.1, max_iters: int = 2000, tol: float = 1e-4) -> ValueFunction:
    """
    Value iteration V ← min(l, max_u V(x + δt·f(x, u))) over a finite control
    set, with multilinear interpolation, until max change < tol.
    """
    if not dt > 0:
        raise ValidationError(f"must be positive, got {dt}", field="dt")
    grid = grid or l.grid
    if grid != l.grid:
        raise ReachError("oracle grid differs from the failure field grid")

    states = grid.points()
    controls = _control_set(model)
    targets = [
        _fold_into_grid(grid, states + dt * vector_field(model, states, np.broadcast_to(u, (len(states), model.m))))
        for u in controls
    ]
    failure = l.values.reshape(-1)
    values = failure.copy()
    converged = False
    iteration = 0

    for iteration in range(1, max_iters + 1):
        interp = _padded_interpolator(grid, values.reshape(grid.shape))
        best = np.max(np.stack([interp(target) for target in targets]), axis=0)
        updated = np.minimum(failure, best)
        change = float(np.max(np.abs(updated - values)))
        values = updated
        if change < tol:
            converged = True
            break

    logger.info(f"semi_lagrangian_oracle [{model.id}]: iterations={iteration} converged={converged}")
    return ValueFunction(grid, values.reshape(grid.shape).astype(np.float32), converged, iteration,
                         model.id, l.r_robot)


# =============================================================================
# Queries
# =============================================================================

def brt_mask(vf: ValueFunction) -> np.ndarray:
    """Boolean mask of the backward reachable tube (V ≤ 0)."""
    return vf.values <= 0


def _multilinear(grid: StateGrid, values: np.ndarray, x: np.ndarray,
                 with_gradient: bool) -> tuple[np.ndarray, np.ndarray | None]:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[-1] != grid.ndim:
        raise ReachError(f"query states need {grid.ndim} components, got {x.shape[-1]}")
    dx = grid.spacing

    lower, upper, frac, scale = [], [], [], []
    for d in range(grid.ndim):
        coord = (x[:, d] - grid.mins[d]) / dx[d]
        n = grid.counts[d]
        if grid.periodic[d]:
            base = np.floor(coord)
            t = coord - base
            i0 = np.mod(base.astype(np.intp), n)
            i1 = np.mod(i0 + 1, n)
            s = np.ones_like(coord)
        else:
            inside = (coord >= 0.0) & (coord <= n - 1)
            c = np.clip(coord, 0.0, n - 1)
            i0 = np.minimum(np.floor(c).astype(np.intp), n - 2)
            i1 = i0 + 1
            t = c - i0
            s = inside.astype(np.float64)
        lower.append(i0)
        upper.append(i1)
        frac.append(t)
        scale.append(s / dx[d])

    value = np.zeros(len(x))
    grad = np.zeros_like(x) if with_gradient else None
    for corner in product((0, 1), repeat=grid.ndim):
        index = tuple(upper[d] if bit else lower[d] for d, bit in enumerate(corner))
        sample = values[index].astype(np.float64)
        weights = [frac[d] if bit else 1.0 - frac[d] for d, bit in enumerate(corner)]
        value += sample * np.prod(weights, axis=0)
        if with_gradient:
            for d, bit in enumerate(corner):
                others = np.prod([w for k, w in enumerate(weights) if k != d], axis=0) \
                    if grid.ndim > 1 else 1.0
                grad[:, d] += sample * others * (1.0 if bit else -1.0) * scale[d]
    return value, grad


def interpolate_vf(vf: ValueFunction, x):
    """
    Multilinear value at one state (float) or a batch (array).
    θ wraps periodically; other coordinates are clamped to the grid extent.
    """
    value, _ = _multilinear(vf.grid, vf.values, x, with_gradient=False)
    return float(value[0]) if np.ndim(x) == 1 else value


def value_and_gradient(vf: ValueFunction, x) -> tuple[float, np.ndarray]:
    """Multilinear value and its gradient at a single state."""
    value, grad = _multilinear(vf.grid, vf.values, x, with_gradient=True)
    return float(value[0]), grad[0]
