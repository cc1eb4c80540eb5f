# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

"""
core/dynamics.py

Robot models shared by the reachability solver, the MPC and the simulator.

  dubins     state [x, y, θ]        control [ω]      constant speed v
  unicycle2  state [x, y, θ, v, ω]  control [a, α]   second-order unicycle

Both models are control-affine with the controls entering the last m
state derivatives directly:  f(x, u) = drift(x) + E·u.
θ is periodic and stored in [−π, π). Other bounded state components are
clamped after every integrator step.
"""

from dataclasses import dataclass, field

import numpy as np

from core.errors import DynamicsError
from core.logger import get_logger

logger = get_logger()

MODEL_IDS = ("dubins", "unicycle2")

# Tolerance for "control within bounds" checks
_BOUND_TOL = 1e-12

# Default model parameters (overridable from the run config)
DUBINS_DEFAULTS = {"v": 0.5, "omega_max": 0.25}
UNICYCLE_DEFAULTS = {"v_max": 1.0, "omega_max": 0.5, "a_max": 0.25, "alpha_max": 1.0}


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    """
    Immutable model description.

    control_axes: state components whose derivative is the control
                  (one per control component, in control order).
    """
    id: str
    n: int
    m: int
    u_lo: np.ndarray
    u_hi: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    periodic: tuple[bool, ...]
    control_axes: tuple[int, ...]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("u_lo", "u_hi", "x_lo", "x_hi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.u_lo.shape != (self.m,) or self.u_hi.shape != (self.m,):
            raise DynamicsError(f"{self.id}: control bounds must have length {self.m}")
        if self.x_lo.shape != (self.n,) or self.x_hi.shape != (self.n,):
            raise DynamicsError(f"{self.id}: state bounds must have length {self.n}")
        if np.any(self.u_lo >= self.u_hi):
            raise DynamicsError(f"{self.id}: control lower bounds must be below upper bounds")
        if np.any(self.x_lo >= self.x_hi):
            raise DynamicsError(f"{self.id}: state lower bounds must be below upper bounds")
        if len(self.periodic) != self.n or sum(self.periodic) != 1 or not self.periodic[2]:
            raise DynamicsError(f"{self.id}: exactly the heading component must be periodic")

    @property
    def heading_axis(self) -> int:
        return 2

    @property
    def clamp_mask(self) -> np.ndarray:
        """Components clamped after each step: finite bounds and not periodic."""
        periodic = np.asarray(self.periodic)
        return ~periodic & np.isfinite(self.x_lo) & np.isfinite(self.x_hi)

    def describe(self) -> dict:
        return {"id": self.id, **self.params}


def dubins(v: float = DUBINS_DEFAULTS["v"], omega_max: float = DUBINS_DEFAULTS["omega_max"]) -> DynamicsModel:
    """Dubins car: constant forward speed v, turn rate |ω| ≤ omega_max."""
    return DynamicsModel(
        id="dubins", n=3, m=1,
        u_lo=[-omega_max], u_hi=[omega_max],
        x_lo=[-np.inf, -np.inf, -np.pi], x_hi=[np.inf, np.inf, np.pi],
        periodic=(False, False, True),
        control_axes=(2,),
        params={"v": float(v), "omega_max": float(omega_max)},
    )


def unicycle2(v_max: float = UNICYCLE_DEFAULTS["v_max"],
              omega_max: float = UNICYCLE_DEFAULTS["omega_max"],
              a_max: float = UNICYCLE_DEFAULTS["a_max"],
              alpha_max: float = UNICYCLE_DEFAULTS["alpha_max"]) -> DynamicsModel:
    """Dynamic unicycle: speed and turn rate are states driven by accelerations."""
    return DynamicsModel(
        id="unicycle2", n=5, m=2,
        u_lo=[-a_max, -alpha_max], u_hi=[a_max, alpha_max],
        x_lo=[-np.inf, -np.inf, -np.pi, -v_max, -omega_max],
        x_hi=[np.inf, np.inf, np.pi, v_max, omega_max],
        periodic=(False, False, True, False, False),
        control_axes=(3, 4),
        params={"v_max": float(v_max), "omega_max": float(omega_max),
                "a_max": float(a_max), "alpha_max": float(alpha_max)},
    )


def make_model(model_id: str, overrides: dict | None = None) -> DynamicsModel:
    """Model by config id with optional parameter overrides."""
    overrides = dict(overrides or {})
    if model_id == "dubins":
        defaults, factory = DUBINS_DEFAULTS, dubins
    elif model_id == "unicycle2":
        defaults, factory = UNICYCLE_DEFAULTS, unicycle2
    else:
        raise DynamicsError(f"unknown dynamics id '{model_id}' (expected one of {', '.join(MODEL_IDS)})")

    unknown = set(overrides) - set(defaults)
    if unknown:
        raise DynamicsError(f"{model_id}: unknown parameter(s) {sorted(unknown)}")
    params = {**defaults, **{k: float(v) for k, v in overrides.items()}}
    for key, value in params.items():
        if not value > 0:
            raise DynamicsError(f"{model_id}: parameter {key} must be positive, got {value}")
    return factory(**params)


# =============================================================================
# Vector field
# =============================================================================

def wrap_angle(theta):
    """Wrap to [−π, π). Values already in range are returned unchanged."""
    theta = np.asarray(theta, dtype=np.float64)
    wrapped = np.mod(theta + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped >= np.pi, wrapped - 2.0 * np.pi, wrapped)
    out = np.where((theta >= -np.pi) & (theta < np.pi), theta, wrapped)
    return float(out) if out.ndim == 0 else out


def drift(model: DynamicsModel, x: np.ndarray) -> np.ndarray:
    """Control-independent part of f, batched over leading axes."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    theta = x[..., 2]
    if model.id == "dubins":
        v = model.params["v"]
        out[..., 0] = v * np.cos(theta)
        out[..., 1] = v * np.sin(theta)
    else:
        v = x[..., 3]
        out[..., 0] = v * np.cos(theta)
        out[..., 1] = v * np.sin(theta)
        out[..., 2] = x[..., 4]
    return out


def vector_field(model: DynamicsModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """f(x, u) without bound checks, batched over leading axes."""
    out = drift(model, x)
    u = np.asarray(u, dtype=np.float64)
    for j, axis in enumerate(model.control_axes):
        out[..., axis] = out[..., axis] + u[..., j]
    return out


def _check_control(model: DynamicsModel, u: np.ndarray) -> None:
    if u.shape[-1] != model.m:
        raise DynamicsError(f"{model.id}: control must have {model.m} component(s), got shape {u.shape}")
    if np.any(u < model.u_lo - _BOUND_TOL) or np.any(u > model.u_hi + _BOUND_TOL):
        raise DynamicsError(
            f"{model.id}: control {np.array2string(u, precision=4)} outside bounds "
            f"[{model.u_lo.tolist()}, {model.u_hi.tolist()}]"
        )


def f_continuous(model: DynamicsModel, x, u) -> np.ndarray:
    """ẋ = f(x, u). Raises DynamicsError for controls outside the box."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if x.shape[-1] != model.n:
        raise DynamicsError(f"{model.id}: state must have {model.n} components, got shape {x.shape}")
    _check_control(model, u)
    return vector_field(model, x, u)


def jacobians(model: DynamicsModel, x) -> tuple[np.ndarray, np.ndarray]:
    """(∂f/∂x, ∂f/∂u) at a single state; ∂f/∂u does not depend on u."""
    x = np.asarray(x, dtype=np.float64)
    a = np.zeros((model.n, model.n))
    b = np.zeros((model.n, model.m))
    theta = x[2]
    c, s = np.cos(theta), np.sin(theta)
    if model.id == "dubins":
        v = model.params["v"]
        a[0, 2] = -v * s
        a[1, 2] = v * c
    else:
        v = x[3]
        a[0, 2] = -v * s
        a[0, 3] = c
        a[1, 2] = v * c
        a[1, 3] = s
        a[2, 4] = 1.0
    for j, axis in enumerate(model.control_axes):
        b[axis, j] = 1.0
    return a, b


# =============================================================================
# Integrators
# =============================================================================

def project_state(model: DynamicsModel, x: np.ndarray) -> np.ndarray:
    """Wrap θ and clamp bounded components."""
    x = np.array(x, dtype=np.float64, copy=True)
    x[..., 2] = wrap_angle(x[..., 2])
    mask = model.clamp_mask
    if mask.any():
        x[..., mask] = np.clip(x[..., mask], model.x_lo[mask], model.x_hi[mask])
    return x


def _check_dt(dt: float) -> None:
    if not dt > 0:
        raise DynamicsError(f"time step must be positive, got {dt}")


def step_euler(model: DynamicsModel, x, u, dt: float) -> np.ndarray:
    """x + δt·f(x, u), then wrap and clamp."""
    _check_dt(dt)
    x = np.asarray(x, dtype=np.float64)
    return project_state(model, x + dt * f_continuous(model, x, u))


def step_euler_linearized(model: DynamicsModel, x: np.ndarray, u: np.ndarray,
                          dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Euler step with its Jacobians (∂x'/∂x, ∂x'/∂u).
    Rows of clamped components are zero where the clamp is active.
    """
    x = np.asarray(x, dtype=np.float64)
    raw = x + dt * vector_field(model, x, u)
    a, b = jacobians(model, x)
    fx = np.eye(model.n) + dt * a
    fu = dt * b

    mask = model.clamp_mask
    active = mask & ((raw < model.x_lo) | (raw > model.x_hi))
    if active.any():
        fx[active, :] = 0.0
        fu[active, :] = 0.0
    return project_state(model, raw), fx, fu


def step_rk4(model: DynamicsModel, x, u, dt: float) -> np.ndarray:
    """Classical 4th-order Runge-Kutta with zero-order-hold u, then wrap and clamp."""
    _check_dt(dt)
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    _check_control(model, u)

    k1 = vector_field(model, x, u)
    k2 = vector_field(model, x + 0.5 * dt * k1, u)
    k3 = vector_field(model, x + 0.5 * dt * k2, u)
    k4 = vector_field(model, x + dt * k3, u)
    return project_state(model, x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


# =============================================================================
# Reachability helpers
# =============================================================================

def hamiltonian(model: DynamicsModel, x, p):
    """
    H(x, p) = max_u p·f(x, u), batched over leading axes.

    The box maximum of a linear function is attained at a corner, so each
    control contributes max(p_axis·lo, p_axis·hi).
    """
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    h = np.sum(p * drift(model, x), axis=-1)
    for j, axis in enumerate(model.control_axes):
        pj = p[..., axis]
        h = h + np.maximum(pj * model.u_lo[j], pj * model.u_hi[j])
    return float(h) if np.ndim(h) == 0 else h


def dissipation_bounds(model: DynamicsModel, x) -> np.ndarray:
    """
    Componentwise α_i ≥ max_u |f_i(x, u)| over the supplied states.
    x may be a single state, a batch, or the per-dimension node arrays of a grid.
    """
    ctrl = np.maximum(np.abs(model.u_lo), np.abs(model.u_hi))
    if model.id == "dubins":
        v = model.params["v"]
        return np.array([v, v, ctrl[0]])

    x = np.asarray(x, dtype=np.float64).reshape(-1, model.n)
    v_max = float(np.max(np.abs(x[:, 3])))
    w_max = float(np.max(np.abs(x[:, 4])))
    return np.array([v_max, v_max, w_max, ctrl[0], ctrl[1]])
