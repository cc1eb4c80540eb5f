# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.dynamics import (dissipation_bounds, f_continuous, hamiltonian, jacobians, make_model, step_euler,
                           step_euler_linearized, step_rk4, wrap_angle)
from core.errors import DynamicsError


# =============================================================================
# Models
# =============================================================================

def test_make_model_defaults_and_overrides():
    model = make_model("dubins")
    assert (model.n, model.m) == (3, 1)
    assert model.params == {"v": 0.5, "omega_max": 0.25}
    fast = make_model("unicycle2", {"v_max": 2.0})
    assert (fast.n, fast.m) == (5, 2)
    assert fast.x_hi[3] == 2.0


@pytest.mark.parametrize("model_id, overrides", [
    ("bicycle", None),
    ("dubins", {"speed": 1.0}),
    ("dubins", {"v": -0.5}),
])
def test_make_model_rejects(model_id, overrides):
    with pytest.raises(DynamicsError):
        make_model(model_id, overrides)


def test_wrap_angle():
    assert wrap_angle(0.3) == 0.3
    assert wrap_angle(-math.pi) == -math.pi
    assert wrap_angle(math.pi) == pytest.approx(-math.pi)
    assert wrap_angle(3 * math.pi + 0.1) == pytest.approx(-math.pi + 0.1)
    wrapped = wrap_angle(np.linspace(-20, 20, 101))
    assert np.all((wrapped >= -math.pi) & (wrapped < math.pi))


# =============================================================================
# Vector field
# =============================================================================

def test_dubins_straight_ahead(dubins_model):
    assert_allclose(f_continuous(dubins_model, [0.0, 0.0, 0.0], [0.0]), [0.5, 0.0, 0.0])


def test_unicycle_vector_field(unicycle_model):
    xdot = f_continuous(unicycle_model, [1.0, 2.0, math.pi / 2, 0.8, -0.2], [0.1, -0.5])
    assert_allclose(xdot, [0.0, 0.8, -0.2, 0.1, -0.5], atol=1e-12)


def test_control_outside_box_raises(dubins_model):
    with pytest.raises(DynamicsError, match="outside bounds"):
        f_continuous(dubins_model, [0.0, 0.0, 0.0], [0.3])
    with pytest.raises(DynamicsError):
        step_rk4(dubins_model, [0.0, 0.0, 0.0], [-0.26], 0.1)


def test_jacobians_match_finite_differences(unicycle_model, rng):
    h = 1e-6
    for _ in range(5):
        x = np.array([*rng.uniform(-2, 2, 2), rng.uniform(-3, 3), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5)])
        u = rng.uniform(unicycle_model.u_lo, unicycle_model.u_hi)
        a, b = jacobians(unicycle_model, x)
        for i in range(5):
            e = np.zeros(5)
            e[i] = h
            col = (f_continuous(unicycle_model, x + e, u) - f_continuous(unicycle_model, x - e, u)) / (2 * h)
            assert_allclose(a[:, i], col, atol=1e-6)
        assert_allclose(b[3:], np.eye(2))
        assert_allclose(b[:3], 0.0)


# =============================================================================
# Integrators
# =============================================================================

def test_euler_and_rk4_wrap_heading(dubins_model):
    x = step_euler(dubins_model, [0.0, 0.0, math.pi - 0.01], [0.25], 0.1)
    assert x[2] == pytest.approx(-math.pi + 0.015)
    x = step_rk4(dubins_model, [0.0, 0.0, math.pi - 0.01], [0.25], 0.1)
    assert -math.pi <= x[2] < math.pi


def test_rk4_full_circle_returns_home(dubins_model):
    # radius v/ω = 2 m, period 2π/0.25 s
    period = 2 * math.pi / 0.25
    steps = 800
    x = np.zeros(3)
    for _ in range(steps):
        x = step_rk4(dubins_model, x, [0.25], period / steps)
    assert_allclose(x[:2], [0.0, 0.0], atol=1e-6)
    assert wrap_angle(x[2]) == pytest.approx(0.0, abs=1e-6)


def arc_error(model, step, dt: float, duration: float) -> float:
    """Position error after a constant full-left turn against the exact circular arc."""
    omega, v = 0.25, 0.5
    x = np.zeros(3)
    for _ in range(int(round(duration / dt))):
        x = step(model, x, [omega], dt)
    radius = v / omega
    exact = [radius * math.sin(omega * duration), radius * (1.0 - math.cos(omega * duration))]
    return float(np.hypot(*(x[:2] - exact)))


def test_euler_is_first_order(dubins_model):
    ratio = arc_error(dubins_model, step_euler, 0.1, 4.0) / arc_error(dubins_model, step_euler, 0.05, 4.0)
    assert 1.7 <= ratio <= 2.3


def test_rk4_is_fourth_order(dubins_model):
    ratio = arc_error(dubins_model, step_rk4, 1.0, 8.0) / arc_error(dubins_model, step_rk4, 0.5, 8.0)
    assert 12.0 <= ratio <= 20.0


def test_unicycle_speed_is_clamped(unicycle_model):
    x = np.array([0.0, 0.0, 0.0, 0.99, 0.0])
    x = step_euler(unicycle_model, x, [0.25, 0.0], 1.0)
    assert x[3] == 1.0


def test_linearized_step_zeroes_clamped_rows(unicycle_model):
    x = np.array([0.0, 0.0, 0.0, 0.99, 0.0])
    nxt, fx, fu = step_euler_linearized(unicycle_model, x, np.array([0.25, 0.0]), 1.0)
    assert nxt[3] == 1.0
    assert np.all(fx[3] == 0.0) and np.all(fu[3] == 0.0)
    assert fx[0, 0] == 1.0


def test_non_positive_dt_raises(dubins_model):
    with pytest.raises(DynamicsError):
        step_euler(dubins_model, [0.0, 0.0, 0.0], [0.0], 0.0)


# =============================================================================
# Hamiltonian and dissipation
# =============================================================================

def test_hamiltonian_turn_only(dubins_model):
    assert hamiltonian(dubins_model, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]) == pytest.approx(0.25)
    assert hamiltonian(dubins_model, [0.0, 0.0, 0.0], [0.0, 0.0, -1.0]) == pytest.approx(0.25)


def test_hamiltonian_is_max_over_controls(unicycle_model, rng):
    corners = np.array([[a, b] for a in (-0.25, 0.25) for b in (-1.0, 1.0)])
    samples = np.vstack([corners, rng.uniform(unicycle_model.u_lo, unicycle_model.u_hi, size=(200, 2))])
    for _ in range(10):
        x = np.array([0.0, 0.0, rng.uniform(-3, 3), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5)])
        p = rng.normal(size=5)
        brute = max(float(p @ f_continuous(unicycle_model, x, u)) for u in samples)
        assert hamiltonian(unicycle_model, x, p) == pytest.approx(brute, abs=1e-12)


def test_dissipation_bounds(dubins_model, unicycle_model):
    assert_allclose(dissipation_bounds(dubins_model, np.zeros(3)), [0.5, 0.5, 0.25])
    states = np.array([[0, 0, 0, -0.7, 0.1], [0, 0, 0, 0.4, -0.3]], dtype=float)
    assert_allclose(dissipation_bounds(unicycle_model, states), [0.7, 0.7, 0.3, 0.25, 1.0])
