# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core.errors import GeomError, InvalidGridError, ValidationError
from core.geom import (EnvSpec, OccupancyGrid, SdfGrid, add_disc, augment, extract_window, gen_random_env,
                       make_empty_grid, occupancy_to_sdf, sample_sdf, sdf_gradient, sdf_value_and_gradient)


def brute_force_sdf(grid: OccupancyGrid) -> np.ndarray:
    """Nearest occupied center minus nearest free center, by pairwise scan."""
    xs, ys = grid.cell_centers()
    xx, yy = np.meshgrid(xs, ys)
    centers = np.stack([xx.ravel(), yy.ravel()], axis=1)
    occupied = grid.cells.ravel().astype(bool)
    dists = np.hypot(centers[:, None, 0] - centers[None, :, 0], centers[:, None, 1] - centers[None, :, 1])
    to_occ = dists[:, occupied].min(axis=1)
    to_free = dists[:, ~occupied].min(axis=1)
    return (to_occ - to_free).reshape(grid.height, grid.width)


# =============================================================================
# Grid types
# =============================================================================

def test_grid_rejects_bad_geometry():
    with pytest.raises(InvalidGridError):
        OccupancyGrid(0, 3, 0.1, (0.0, 0.0), np.zeros((3, 0)))
    with pytest.raises(InvalidGridError):
        OccupancyGrid(3, 3, 0.0, (0.0, 0.0), np.zeros((3, 3)))
    with pytest.raises(InvalidGridError):
        OccupancyGrid(3, 2, 0.1, (0.0, 0.0), np.zeros((3, 3)))
    with pytest.raises(ValidationError):
        OccupancyGrid(2, 2, 0.1, (0.0, 0.0), np.full((2, 2), 2))


def test_row_zero_is_minimal_y():
    grid = add_disc(make_empty_grid(10, 10, 0.1, (0.0, 0.0)), 0.05, 0.05, 0.04)
    assert grid.cells[0, 0] == 1
    assert grid.is_occupied(0.05, 0.05)
    assert not grid.is_occupied(0.95, 0.95)
    assert not grid.is_occupied(-5.0, 0.0)


# =============================================================================
# Random environments
# =============================================================================

def test_zero_obstacles_gives_free_grid():
    grid = gen_random_env(EnvSpec(obstacle_count=(0, 0)))
    assert grid.cells.sum() == 0


def test_gen_random_env_is_deterministic():
    spec = EnvSpec(seed=42)
    a, b = gen_random_env(spec), gen_random_env(spec)
    assert a.cells.tobytes() == b.cells.tobytes()
    assert a.fingerprint() == b.fingerprint()
    assert gen_random_env(spec.with_seed(43)).fingerprint() != a.fingerprint()


def test_corridor_keeps_start_and_goal_free():
    for seed in range(10):
        spec = EnvSpec(obstacle_count=(6, 8), seed=seed)
        grid = gen_random_env(spec)
        assert not grid.is_occupied(*spec.start)
        assert not grid.is_occupied(*spec.goal)


def test_single_disc_cell_count():
    spec = EnvSpec(size=(6.0, 6.0), resolution=0.06, obstacle_count=(1, 1), shapes=("disc",),
                   obstacle_size=(0.5, 0.5), corridor=False, seed=3)
    grid = gen_random_env(spec)
    area_cells = math.pi * 0.5 ** 2 / 0.06 ** 2
    perimeter_cells = 2 * math.pi * 0.5 / 0.06
    assert abs(int(grid.cells.sum()) - area_cells) <= perimeter_cells


def test_unsatisfiable_spec():
    spec = EnvSpec(size=(2.0, 2.0), resolution=0.1, obstacle_count=(3, 3), obstacle_size=(0.9, 0.9),
                   start=(1.0, 1.0), goal=(1.0, 1.0), clearance=5.0)
    with pytest.raises(GeomError, match="unsatisfiable spec"):
        gen_random_env(spec)


# =============================================================================
# Signed distance field
# =============================================================================

def test_free_grid_gets_diagonal_sentinel():
    sdf = occupancy_to_sdf(make_empty_grid(10, 10, 0.1))
    assert_allclose(sdf.values, math.hypot(1.0, 1.0))


def test_single_cell_obstacle():
    cells = np.zeros((9, 9), dtype=np.uint8)
    cells[4, 4] = 1
    sdf = occupancy_to_sdf(OccupancyGrid(9, 9, 0.1, (0.0, 0.0), cells))
    assert sdf.values[4, 4] <= 0
    assert sdf.values[4, 5] == pytest.approx(0.1, abs=1e-12)
    assert sdf.values[5, 4] == pytest.approx(0.1, abs=1e-12)


def test_sdf_matches_brute_force(rng):
    for _ in range(30):
        w, h = rng.integers(2, 33, size=2)
        cells = (rng.random((h, w)) < rng.uniform(0.05, 0.5)).astype(np.uint8)
        if cells.all() or not cells.any():
            continue
        grid = OccupancyGrid(int(w), int(h), 0.1, (0.0, 0.0), cells)
        assert_allclose(occupancy_to_sdf(grid).values, brute_force_sdf(grid), atol=1e-9)


def test_sdf_sign_and_lipschitz(disc_window, disc_sdf):
    occupied = disc_window.cells.astype(bool)
    assert np.all(disc_sdf.values[occupied] <= 0)
    assert np.all(disc_sdf.values[~occupied] >= 0)
    res = disc_sdf.resolution
    assert np.all(np.abs(np.diff(disc_sdf.values, axis=1)) <= 2 * res + 1e-12)
    assert np.all(np.abs(disc_sdf.values) <= disc_sdf.diagonal + 1e-12)


def test_sample_sdf_identity_and_midpoint(rng):
    values = rng.normal(size=(6, 7))
    sdf = SdfGrid(7, 6, 0.5, (1.0, -2.0), values)
    xs, ys = sdf.cell_centers()
    assert sample_sdf(sdf, xs[3], ys[2]) == pytest.approx(values[2, 3])
    mid = sample_sdf(sdf, 0.5 * (xs[3] + xs[4]), ys[2])
    assert mid == pytest.approx(0.5 * (values[2, 3] + values[2, 4]))


def test_sample_sdf_matches_reference_bilinear(rng):
    values = rng.normal(size=(8, 8))
    sdf = SdfGrid(8, 8, 0.25, (0.0, 0.0), values)
    for _ in range(50):
        x, y = rng.uniform(0.125, 1.875, size=2)
        c, r = x / 0.25 - 0.5, y / 0.25 - 0.5
        i, j = int(math.floor(c)), int(math.floor(r))
        i, j = min(i, 6), min(j, 6)
        tx, ty = c - i, r - j
        expected = ((1 - ty) * ((1 - tx) * values[j, i] + tx * values[j, i + 1])
                    + ty * ((1 - tx) * values[j + 1, i] + tx * values[j + 1, i + 1]))
        assert sample_sdf(sdf, x, y) == pytest.approx(expected, abs=1e-12)


def test_sample_sdf_clamps_outside(rng):
    values = rng.normal(size=(4, 4))
    sdf = SdfGrid(4, 4, 1.0, (0.0, 0.0), values)
    assert sample_sdf(sdf, -10.0, 0.5) == pytest.approx(values[0, 0])
    assert sample_sdf(sdf, 100.0, 100.0) == pytest.approx(values[3, 3])


def test_gradient_of_linear_ramp():
    xs = (np.arange(10) + 0.5) * 0.2
    values = np.tile(0.7 * xs - 0.3, (10, 1)) + 0.4 * ((np.arange(10) + 0.5) * 0.2)[:, None]
    sdf = SdfGrid(10, 10, 0.2, (0.0, 0.0), values)
    gx, gy = sdf_gradient(sdf, 0.93, 1.27)
    assert gx == pytest.approx(0.7)
    assert gy == pytest.approx(0.4)


def test_gradient_of_constant_is_zero():
    sdf = SdfGrid(5, 5, 0.1, (0.0, 0.0), np.full((5, 5), 3.0))
    assert sdf_gradient(sdf, 0.23, 0.31) == (0.0, 0.0)


def test_gradient_matches_finite_differences(disc_sdf, rng):
    h = 1e-5
    for _ in range(20):
        x, y = rng.uniform(-2.5, 2.5, size=2)
        value, gx, gy = sdf_value_and_gradient(disc_sdf, x, y)
        fx = (sample_sdf(disc_sdf, x + h, y) - sample_sdf(disc_sdf, x - h, y)) / (2 * h)
        fy = (sample_sdf(disc_sdf, x, y + h) - sample_sdf(disc_sdf, x, y - h)) / (2 * h)
        assert value[0] == pytest.approx(sample_sdf(disc_sdf, x, y))
        assert gx[0] == pytest.approx(fx, abs=1e-6)
        assert gy[0] == pytest.approx(fy, abs=1e-6)


# =============================================================================
# Augmentation and windows
# =============================================================================

def test_augment_gives_eight_measure_preserving_variants(rng):
    cells = (rng.random((12, 12)) < 0.3).astype(np.uint8)
    grid = OccupancyGrid(12, 12, 0.1, (0.0, 0.0), cells)
    variants = augment([grid])
    assert len(variants) == 8
    assert all(v.cells.sum() == cells.sum() for v in variants)
    assert variants[0].equals(grid)
    assert len({v.fingerprint() for v in variants}) > 1


def test_rotation_group_identities(rng):
    cells = (rng.random((7, 7)) < 0.4).astype(np.uint8)
    assert_array_equal(np.rot90(np.rot90(np.rot90(np.rot90(cells)))), cells)
    grid = OccupancyGrid(7, 7, 0.1, (0.0, 0.0), cells)
    rotated = augment([grid])[1]
    for _ in range(3):
        rotated = augment([rotated])[1]
    assert rotated.equals(grid)
    flipped = augment([augment([grid])[4]])[4]
    assert flipped.equals(grid)


def test_augment_rejects_non_square():
    with pytest.raises(GeomError):
        augment([make_empty_grid(4, 5, 0.1)])


def test_window_inside_map_is_sub_block(rng):
    cells = (rng.random((200, 200)) < 0.2).astype(np.uint8)
    world = OccupancyGrid(200, 200, 0.06, (0.0, 0.0), cells)
    window = extract_window(world, (6.0, 6.0), 6.0)
    assert (window.width, window.height) == (100, 100)
    assert_array_equal(window.cells, cells[50:150, 50:150])
    assert window.origin == pytest.approx((3.0, 3.0))


def test_window_off_map_is_free():
    world = OccupancyGrid(100, 100, 0.06, (0.0, 0.0), np.ones((100, 100), dtype=np.uint8))
    window = extract_window(world, (0.0, 3.0), 6.0)
    assert window.cells[:, :50].sum() == 0
    assert window.cells[:, 50:].all()


def test_window_rejects_non_positive_side():
    with pytest.raises(GeomError):
        extract_window(make_empty_grid(4, 4, 0.1), (0.0, 0.0), 0.0)
