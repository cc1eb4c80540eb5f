# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from core.config import RunConfig
from core.dynamics import dubins, unicycle2
from core.geom import add_disc, make_empty_grid, occupancy_to_sdf
from core.hyper import Checkpoint, HyperNetSpec, default_main_spec, init_hyper_weights, param_count
from core.reach import StateGrid
from helpers import tiny_labeled_set, tiny_train_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def dubins_model():
    return dubins()


@pytest.fixture
def unicycle_model():
    return unicycle2()


@pytest.fixture
def disc_window():
    """6×6 m window centered on the origin, disc of radius 0.5 m in the middle."""
    grid = make_empty_grid(50, 50, 0.12, (-3.0, -3.0))
    return add_disc(grid, 0.0, 0.0, 0.5)


@pytest.fixture
def disc_sdf(disc_window):
    return occupancy_to_sdf(disc_window)


@pytest.fixture
def tiny_grid():
    """Small Dubins state grid over a 2.4 m window."""
    return StateGrid((-1.14, -1.14, -np.pi), (1.14, 1.14, np.pi), (5, 5, 4), (False, False, True))


@pytest.fixture
def tiny_data(tiny_grid):
    return tiny_labeled_set(tiny_grid)


@pytest.fixture
def tiny_checkpoint(tiny_grid):
    main_spec = default_main_spec(3, (8, 8), 1)
    hyper_spec = HyperNetSpec(20, 20, ((2, 3, 2),), (8,), param_count(main_spec))
    weights = init_hyper_weights(hyper_spec, main_spec, np.random.default_rng(0), 0.01)
    return Checkpoint(hyper_spec=hyper_spec, main_spec=main_spec, weights=weights, sdf_mean=0.5, sdf_std=0.4,
                      resolution=0.12, model_id="dubins", state_grid=tiny_grid, seed=0,
                      train_config=tiny_train_config().to_dict(), r_robot=0.3)


@pytest.fixture
def default_config():
    return RunConfig()
