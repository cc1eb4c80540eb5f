# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

"""Small builders shared by the test modules."""

from pathlib import Path

import numpy as np

from core.config import TrainConfig
from core.geom import add_disc, make_empty_grid, occupancy_to_sdf
from core.hyper import LabeledSet
from core.reach import StateGrid

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def tiny_train_config(**changes) -> TrainConfig:
    base = TrainConfig(epochs=2, batch=2, lr=1e-3, subsample=1.0, hidden=(8, 8), sine_layers=1,
                       conv=((2, 3, 2),), fc_hidden=(8,), head_scale=0.01)
    return base.replace(**changes)


def tiny_labeled_set(grid: StateGrid, count: int = 3, seed: int = 0) -> LabeledSet:
    """20×20 SDF images with one disc each; labels are a smooth function of the disc."""
    rng = np.random.default_rng(seed)
    sdf, labels = [], []
    points = grid.points()
    for _ in range(count):
        cx, cy = rng.uniform(-0.6, 0.6, size=2)
        window = add_disc(make_empty_grid(20, 20, 0.12, (-1.2, -1.2)), cx, cy, 0.3)
        sdf.append(occupancy_to_sdf(window).values)
        labels.append(np.hypot(points[:, 0] - cx, points[:, 1] - cy) - 0.5)
    return LabeledSet(np.stack(sdf), np.stack(labels), grid, "dubins", 0.12)
