# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core.errors import StorageError
from core.geom import OccupancyGrid, SdfGrid, make_empty_grid, occupancy_to_sdf
from core.hyper import EpochMetrics, hyper_forward
from core.reach import StateGrid, ValueFunction
from core.sim import McReport
from core.storage import (Dataset, DatasetManifest, load_checkpoint, load_occupancy, load_report, load_sdf,
                          load_value_function, read_csv, read_json, save_checkpoint, save_metrics,
                          save_occupancy, save_report, save_sdf, save_value_function, write_csv, write_json)
from helpers import FIXTURES


def three_cell_grid() -> OccupancyGrid:
    return OccupancyGrid(3, 1, 0.5, (0.0, 0.0), np.array([[1, 0, 0]], dtype=np.uint8))


# =============================================================================
# Grids
# =============================================================================

def test_golden_sdf_loads():
    sdf = load_sdf(FIXTURES / "golden_sdf.json")
    assert (sdf.width, sdf.height, sdf.resolution) == (3, 1, 0.5)
    assert_array_equal(sdf.values, [[-0.5, 0.5, 1.0]])
    assert_array_equal(sdf.values, occupancy_to_sdf(three_cell_grid()).values)


def test_golden_sdf_is_reproduced_byte_for_byte(tmp_path):
    save_sdf(occupancy_to_sdf(three_cell_grid()), tmp_path / "sdf.json")
    assert (tmp_path / "sdf.f32").read_bytes() == (FIXTURES / "golden_sdf.f32").read_bytes()
    written = read_json(tmp_path / "sdf.json")
    golden = read_json(FIXTURES / "golden_sdf.json")
    written.pop("tool_version")
    golden.pop("tool_version")
    assert written == golden


def test_occupancy_round_trip(tmp_path, disc_window):
    save_occupancy(disc_window, tmp_path / "occ.json", "abc")
    loaded = load_occupancy(tmp_path / "occ.json")
    assert loaded.equals(disc_window)
    assert read_json(tmp_path / "occ.json")["config_hash"] == "abc"
    assert not list(tmp_path.glob("*.tmp"))


def test_format_version_mismatch(tmp_path):
    header = read_json(FIXTURES / "golden_sdf.json")
    header["format_version"] = 99
    write_json(tmp_path / "sdf.json", header)
    (tmp_path / "sdf.f32").write_bytes((FIXTURES / "golden_sdf.f32").read_bytes())
    with pytest.raises(StorageError, match="format version 99"):
        load_sdf(tmp_path / "sdf.json")


def test_kind_mismatch():
    with pytest.raises(StorageError, match="expected a occupancy header"):
        load_occupancy(FIXTURES / "golden_sdf.json")


def test_truncated_blob_names_the_file(tmp_path):
    (tmp_path / "sdf.json").write_text((FIXTURES / "golden_sdf.json").read_text(encoding="utf-8"),
                                       encoding="utf-8")
    (tmp_path / "sdf.f32").write_bytes((FIXTURES / "golden_sdf.f32").read_bytes()[:8])
    with pytest.raises(StorageError, match="sdf.f32: blob length 8 bytes, expected 12 bytes"):
        load_sdf(tmp_path / "sdf.json")


def test_missing_header(tmp_path):
    with pytest.raises(StorageError, match="not found"):
        load_sdf(tmp_path / "absent.json")


def test_value_function_round_trip(tmp_path, tiny_grid, rng):
    vf = ValueFunction(tiny_grid, rng.normal(size=tiny_grid.shape), False, 17, "dubins", 0.2)
    save_value_function(vf, tmp_path / "vf.json")
    loaded = load_value_function(tmp_path / "vf.json")
    assert loaded.grid == tiny_grid
    assert_array_equal(loaded.values, vf.values)
    assert (loaded.converged, loaded.sweeps, loaded.model_id, loaded.r_robot) == (False, 17, "dubins", 0.2)


# =============================================================================
# Checkpoints
# =============================================================================

def test_checkpoint_round_trip(tmp_path, tiny_checkpoint):
    save_checkpoint(tiny_checkpoint, tmp_path / "checkpoint.json", "feed")
    loaded = load_checkpoint(tmp_path / "checkpoint.json")
    assert loaded.hyper_spec == tiny_checkpoint.hyper_spec
    assert loaded.main_spec == tiny_checkpoint.main_spec
    assert loaded.state_grid == tiny_checkpoint.state_grid
    assert loaded.param_count == tiny_checkpoint.param_count
    assert loaded.train_config == tiny_checkpoint.train_config
    assert loaded.r_robot == pytest.approx(0.3)
    for name, value in tiny_checkpoint.weights.items():
        assert_allclose(loaded.weights[name], value.astype(np.float32), rtol=0, atol=0)

    sdf = SdfGrid(20, 20, 0.12, (0.0, 0.0), np.linspace(-0.5, 1.5, 400).reshape(20, 20))
    assert_allclose(hyper_forward(loaded, sdf), hyper_forward(tiny_checkpoint, sdf), atol=1e-5)


def test_checkpoint_with_missing_weights_is_refused(tmp_path, tiny_checkpoint):
    weights = dict(tiny_checkpoint.weights)
    weights.pop("head_b")
    broken = type(tiny_checkpoint)(**{**tiny_checkpoint.__dict__, "weights": weights})
    with pytest.raises(StorageError, match="head_b"):
        save_checkpoint(broken, tmp_path / "checkpoint.json")


def test_checkpoint_weight_table_is_checked(tmp_path, tiny_checkpoint):
    path = tmp_path / "checkpoint.json"
    save_checkpoint(tiny_checkpoint, path)
    header = json.loads(path.read_text(encoding="utf-8"))
    header["weights"][0]["shape"][0] += 1
    write_json(path, header)
    with pytest.raises(StorageError, match="weight table"):
        load_checkpoint(path)


# =============================================================================
# Dataset container
# =============================================================================

@pytest.fixture
def window_pair():
    occ = make_empty_grid(20, 20, 0.12, (-1.2, -1.2))
    return occ, occupancy_to_sdf(occ)


@pytest.fixture
def dataset(tmp_path, tiny_grid):
    manifest = DatasetManifest("dubins", tiny_grid, 20, 20, 0.12, (-1.2, -1.2), 0.0, 7, "cafe")
    return Dataset.create(tmp_path / "ds", manifest)


def test_dataset_add_and_label(dataset, window_pair, tiny_grid, rng):
    occ, sdf = window_pair
    assert dataset.add_sample(occ, sdf) == 0
    assert dataset.add_sample(occ, sdf) == 1
    dataset.save_manifest()

    vf = ValueFunction(tiny_grid, rng.normal(size=tiny_grid.shape), True, 12, "dubins", 0.0)
    dataset.write_label(0, vf)

    reopened = Dataset.open(dataset.root)
    assert reopened.count == 2
    assert reopened.is_labeled(0) and not reopened.is_labeled(1)
    assert_array_equal(reopened.label(0).values, vf.values)
    assert reopened.occupancy(1).equals(occ)
    assert_allclose(reopened.sdf(0).values, sdf.values, rtol=1e-6)
    with pytest.raises(StorageError, match="not labeled"):
        reopened.labeled()

    reopened.write_label(1, vf)
    data = Dataset.open(dataset.root).labeled()
    assert data.sdf.shape == (2, 20, 20)
    assert data.labels.shape == (2, tiny_grid.size)
    assert data.model_id == "dubins"


def test_dataset_refuses_second_create(dataset):
    with pytest.raises(StorageError, match="already exists"):
        Dataset.create(dataset.root, dataset.manifest)


def test_dataset_refuses_other_geometry(dataset):
    occ = make_empty_grid(10, 20, 0.12)
    with pytest.raises(StorageError, match="does not match"):
        dataset.add_sample(occ, occupancy_to_sdf(occ))


def test_label_grid_must_match(dataset, window_pair):
    dataset.add_sample(*window_pair)
    other = StateGrid((-1.0, -1.0, -np.pi), (1.0, 1.0, np.pi), (4, 4, 4), (False, False, True))
    with pytest.raises(StorageError, match="does not match dataset grid"):
        dataset.write_label(0, ValueFunction(other, np.zeros(other.shape), True, 1, "dubins", 0.0))


def test_verify_detects_missing_blob(dataset, window_pair):
    dataset.add_sample(*window_pair)
    dataset.save_manifest()
    (dataset.root / "samples" / "00000" / "sdf.f32").unlink()
    with pytest.raises(StorageError, match="missing"):
        Dataset.open(dataset.root)


def test_manifest_count_must_agree(dataset, window_pair):
    dataset.add_sample(*window_pair)
    dataset.save_manifest()
    data = read_json(dataset.manifest_path)
    data["count"] = 5
    write_json(dataset.manifest_path, data)
    with pytest.raises(StorageError, match="count 5"):
        Dataset.open(dataset.root)


# =============================================================================
# CSV and reports
# =============================================================================

def test_csv_accepts_dicts_and_sequences(tmp_path):
    path = tmp_path / "out" / "table.csv"
    write_csv(path, ("a", "b"), [{"a": 1, "b": "x"}, [2, "y"]])
    assert read_csv(path) == [{"a": "1", "b": "x"}, {"a": "2", "b": "y"}]


def test_metrics_csv(tmp_path):
    save_metrics([EpochMetrics(1, 0.5, 0.25, 0.75, 3, 1, 2, 4)], tmp_path / "metrics.csv")
    (row,) = read_csv(tmp_path / "metrics.csv")
    assert row["val_iou"] == "0.750000"
    assert list(row) == list(EpochMetrics.CSV_FIELDS)


def test_report_round_trip(tmp_path):
    rows = [{"mode": "sdf", "horizon": 5, "seed": 0, "env_hash": "ab", "outcome": "success", "steps": 40,
             "path_m": 8.1, "mean_solve_ms": 2.0, "p95_solve_ms": 3.5, "mean_hyper_ms": 0.0}]
    report = McReport(rows, {"sdf|5": {"success_rate": 1.0}}, [0], ["ab"], "0123456789abcdef")
    json_path, csv_path = save_report(report, tmp_path)
    assert json_path.name == "report.json" and csv_path.name == "episodes.csv"
    loaded = load_report(tmp_path)
    assert loaded.rows == rows
    assert loaded.success_rate("sdf", 5) == 1.0
    assert loaded.config_hash == report.config_hash
    assert read_csv(csv_path)[0]["outcome"] == "success"
