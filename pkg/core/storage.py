# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

"""
core/storage.py

On-disk containers for grids, value functions, checkpoints, datasets and
Monte Carlo reports.

Conventions:
  - Headers are canonical JSON (sorted keys) carrying format_version,
    tool_version and config_hash.
  - Blobs are raw little-endian arrays: <f4 for floats, u1 for occupancy,
    row-major, grid row 0 = minimal y.
  - Every write goes to <name>.tmp first and is renamed into place.

Dataset layout:
  <root>/manifest.json
  <root>/samples/00000/occ.u8
  <root>/samples/00000/sdf.f32
  <root>/samples/00000/vf.f32      (after labeling)
"""

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from core.errors import StorageError
from core.geom import OccupancyGrid, SdfGrid
from core.hyper import Checkpoint, EpochMetrics, HyperNetSpec, LabeledSet, MainNetSpec
from core.logger import get_logger
from core.reach import StateGrid, ValueFunction
from core.sim import EPISODE_FIELDS, TRACE_FIELDS, McReport
from core.version import FORMAT_VERSION, VERSION

logger = get_logger()

MANIFEST_NAME = "manifest.json"
SAMPLES_DIR = "samples"

F32 = np.dtype("<f4")
U8 = np.dtype("u1")


# =============================================================================
# Primitives
# =============================================================================

def dumps_canonical(data: dict) -> str:
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _atomic_write(path: Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(payload)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def write_json(path: Path, data: dict) -> None:
    _atomic_write(path, dumps_canonical(data).encode("utf-8"))


def read_json(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise StorageError(f"{path}: file not found") from e
    except (OSError, json.JSONDecodeError) as e:
        raise StorageError(f"{path}: cannot read header — {type(e).__name__}: {e}") from e


def write_blob(path: Path, array: np.ndarray, dtype: np.dtype) -> None:
    _atomic_write(path, np.ascontiguousarray(array, dtype=dtype).tobytes(order="C"))


def read_blob(path: Path, dtype: np.dtype, shape: tuple[int, ...]) -> np.ndarray:
    """Raw array of exactly prod(shape) elements; anything else is an error naming the file."""
    expected = int(np.prod(shape)) * dtype.itemsize
    try:
        payload = Path(path).read_bytes()
    except FileNotFoundError as e:
        raise StorageError(f"{path}: blob not found") from e
    if len(payload) != expected:
        raise StorageError(f"{path}: blob length {len(payload)} bytes, expected {expected} bytes")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def make_header(kind: str, config_hash: str = "", **fields) -> dict:
    return {"kind": kind, "format_version": FORMAT_VERSION, "tool_version": VERSION,
            "config_hash": config_hash, **fields}


def check_header(header: dict, kind: str, path: Path) -> None:
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise StorageError(f"{path}: format version {version}, this tool reads version {FORMAT_VERSION}")
    if header.get("kind") != kind:
        raise StorageError(f"{path}: expected a {kind} header, found '{header.get('kind')}'")


def _blob_path(header_path: Path, suffix: str) -> Path:
    return Path(header_path).with_suffix(suffix)


def _geometry(grid) -> dict:
    return {"width": grid.width, "height": grid.height, "resolution": grid.resolution,
            "origin": list(grid.origin)}


# =============================================================================
# Grids and value functions
# =============================================================================

def save_occupancy(grid: OccupancyGrid, path: Path, config_hash: str = "") -> None:
    """<path> header + <path>.u8 cells."""
    write_blob(_blob_path(path, ".u8"), grid.cells, U8)
    write_json(path, make_header("occupancy", config_hash, **_geometry(grid)))


def load_occupancy(path: Path) -> OccupancyGrid:
    header = read_json(path)
    check_header(header, "occupancy", path)
    cells = read_blob(_blob_path(path, ".u8"), U8, (header["height"], header["width"]))
    return OccupancyGrid(header["width"], header["height"], header["resolution"], tuple(header["origin"]), cells)


def save_sdf(sdf: SdfGrid, path: Path, config_hash: str = "") -> None:
    """<path> header + <path>.f32 values."""
    write_blob(_blob_path(path, ".f32"), sdf.values, F32)
    write_json(path, make_header("sdf", config_hash, **_geometry(sdf)))


def load_sdf(path: Path) -> SdfGrid:
    header = read_json(path)
    check_header(header, "sdf", path)
    values = read_blob(_blob_path(path, ".f32"), F32, (header["height"], header["width"]))
    return SdfGrid(header["width"], header["height"], header["resolution"], tuple(header["origin"]),
                   values.astype(np.float64))


def save_value_function(vf: ValueFunction, path: Path, config_hash: str = "") -> None:
    write_blob(_blob_path(path, ".f32"), vf.values, F32)
    write_json(path, make_header("value_function", config_hash, grid=vf.grid.to_dict(),
                                 converged=vf.converged, sweeps=vf.sweeps, model_id=vf.model_id,
                                 r_robot=vf.r_robot))


def load_value_function(path: Path) -> ValueFunction:
    header = read_json(path)
    check_header(header, "value_function", path)
    grid = StateGrid.from_dict(header["grid"])
    values = read_blob(_blob_path(path, ".f32"), F32, grid.shape)
    return ValueFunction(grid, values, bool(header["converged"]), int(header["sweeps"]),
                         header["model_id"], float(header["r_robot"]))


# =============================================================================
# Checkpoints
# =============================================================================

def save_checkpoint(ckpt: Checkpoint, path: Path, config_hash: str = "") -> None:
    """
    Header + one f32 blob holding every hypernetwork array back to back in
    HyperNetSpec.weight_shapes() order.
    """
    shapes = ckpt.hyper_spec.weight_shapes()
    missing = [name for name in shapes if name not in ckpt.weights]
    if missing:
        raise StorageError(f"checkpoint is missing weights {missing}")
    flat = np.concatenate([np.asarray(ckpt.weights[name]).ravel() for name in shapes])
    write_blob(_blob_path(path, ".f32"), flat, F32)
    write_json(path, make_header(
        "checkpoint", config_hash,
        hyper_spec=ckpt.hyper_spec.to_dict(), main_spec=ckpt.main_spec.to_dict(),
        weights=[{"name": name, "shape": list(shape)} for name, shape in shapes.items()],
        param_count=ckpt.param_count, sdf_mean=ckpt.sdf_mean, sdf_std=ckpt.sdf_std,
        resolution=ckpt.resolution, model_id=ckpt.model_id, state_grid=ckpt.state_grid.to_dict(),
        seed=ckpt.seed, train_config=ckpt.train_config, r_robot=ckpt.r_robot,
    ))
    logger.info(f"save_checkpoint: {path} — {flat.size} weights, main params={ckpt.param_count}")


def load_checkpoint(path: Path) -> Checkpoint:
    header = read_json(path)
    check_header(header, "checkpoint", path)
    hyper_spec = HyperNetSpec.from_dict(header["hyper_spec"])
    main_spec = MainNetSpec.from_dict(header["main_spec"])
    shapes = hyper_spec.weight_shapes()
    declared = {w["name"]: tuple(w["shape"]) for w in header["weights"]}
    if declared != shapes:
        raise StorageError(f"{path}: weight table does not match the hypernetwork spec")
    total = sum(int(np.prod(s)) for s in shapes.values())
    flat = read_blob(_blob_path(path, ".f32"), F32, (total,)).astype(np.float64)

    weights, offset = {}, 0
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        weights[name] = flat[offset:offset + size].reshape(shape)
        offset += size

    return Checkpoint(hyper_spec=hyper_spec, main_spec=main_spec, weights=weights,
                      sdf_mean=float(header["sdf_mean"]), sdf_std=float(header["sdf_std"]),
                      resolution=float(header["resolution"]), model_id=header["model_id"],
                      state_grid=StateGrid.from_dict(header["state_grid"]), seed=int(header["seed"]),
                      train_config=dict(header.get("train_config", {})), r_robot=float(header["r_robot"]))


# =============================================================================
# Dataset container
# =============================================================================

@dataclass
class DatasetManifest:
    """
    samples: one entry per sample, in index order:
             {"id", "occ", "sdf", "vf", "labeled", "converged", "sweeps"}
             with paths relative to the dataset root.
    """
    model_id: str
    state_grid: StateGrid
    width: int
    height: int
    resolution: float
    origin: tuple[float, float]
    r_robot: float
    seed: int
    config_hash: str = ""
    samples: list[dict] = field(default_factory=list)
    format_version: int = FORMAT_VERSION
    tool_version: str = VERSION

    @property
    def count(self) -> int:
        return len(self.samples)

    def to_dict(self) -> dict:
        return {
            "kind": "dataset", "format_version": self.format_version, "tool_version": self.tool_version,
            "config_hash": self.config_hash, "model_id": self.model_id,
            "state_grid": self.state_grid.to_dict(),
            "sdf": {"width": self.width, "height": self.height, "resolution": self.resolution,
                    "origin": list(self.origin)},
            "r_robot": self.r_robot, "seed": self.seed, "count": self.count, "samples": self.samples,
        }

    @classmethod
    def from_dict(cls, data: dict, path: Path) -> "DatasetManifest":
        check_header(data, "dataset", path)
        geometry = data["sdf"]
        manifest = cls(data["model_id"], StateGrid.from_dict(data["state_grid"]), int(geometry["width"]),
                       int(geometry["height"]), float(geometry["resolution"]), tuple(geometry["origin"]),
                       float(data["r_robot"]), int(data["seed"]), data.get("config_hash", ""),
                       list(data["samples"]), int(data["format_version"]), data["tool_version"])
        if data.get("count") != manifest.count:
            raise StorageError(f"{path}: count {data.get('count')} but {manifest.count} sample entries")
        return manifest


class Dataset:
    """Directory-backed dataset of local windows and their HJ labels."""

    def __init__(self, root: Path, manifest: DatasetManifest):
        self.root = Path(root)
        self.manifest = manifest

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    @property
    def count(self) -> int:
        return self.manifest.count

    @classmethod
    def create(cls, root: Path, manifest: DatasetManifest) -> "Dataset":
        root = Path(root)
        if (root / MANIFEST_NAME).exists():
            raise StorageError(f"{root}: a dataset already exists here")
        dataset = cls(root, manifest)
        dataset.save_manifest()
        return dataset

    @classmethod
    def open(cls, root: Path, verify: bool = True) -> "Dataset":
        root = Path(root)
        manifest = DatasetManifest.from_dict(read_json(root / MANIFEST_NAME), root / MANIFEST_NAME)
        dataset = cls(root, manifest)
        if verify:
            dataset.verify()
        return dataset

    def save_manifest(self) -> None:
        write_json(self.manifest_path, self.manifest.to_dict())

    def verify(self) -> None:
        """Every referenced file exists with the declared size."""
        m = self.manifest
        cells = m.width * m.height
        for entry in self.manifest.samples:
            expected = [("occ", cells * U8.itemsize), ("sdf", cells * F32.itemsize)]
            if entry.get("labeled"):
                expected.append(("vf", m.state_grid.size * F32.itemsize))
            for key, size in expected:
                path = self.root / entry[key]
                if not path.exists():
                    raise StorageError(f"{path}: referenced by the manifest but missing")
                if path.stat().st_size != size:
                    raise StorageError(f"{path}: blob length {path.stat().st_size} bytes, expected {size} bytes")

    # ---- samples ----

    def add_sample(self, occ: OccupancyGrid, sdf: SdfGrid) -> int:
        m = self.manifest
        if (occ.width, occ.height) != (m.width, m.height) or occ.resolution != m.resolution:
            raise StorageError(f"sample geometry {occ.width}×{occ.height}@{occ.resolution} does not match "
                               f"dataset {m.width}×{m.height}@{m.resolution}")
        index = m.count
        rel = f"{SAMPLES_DIR}/{index:05d}"
        write_blob(self.root / rel / "occ.u8", occ.cells, U8)
        write_blob(self.root / rel / "sdf.f32", sdf.values, F32)
        m.samples.append({"id": index, "occ": f"{rel}/occ.u8", "sdf": f"{rel}/sdf.f32", "vf": f"{rel}/vf.f32",
                          "labeled": False, "converged": None, "sweeps": None})
        return index

    def is_labeled(self, index: int) -> bool:
        return bool(self.manifest.samples[index].get("labeled"))

    def occupancy(self, index: int) -> OccupancyGrid:
        m = self.manifest
        cells = read_blob(self.root / m.samples[index]["occ"], U8, (m.height, m.width))
        return OccupancyGrid(m.width, m.height, m.resolution, m.origin, cells)

    def sdf(self, index: int) -> SdfGrid:
        m = self.manifest
        values = read_blob(self.root / m.samples[index]["sdf"], F32, (m.height, m.width))
        return SdfGrid(m.width, m.height, m.resolution, m.origin, values.astype(np.float64))

    def write_label(self, index: int, vf: ValueFunction) -> None:
        """Store a label; the manifest is rewritten so an interrupted run resumes here."""
        if vf.grid != self.manifest.state_grid:
            raise StorageError(f"label grid {vf.grid.counts} does not match dataset grid "
                               f"{self.manifest.state_grid.counts}")
        entry = self.manifest.samples[index]
        write_blob(self.root / entry["vf"], vf.values, F32)
        entry.update(labeled=True, converged=bool(vf.converged), sweeps=int(vf.sweeps))
        self.save_manifest()

    def label(self, index: int) -> ValueFunction:
        m = self.manifest
        entry = m.samples[index]
        if not entry.get("labeled"):
            raise StorageError(f"sample {index} is not labeled")
        values = read_blob(self.root / entry["vf"], F32, m.state_grid.shape)
        return ValueFunction(m.state_grid, values, bool(entry["converged"]), int(entry["sweeps"]),
                             m.model_id, m.r_robot)

    def labeled(self) -> LabeledSet:
        """All samples stacked for training; every sample must be labeled."""
        m = self.manifest
        pending = [e["id"] for e in m.samples if not e.get("labeled")]
        if pending:
            raise StorageError(f"{len(pending)} samples are not labeled yet (first: {pending[0]})")
        if m.count == 0:
            raise StorageError(f"{self.root}: dataset is empty")
        sdf = np.stack([self.sdf(i).values for i in range(m.count)])
        labels = np.stack([self.label(i).values.ravel() for i in range(m.count)])
        return LabeledSet(sdf, labels, m.state_grid, m.model_id, m.resolution, m.r_robot)


# =============================================================================
# CSV outputs and reports
# =============================================================================

def write_csv(path: Path, header: list[str] | tuple[str, ...], rows: list) -> None:
    """Rows are dicts keyed by header or plain sequences."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[k] for k in header] if isinstance(row, dict) else row)
    os.replace(tmp, path)


def read_csv(path: Path) -> list[dict]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            return list(csv.DictReader(f))
    except FileNotFoundError as e:
        raise StorageError(f"{path}: file not found") from e


def save_metrics(history: list[EpochMetrics], path: Path) -> None:
    write_csv(path, EpochMetrics.CSV_FIELDS, [row.csv_row() for row in history])


def save_trace(trace: list[dict], path: Path) -> None:
    write_csv(path, TRACE_FIELDS, trace)


def save_report(report: McReport, out_dir: Path) -> tuple[Path, Path]:
    """report.json (summary) and episodes.csv (one row per episode)."""
    out_dir = Path(out_dir)
    json_path, csv_path = out_dir / "report.json", out_dir / "episodes.csv"
    write_csv(csv_path, EPISODE_FIELDS, report.rows)
    write_json(json_path, make_header("mc_report", report.config_hash, summary=report.summary,
                                      seeds=report.seeds, env_hashes=report.env_hashes, rows=report.rows))
    logger.info(f"save_report: {json_path} — {len(report.rows)} episodes")
    return json_path, csv_path


def load_report(out_dir: Path) -> McReport:
    path = Path(out_dir) / "report.json"
    header = read_json(path)
    check_header(header, "mc_report", path)
    return McReport(list(header["rows"]), dict(header["summary"]), list(header["seeds"]),
                    list(header["env_hashes"]), header["config_hash"])
