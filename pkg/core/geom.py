# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

"""
core/geom.py

Occupancy grids, exact signed distance fields, random environments,
dataset augmentation and local-window extraction.

Coordinate convention:
    cells[row, col] with row ↔ y and col ↔ x; row 0 is the minimal y.
    origin is the world (x, y) of the outer corner of cell (0, 0), so the
    center of cell (row, col) is origin + ((col + 0.5)·res, (row + 0.5)·res).
    Distances are measured between cell centers.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt, map_coordinates

from core.errors import GeomError, InvalidGridError
from core.logger import get_logger

logger = get_logger()

# Rejection-sampling budget of gen_random_env (all obstacles together)
MAX_PLACEMENT_ATTEMPTS = 1000

OBSTACLE_SHAPES = ("disc", "rect")


def _validate_geometry(width: int, height: int, resolution: float) -> None:
    if width < 1 or height < 1:
        raise InvalidGridError(f"grid must be at least 1×1 cells, got {width}×{height}")
    if not resolution > 0:
        raise InvalidGridError(f"resolution must be positive, got {resolution}")


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """
    Rasterized 2D environment.
    cells: (height, width) uint8 array, 0 = free, 1 = occupied.
    """
    width: int
    height: int
    resolution: float
    origin: tuple[float, float]
    cells: np.ndarray

    def __post_init__(self):
        _validate_geometry(self.width, self.height, self.resolution)
        cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        if cells.shape != (self.height, self.width):
            raise InvalidGridError(
                f"cells shape {cells.shape} does not match height×width {(self.height, self.width)}"
            )
        if cells.size and cells.max() > 1:
            raise InvalidGridError("cells must hold only 0 (free) or 1 (occupied)")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height) * self.resolution)

    @property
    def center(self) -> tuple[float, float]:
        return (self.origin[0] + 0.5 * self.width * self.resolution,
                self.origin[1] + 0.5 * self.height * self.resolution)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(xs, ys): world coordinates of column and row centers."""
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution
        return xs, ys

    def is_occupied(self, x: float, y: float) -> bool:
        """Occupancy of the cell containing (x, y); outside the map is free."""
        col = int(np.floor((x - self.origin[0]) / self.resolution))
        row = int(np.floor((y - self.origin[1]) / self.resolution))
        if 0 <= row < self.height and 0 <= col < self.width:
            return bool(self.cells[row, col])
        return False

    def fingerprint(self) -> str:
        """SHA-256 over geometry and cell bytes; equal grids have equal fingerprints."""
        h = hashlib.sha256()
        h.update(f"{self.width},{self.height},{self.resolution!r},{self.origin!r}".encode())
        h.update(self.cells.tobytes())
        return h.hexdigest()

    def equals(self, other: "OccupancyGrid") -> bool:
        return (self.width == other.width and self.height == other.height
                and self.resolution == other.resolution and self.origin == other.origin
                and np.array_equal(self.cells, other.cells))


@dataclass(frozen=True, eq=False)
class SdfGrid:
    """
    Signed distance field on the cell centers of an occupancy grid.
    values: (height, width) float64 array in meters, positive in free space.
    """
    width: int
    height: int
    resolution: float
    origin: tuple[float, float]
    values: np.ndarray

    def __post_init__(self):
        _validate_geometry(self.width, self.height, self.resolution)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.shape != (self.height, self.width):
            raise InvalidGridError(
                f"values shape {values.shape} does not match height×width {(self.height, self.width)}"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height) * self.resolution)

    @property
    def center(self) -> tuple[float, float]:
        return (self.origin[0] + 0.5 * self.width * self.resolution,
                self.origin[1] + 0.5 * self.height * self.resolution)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution
        return xs, ys

    def center_extent(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) spanned by the cell centers."""
        xs, ys = self.cell_centers()
        return float(xs[0]), float(xs[-1]), float(ys[0]), float(ys[-1])


@dataclass(frozen=True)
class EnvSpec:
    """
    Recipe for a random environment.

    size:           map width and height (m)
    obstacle_count: inclusive (min, max) number of obstacles
    obstacle_size:  inclusive (min, max) disc radius / rectangle half-side (m)
    corridor:       keep discs of radius `clearance` around start and goal free
    """
    size: tuple[float, float] = (10.0, 8.0)
    resolution: float = 0.06
    origin: tuple[float, float] = (0.0, 0.0)
    obstacle_count: tuple[int, int] = (3, 7)
    shapes: tuple[str, ...] = OBSTACLE_SHAPES
    obstacle_size: tuple[float, float] = (0.3, 0.9)
    corridor: bool = True
    start: tuple[float, float] = (1.0, 4.0)
    goal: tuple[float, float] = (9.0, 4.0)
    clearance: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise GeomError(f"map size must be positive, got {self.size}")
        if not self.resolution > 0:
            raise GeomError(f"resolution must be positive, got {self.resolution}")
        lo, hi = self.obstacle_count
        if lo < 0 or hi < lo:
            raise GeomError(f"obstacle_count range is empty or negative: {self.obstacle_count}")
        s_lo, s_hi = self.obstacle_size
        if s_lo <= 0 or s_hi < s_lo:
            raise GeomError(f"obstacle_size range is empty or non-positive: {self.obstacle_size}")
        if not self.shapes or any(s not in OBSTACLE_SHAPES for s in self.shapes):
            raise GeomError(f"shapes must be a non-empty subset of {OBSTACLE_SHAPES}, got {self.shapes}")
        if self.clearance < 0:
            raise GeomError(f"clearance must be non-negative, got {self.clearance}")

    def with_seed(self, seed: int) -> "EnvSpec":
        return EnvSpec(**{**self.__dict__, "seed": int(seed)})


@dataclass
class _Obstacle:
    shape: str
    cx: float
    cy: float
    half: tuple[float, float] = field(default=(0.0, 0.0))
    radius: float = 0.0

    def distance_to(self, px: float, py: float) -> float:
        """Euclidean distance from a point to the obstacle (0 inside)."""
        if self.shape == "disc":
            return max(0.0, float(np.hypot(px - self.cx, py - self.cy)) - self.radius)
        dx = max(abs(px - self.cx) - self.half[0], 0.0)
        dy = max(abs(py - self.cy) - self.half[1], 0.0)
        return float(np.hypot(dx, dy))


def make_empty_grid(width: int, height: int, resolution: float,
                    origin: tuple[float, float] = (0.0, 0.0)) -> OccupancyGrid:
    """All-free occupancy grid."""
    return OccupancyGrid(width, height, resolution, origin, np.zeros((height, width), dtype=np.uint8))


def _with_mask(grid: OccupancyGrid, mask: np.ndarray) -> OccupancyGrid:
    cells = grid.cells.copy()
    cells[mask] = 1
    return OccupancyGrid(grid.width, grid.height, grid.resolution, grid.origin, cells)


def add_disc(grid: OccupancyGrid, cx: float, cy: float, radius: float) -> OccupancyGrid:
    """New grid with every cell whose center lies in the disc marked occupied."""
    xs, ys = grid.cell_centers()
    xx, yy = np.meshgrid(xs, ys)
    return _with_mask(grid, (xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2)


def add_rect(grid: OccupancyGrid, x_min: float, y_min: float, x_max: float, y_max: float) -> OccupancyGrid:
    """New grid with every cell whose center lies in the axis-aligned rectangle marked occupied."""
    xs, ys = grid.cell_centers()
    xx, yy = np.meshgrid(xs, ys)
    return _with_mask(grid, (xx >= x_min) & (xx <= x_max) & (yy >= y_min) & (yy <= y_max))


def gen_random_env(spec: EnvSpec) -> OccupancyGrid:
    """
    Random obstacle field, a pure function of spec (seed included).

    Obstacle centers are drawn so that each obstacle lies inside the map.
    With spec.corridor set, obstacles closer than spec.clearance to the start
    or goal are rejected and redrawn.

    Raises GeomError("unsatisfiable spec") after MAX_PLACEMENT_ATTEMPTS draws.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    width = int(round(spec.size[0] / spec.resolution))
    height = int(round(spec.size[1] / spec.resolution))
    grid = make_empty_grid(width, height, spec.resolution, spec.origin)

    x0, y0 = spec.origin
    x1, y1 = x0 + width * spec.resolution, y0 + height * spec.resolution
    n_obstacles = int(rng.integers(spec.obstacle_count[0], spec.obstacle_count[1] + 1))

    placed: list[_Obstacle] = []
    attempts = 0
    while len(placed) < n_obstacles:
        if attempts >= MAX_PLACEMENT_ATTEMPTS:
            logger.error(f"gen_random_env: seed {spec.seed} placed {len(placed)}/{n_obstacles} "
                         f"obstacles in {attempts} attempts")
            raise GeomError("unsatisfiable spec")
        attempts += 1

        shape = spec.shapes[int(rng.integers(len(spec.shapes)))]
        if shape == "disc":
            r = float(rng.uniform(*spec.obstacle_size))
            half = (r, r)
        else:
            half = (float(rng.uniform(*spec.obstacle_size)), float(rng.uniform(*spec.obstacle_size)))
            r = 0.0
        if x1 - x0 <= 2 * half[0] or y1 - y0 <= 2 * half[1]:
            continue
        cx = float(rng.uniform(x0 + half[0], x1 - half[0]))
        cy = float(rng.uniform(y0 + half[1], y1 - half[1]))
        obstacle = _Obstacle(shape, cx, cy, half=half, radius=r)

        if spec.corridor and (obstacle.distance_to(*spec.start) < spec.clearance
                              or obstacle.distance_to(*spec.goal) < spec.clearance):
            continue
        placed.append(obstacle)

    for ob in placed:
        if ob.shape == "disc":
            grid = add_disc(grid, ob.cx, ob.cy, ob.radius)
        else:
            grid = add_rect(grid, ob.cx - ob.half[0], ob.cy - ob.half[1], ob.cx + ob.half[0], ob.cy + ob.half[1])

    logger.debug(f"gen_random_env: seed={spec.seed} obstacles={len(placed)} attempts={attempts} "
                 f"occupied={int(grid.cells.sum())}")
    return grid


def occupancy_to_sdf(grid: OccupancyGrid) -> SdfGrid:
    """
    Exact Euclidean signed distance between cell centers.

    values = distance to the nearest occupied center − distance to the nearest
    free center. A grid without obstacles gets +diagonal everywhere, a fully
    occupied grid −diagonal.
    """
    occupied = grid.cells.astype(bool)
    diagonal = grid.diagonal

    if not occupied.any():
        values = np.full(occupied.shape, diagonal)
    elif occupied.all():
        values = np.full(occupied.shape, -diagonal)
    else:
        dist_to_occupied = distance_transform_edt(~occupied, sampling=grid.resolution)
        dist_to_free = distance_transform_edt(occupied, sampling=grid.resolution)
        values = dist_to_occupied - dist_to_free

    return SdfGrid(grid.width, grid.height, grid.resolution, grid.origin, values)


def _continuous_index(sdf: SdfGrid, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Fractional (col, row) of world points, 0 at the first cell center."""
    col = (np.asarray(x, dtype=np.float64) - sdf.origin[0]) / sdf.resolution - 0.5
    row = (np.asarray(y, dtype=np.float64) - sdf.origin[1]) / sdf.resolution - 0.5
    return col, row


def sample_sdf(sdf: SdfGrid, x, y):
    """
    Bilinear interpolation of the cell-center values.
    Queries outside the grid take the value of the nearest border cell.
    Scalars in, float out; arrays in, array out.
    """
    col, row = _continuous_index(sdf, x, y)
    scalar = col.ndim == 0
    coords = np.vstack([np.atleast_1d(row).ravel(), np.atleast_1d(col).ravel()])
    out = map_coordinates(sdf.values, coords, order=1, mode="nearest")
    if scalar:
        return float(out[0])
    return out.reshape(np.shape(col))


def sdf_value_and_gradient(sdf: SdfGrid, x, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Bilinear value and its analytic gradient (∂/∂x, ∂/∂y) at world points.
    The gradient is zero along an axis on which the query was clamped.
    """
    col, row = _continuous_index(sdf, np.atleast_1d(x), np.atleast_1d(y))
    values = sdf.values

    def _axis(coord: np.ndarray, n: int):
        inside = (coord >= 0.0) & (coord <= n - 1)
        c = np.clip(coord, 0.0, n - 1)
        if n == 1:
            return np.zeros_like(c, dtype=np.intp), np.zeros_like(c), np.zeros_like(c), inside
        i0 = np.minimum(np.floor(c).astype(np.intp), n - 2)
        return i0, c - i0, inside.astype(np.float64), inside

    i0, tx, sx, _ = _axis(col, sdf.width)
    j0, ty, sy, _ = _axis(row, sdf.height)
    i1 = np.minimum(i0 + 1, sdf.width - 1)
    j1 = np.minimum(j0 + 1, sdf.height - 1)

    f00 = values[j0, i0]
    f01 = values[j0, i1]
    f10 = values[j1, i0]
    f11 = values[j1, i1]

    value = (1 - ty) * ((1 - tx) * f00 + tx * f01) + ty * ((1 - tx) * f10 + tx * f11)
    gx = ((1 - ty) * (f01 - f00) + ty * (f11 - f10)) / sdf.resolution * sx
    gy = ((1 - tx) * (f10 - f00) + tx * (f11 - f01)) / sdf.resolution * sy
    return value, gx, gy


def sdf_gradient(sdf: SdfGrid, x, y):
    """Analytic gradient (∂/∂x, ∂/∂y) of the bilinear interpolant."""
    _, gx, gy = sdf_value_and_gradient(sdf, x, y)
    if np.ndim(x) == 0:
        return float(gx[0]), float(gy[0])
    return gx.reshape(np.shape(x)), gy.reshape(np.shape(x))


def augment(grids: list[OccupancyGrid]) -> list[OccupancyGrid]:
    """
    Eight exact variants per square grid: identity, rotations by 90/180/270
    degrees, the vertical flip, and the three rotations of the flip.
    """
    out: list[OccupancyGrid] = []
    for index, grid in enumerate(grids):
        if grid.width != grid.height:
            raise GeomError(f"augment needs square grids, grid {index} is {grid.width}×{grid.height}")
        flipped = np.flipud(grid.cells)
        for base in (grid.cells, flipped):
            for k in range(4):
                cells = np.ascontiguousarray(np.rot90(base, k))
                out.append(OccupancyGrid(grid.width, grid.height, grid.resolution, grid.origin, cells))
    return out


def extract_window(global_grid: OccupancyGrid, center: tuple[float, float], side: float) -> OccupancyGrid:
    """
    Square local window around center, aligned with the global cells.
    Cells beyond the global map are free.
    """
    if not side > 0:
        raise GeomError(f"window side must be positive, got {side}")

    res = global_grid.resolution
    n = max(1, int(round(side / res)))
    col0 = int(round((center[0] - global_grid.origin[0]) / res - 0.5 * n))
    row0 = int(round((center[1] - global_grid.origin[1]) / res - 0.5 * n))

    cells = np.zeros((n, n), dtype=np.uint8)
    src_r0, src_r1 = max(row0, 0), min(row0 + n, global_grid.height)
    src_c0, src_c1 = max(col0, 0), min(col0 + n, global_grid.width)
    if src_r0 < src_r1 and src_c0 < src_c1:
        cells[src_r0 - row0:src_r1 - row0, src_c0 - col0:src_c1 - col0] = \
            global_grid.cells[src_r0:src_r1, src_c0:src_c1]

    origin = (global_grid.origin[0] + col0 * res, global_grid.origin[1] + row0 * res)
    return OccupancyGrid(n, n, res, origin, cells)
