"""Static environment representation: point map, voxel occupancy and the two
precomputed fields (map-match likelihood for MCL, obstacle clearance for the
planners).

All grids index cells as ``[ix, iy, iz]``. Cell ``k`` along an axis spans
``[(k0 + k) * res, (k0 + k + 1) * res)`` where ``k0`` is the integer origin
index, so grids built at the same resolution share cell boundaries.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import ndimage

SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass
class PointMap:
    points: np.ndarray  # (n, 3) map frame, meters

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1 and pts.size == 3:
            pts = pts.reshape(1, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("points must be an (n, 3) array")
        self.points = pts

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.points) == 0:
            raise ValueError("empty map")
        return self.points.min(axis=0), self.points.max(axis=0)

    def digest(self) -> str:
        return hashlib.sha1(np.ascontiguousarray(self.points).tobytes()).hexdigest()


def load_point_map(path: Union[str, Path]) -> PointMap:
    """Read an ASCII map: one ``x y z`` triple per line, ``#`` comments."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"map file not found: {path}")
    pts = np.loadtxt(path, comments="#", ndmin=2)
    if pts.size == 0:
        raise ValueError(f"empty map: {path}")
    if pts.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 columns per line, got {pts.shape[1]}")
    return PointMap(pts)


def save_point_map(pmap: PointMap, path: Union[str, Path], header: str = "") -> None:
    np.savetxt(path, pmap.points, fmt="%.4f", header=header)


@dataclass
class VoxelGrid:
    resolution: float
    origin_index: np.ndarray  # (3,) int, origin = origin_index * resolution
    occupancy: np.ndarray  # bool, shape == dims

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.origin_index = np.asarray(self.origin_index, dtype=np.int64).reshape(3)
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if self.occupancy.ndim != 3 or min(self.occupancy.shape) <= 0:
            raise ValueError("occupancy must be a non-empty 3D array")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.occupancy.shape)  # type: ignore[return-value]

    @property
    def origin(self) -> np.ndarray:
        return self.origin_index * self.resolution

    @property
    def upper(self) -> np.ndarray:
        return (self.origin_index + np.array(self.dims)) * self.resolution

    def world_to_index(self, points: np.ndarray) -> np.ndarray:
        """Integer cell index of each point (may be out of bounds)."""
        pts = np.asarray(points, dtype=float)
        return np.floor(pts / self.resolution).astype(np.int64) - self.origin_index

    def index_to_world(self, idx: np.ndarray) -> np.ndarray:
        """Cell-center coordinates."""
        idx = np.asarray(idx, dtype=float)
        return (idx + self.origin_index + 0.5) * self.resolution

    def in_bounds(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx)
        return np.all((idx >= 0) & (idx < np.array(self.dims)), axis=-1)

    def is_occupied(self, points: np.ndarray) -> np.ndarray:
        """Occupancy at each point; out-of-bounds reads as free."""
        idx = self.world_to_index(points)
        ok = self.in_bounds(idx)
        out = np.zeros(idx.shape[:-1], dtype=bool)
        if np.any(ok):
            sel = idx[ok]
            out[ok] = self.occupancy[sel[:, 0], sel[:, 1], sel[:, 2]]
        return out

    def occupied_centers(self) -> np.ndarray:
        return self.index_to_world(np.argwhere(self.occupancy))


def build_voxel_grid(pmap: PointMap, resolution: float) -> VoxelGrid:
    """Occupancy grid covering the map bounds plus one cell of padding."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if len(pmap.points) == 0:
        raise ValueError("empty map")
    cells = np.floor(pmap.points / resolution).astype(np.int64)
    lo = cells.min(axis=0) - 1
    hi = cells.max(axis=0) + 1
    dims = hi - lo + 1
    occ = np.zeros(tuple(dims), dtype=bool)
    rel = cells - lo
    occ[rel[:, 0], rel[:, 1], rel[:, 2]] = True
    return VoxelGrid(resolution, lo, occ)


def empty_grid_like(grid: VoxelGrid) -> VoxelGrid:
    return VoxelGrid(grid.resolution, grid.origin_index.copy(), np.zeros(grid.dims, dtype=bool))


def grid_from_box(lower: np.ndarray, upper: np.ndarray, resolution: float) -> VoxelGrid:
    """Empty grid whose cells cover the axis-aligned box [lower, upper]."""
    lo = np.floor(np.asarray(lower, float) / resolution).astype(np.int64)
    hi = np.floor(np.asarray(upper, float) / resolution).astype(np.int64)
    dims = np.maximum(hi - lo + 1, 1)
    return VoxelGrid(resolution, lo, np.zeros(tuple(dims), dtype=bool))


def _center_distance(grid: VoxelGrid) -> np.ndarray:
    """Euclidean distance from every cell center to the nearest occupied cell
    center; ``inf`` when the grid has no occupied cell."""
    if not grid.occupancy.any():
        return np.full(grid.dims, np.inf)
    return ndimage.distance_transform_edt(~grid.occupancy, sampling=grid.resolution)


@dataclass
class _Field:
    resolution: float
    origin_index: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.values_array.shape)  # type: ignore[attr-defined]

    def _flat_lookup(self, points: np.ndarray, table: np.ndarray, fill: float) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = pts.reshape(-1, 3)
        idx = np.floor(pts / self.resolution).astype(np.int64) - self.origin_index
        dims = np.array(table.shape)
        ok = np.all((idx >= 0) & (idx < dims), axis=1)
        out = np.full(len(pts), fill, dtype=float)
        if np.any(ok):
            sel = idx[ok]
            out[ok] = table[sel[:, 0], sel[:, 1], sel[:, 2]]
        return out[0] if single else out


@dataclass
class LikelihoodField(_Field):
    sigma: float
    truncation_radius: float
    values: np.ndarray = field(repr=False)

    @property
    def values_array(self) -> np.ndarray:
        return self.values

    @property
    def peak(self) -> float:
        return 1.0 / (SQRT_2PI * self.sigma)


@dataclass
class DistanceField(_Field):
    max_dist: float
    distances: np.ndarray = field(repr=False)

    @property
    def values_array(self) -> np.ndarray:
        return self.distances

    def at(self, points: np.ndarray) -> np.ndarray:
        """Clearance at points; ``max_dist`` outside the grid."""
        return self._flat_lookup(points, self.distances, self.max_dist)


def build_likelihood_field(grid: VoxelGrid, sigma: float = 0.2,
                           truncation_radius: Optional[float] = None) -> LikelihoodField:
    """Gaussian map-match density around the nearest occupied cell center."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if truncation_radius is None:
        truncation_radius = 3.0 * sigma
    if truncation_radius < sigma:
        raise ValueError("truncation_radius must be >= sigma")
    d = _center_distance(grid)
    peak = 1.0 / (SQRT_2PI * sigma)
    with np.errstate(over="ignore", invalid="ignore"):
        vals = peak * np.exp(-(d * d) / (2.0 * sigma * sigma))
    vals[~(d <= truncation_radius)] = 0.0
    return LikelihoodField(grid.resolution, grid.origin_index.copy(), sigma,
                           truncation_radius, vals)


def build_distance_field(grid: VoxelGrid, max_dist: float = 5.0) -> DistanceField:
    """Exact Euclidean distance transform over cell centers, clamped."""
    if max_dist <= 0:
        raise ValueError("max_dist must be positive")
    d = np.minimum(_center_distance(grid), max_dist)
    return DistanceField(grid.resolution, grid.origin_index.copy(), max_dist, d)


def query_likelihood(lfield: LikelihoodField, p: np.ndarray) -> Union[float, np.ndarray]:
    """Likelihood of the cell containing ``p`` (0 outside the field)."""
    return lfield._flat_lookup(p, lfield.values, 0.0)


# -- field cache -------------------------------------------------------------

def _cache_key(pmap: PointMap, resolution: float, sigma: float, truncation: float,
               max_dist: float) -> str:
    h = hashlib.sha1()
    h.update(pmap.digest().encode())
    h.update(np.array([resolution, sigma, truncation, max_dist]).tobytes())
    return h.hexdigest()[:20]


def load_or_build_fields(pmap: PointMap, resolution: float, sigma: float,
                         truncation: Optional[float] = None, max_dist: float = 5.0,
                         cache_dir: Optional[Union[str, Path]] = None
                         ) -> tuple[VoxelGrid, LikelihoodField, DistanceField]:
    """Build grid + fields, reusing an ``.npz`` cache when ``cache_dir`` is set."""
    truncation = 3.0 * sigma if truncation is None else truncation
    cache_file = None
    if cache_dir is not None:
        key = _cache_key(pmap, resolution, sigma, truncation, max_dist)
        cache_file = Path(cache_dir) / f"fields_{key}.npz"
        if cache_file.is_file():
            z = np.load(cache_file)
            grid = VoxelGrid(resolution, z["origin_index"], z["occupancy"])
            lf = LikelihoodField(resolution, grid.origin_index.copy(), sigma, truncation,
                                 z["likelihood"])
            df = DistanceField(resolution, grid.origin_index.copy(), max_dist, z["distance"])
            return grid, lf, df
    grid = build_voxel_grid(pmap, resolution)
    lf = build_likelihood_field(grid, sigma, truncation)
    df = build_distance_field(grid, max_dist)
    if cache_file is not None:
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(cache_file, origin_index=grid.origin_index,
                            occupancy=grid.occupancy, likelihood=lf.values,
                            distance=df.distances)
    return grid, lf, df
