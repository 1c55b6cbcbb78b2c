"""Thermal fire detection, range association and information-filter
triangulation of fire positions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .sim.sensors import CAMERA_RANGE, ThermalImage, pixel_rays, project

DEFAULT_THRESHOLD = 60.0
DEFAULT_MIN_BLOB = 4
EIGHT = np.ones((3, 3), dtype=bool)

# relative range uncertainty (1 sigma, fraction of range) per range source
RANGE_REL_SIGMA = {"lidar": 0.05, "altitude": 0.05, "map": 0.3}
PIXEL_SIGMA = 1.5


class RangeUnavailable(RuntimeError):
    pass


class DegenerateMeasurement(ValueError):
    pass


@dataclass(frozen=True)
class FireDetection2D:
    centroid: tuple[float, float]  # (u, v) pixels
    pixel_count: int
    mean_temperature: float
    bbox: tuple[int, int, int, int]  # u0, v0, u1, v1 inclusive


def segment_fire(img, threshold: float = DEFAULT_THRESHOLD,
                 min_blob: int = DEFAULT_MIN_BLOB) -> list[FireDetection2D]:
    """8-connected blobs at or above ``threshold``, largest first."""
    if not CAMERA_RANGE[0] <= threshold <= CAMERA_RANGE[1]:
        raise ValueError("threshold outside the camera range")
    values = img.values if isinstance(img, ThermalImage) else np.asarray(img, float)
    labels, n = ndimage.label(values >= threshold, structure=EIGHT)
    if n == 0:
        return []
    idx = np.arange(1, n + 1)
    counts = ndimage.sum_labels(np.ones_like(values), labels, idx)
    cents = ndimage.center_of_mass(np.ones_like(values), labels, idx)
    means = ndimage.mean(values, labels, idx)
    slices = ndimage.find_objects(labels)
    out = []
    for k in range(n):
        c = int(counts[k])
        if c < min_blob:
            continue
        vr, ur = slices[k]
        cv, cu = cents[k]
        out.append((-c, k, FireDetection2D((float(cu), float(cv)), c, float(means[k]),
                                           (ur.start, vr.start, ur.stop - 1, vr.stop - 1))))
    out.sort(key=lambda t: (t[0], t[1]))
    return [d for _, _, d in out]


@dataclass(frozen=True)
class RangeEstimate:
    range: float
    rel_sigma: float
    source: str  # lidar | map | altitude

    @property
    def variance(self) -> float:
        return (self.rel_sigma * self.range) ** 2


def estimate_range(det: FireDetection2D, img: ThermalImage, cloud: Optional[np.ndarray] = None,
                   grid=None, nadir: bool = False, ground_height: float = 0.0,
                   max_range: float = 120.0, dilate: int = 2) -> RangeEstimate:
    """Distance from the camera to the fire along the centroid's pixel ray.

    ``cloud`` holds LIDAR points in the map frame; ``grid`` is the occupancy
    grid used for the map fallback.
    """
    ray = pixel_rays([det.centroid[0]], [det.centroid[1]], img.rotation, img.intrinsics)[0]
    if nadir:
        h = float(img.position[2] - ground_height)
        if h <= 0 or ray[2] >= 0:
            raise RangeUnavailable("range unavailable")
        return RangeEstimate(h / -ray[2], RANGE_REL_SIGMA["altitude"], "altitude")
    if cloud is not None and len(cloud):
        uv, depth = project(np.asarray(cloud, float), img.position, img.rotation, img.intrinsics)
        u0, v0, u1, v1 = det.bbox
        sel = ((depth > 0) & (uv[:, 0] >= u0 - dilate - 0.5) & (uv[:, 0] <= u1 + dilate + 0.5)
               & (uv[:, 1] >= v0 - dilate - 0.5) & (uv[:, 1] <= v1 + dilate + 0.5))
        if sel.any():
            r = np.linalg.norm(np.asarray(cloud)[sel] - img.position, axis=1)
            return RangeEstimate(float(np.median(r)), RANGE_REL_SIGMA["lidar"], "lidar")
    if grid is not None:
        r = map_raycast(grid, img.position, ray, max_range)
        if r is not None:
            return RangeEstimate(r, RANGE_REL_SIGMA["map"], "map")
    raise RangeUnavailable("range unavailable")


def map_raycast(grid, origin: np.ndarray, direction: np.ndarray, max_range: float) -> Optional[float]:
    """Distance to the first occupied voxel along a ray (sampled at res/4)."""
    step = grid.resolution / 4
    ts = np.arange(step, max_range + step, step)
    occ = grid.is_occupied(origin + ts[:, None] * direction)
    if not occ.any():
        return None
    return float(ts[int(np.argmax(occ))])


def ray_covariance(direction: np.ndarray, rng: float, rel_sigma: float,
                   perp_sigma: float) -> np.ndarray:
    """Covariance elongated along ``direction``; every term scales with range²."""
    d = np.asarray(direction, float)
    P = np.outer(d, d)
    return (rel_sigma * rng) ** 2 * P + (perp_sigma * rng) ** 2 * (np.eye(3) - P)


def back_project(det: FireDetection2D, rng: float, img: ThermalImage,
                 rel_sigma: float = RANGE_REL_SIGMA["lidar"],
                 pixel_sigma: float = PIXEL_SIGMA) -> tuple[np.ndarray, np.ndarray]:
    """Map-frame point at ``rng`` along the centroid ray, and its covariance."""
    if not rng > 0:
        raise ValueError("range must be positive")
    d = pixel_rays([det.centroid[0]], [det.centroid[1]], img.rotation, img.intrinsics)[0]
    perp = pixel_sigma / img.intrinsics[0]
    return img.position + rng * d, ray_covariance(d, rng, rel_sigma, perp)


@dataclass
class FireEstimate3D:
    omega: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    xi: np.ndarray = field(default_factory=lambda: np.zeros(3))
    count: int = 0

    def fuse(self, z: Sequence[float], R: np.ndarray) -> "FireEstimate3D":
        R = np.asarray(R, float)
        try:
            np.linalg.cholesky(R)
            info = np.linalg.inv(R)
        except np.linalg.LinAlgError:
            raise DegenerateMeasurement("degenerate measurement") from None
        if not np.all(np.isfinite(info)):
            raise DegenerateMeasurement("degenerate measurement")
        info = 0.5 * (info + info.T)
        self.omega = self.omega + info
        self.xi = self.xi + info @ np.asarray(z, float)
        self.count += 1
        return self

    @property
    def covariance(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("no measurements fused")
        return np.linalg.inv(self.omega)

    @property
    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("no measurements fused")
        return np.linalg.solve(self.omega, self.xi)

    def confirmed(self, trace_limit: float = 1.0, min_count: int = 3) -> bool:
        if self.count == 0:
            return False
        return self.count >= min_count or float(np.trace(self.covariance)) < trace_limit


def fuse_measurement(est: FireEstimate3D, z: Sequence[float], R: np.ndarray) -> FireEstimate3D:
    return est.fuse(z, R)


DETECTION_FIELDS = ["time", "robot", "u", "v", "px_count", "range_source", "mean_x", "mean_y",
                    "mean_z", "cov_trace"]


class FireTracker:
    """Per-leg track of one fire: segment, range, back-project and fuse."""

    def __init__(self, threshold: float = DEFAULT_THRESHOLD, min_blob: int = DEFAULT_MIN_BLOB,
                 gate: float = 3.0):
        self.threshold = threshold
        self.min_blob = min_blob
        self.gate = gate
        self.estimate = FireEstimate3D()
        self.records: list[dict] = []

    def observe(self, img: ThermalImage, robot: str, cloud: Optional[np.ndarray] = None, grid=None,
                nadir: bool = False, ground_height: float = 0.0) -> Optional[FireDetection2D]:
        dets = segment_fire(img, self.threshold, self.min_blob)
        if not dets:
            return None
        det = dets[0]
        try:
            rng = estimate_range(det, img, cloud, grid, nadir, ground_height)
        except RangeUnavailable:
            return det
        z, R = back_project(det, rng.range, img, rng.rel_sigma)
        if self.estimate.count and np.linalg.norm(z - self.estimate.mean) > self.gate + 3 * math.sqrt(
                max(np.trace(R), 0.0)):
            return det
        self.estimate.fuse(z, R)
        m = self.estimate.mean
        self.records.append({
            "time": round(img.timestamp, 6), "robot": robot,
            "u": round(det.centroid[0], 4), "v": round(det.centroid[1], 4),
            "px_count": det.pixel_count, "range_source": rng.source,
            "mean_x": round(float(m[0]), 6), "mean_y": round(float(m[1]), 6), "mean_z": round(float(m[2]), 6),
            "cov_trace": round(float(np.trace(self.estimate.covariance)), 9),
        })
        return det
