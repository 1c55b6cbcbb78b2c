"""Multi-sensor Monte Carlo localization over a likelihood field.

Particles are ``(x, y, z, yaw)``. Roll and pitch come from the IMU and are
applied once to the cloud per update. The LIDAR cloud and the GPS give
separate weights that are blended by ``alpha``. The altimeter and compass
enter at resampling time: the resampled particles are redrawn around the
measured height and yaw.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .world_model import LikelihoodField

SQRT_2PI = math.sqrt(2.0 * math.pi)


def wrap(a):
    w = np.mod(np.asarray(a, float) + math.pi, 2 * math.pi) - math.pi
    return np.where(w == -math.pi, math.pi, w)


@dataclass(frozen=True)
class MclConfig:
    n_particles: int = 1000
    odom_noise_frac: float = 0.1
    fixed_noise: tuple[float, float, float, float] = (0.02, 0.02, 0.01, 0.005)
    alpha: float = 1.0
    gps_sigma: float = 0.5
    update_translation: float = 0.1
    update_rotation: float = 0.05
    sigma_z: float = 0.05
    sigma_yaw: float = 0.01
    max_cloud_points: int = 500
    use_altimeter: bool = True
    use_compass: bool = True

    def __post_init__(self) -> None:
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.update_translation <= 0 or self.update_rotation <= 0:
            raise ValueError("update thresholds must be positive")
        if self.max_cloud_points < 1:
            raise ValueError("max_cloud_points must be >= 1")

    @classmethod
    def ugv(cls, **kw) -> "MclConfig":
        base = dict(fixed_noise=(0.02, 0.02, 0.0, 0.005), sigma_z=0.0)
        base.update(kw)
        return cls(**base)


def rotation_rp(roll: float, pitch: float) -> np.ndarray:
    cr, sr, cp, sp = math.cos(roll), math.sin(roll), math.cos(pitch), math.sin(pitch)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    return ry @ rx


def subsample(cloud: np.ndarray, m: int) -> np.ndarray:
    """Uniform stride subsample to at most ``m`` points (deterministic)."""
    n = len(cloud)
    if n <= m:
        return cloud
    idx = (np.arange(m) * n) // m
    return cloud[idx]


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Body-frame increment ``b`` applied after ``a``."""
    c, s = math.cos(a[3]), math.sin(a[3])
    return np.array([a[0] + c * b[0] - s * b[1], a[1] + s * b[0] + c * b[1], a[2] + b[2],
                     float(wrap(a[3] + b[3]))])


@dataclass
class PoseEstimate:
    pose: np.ndarray  # x, y, z, yaw
    covariance: np.ndarray  # 4x4, yaw residuals wrapped


class MclFilter:
    """Particle filter; one owner, stepped sequentially."""

    def __init__(self, cfg: MclConfig, seed: int = 0):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        n = cfg.n_particles
        self.particles = np.zeros((n, 4))
        self.weights = np.full(n, 1.0 / n)
        self.w_map: Optional[np.ndarray] = None
        self.w_gps: Optional[np.ndarray] = None
        self.pending = np.zeros(4)  # odometry composed since the last update
        self.acc_translation = 0.0
        self.acc_rotation = 0.0
        self.events: list[dict] = []
        self.initialized = False

    # -- lifecycle --------------------------------------------------------------

    def initialize(self, pose: Sequence[float], spread: Sequence[float] = (0, 0, 0, 0)) -> "MclFilter":
        pose = np.asarray(pose, float).reshape(4)
        spread = np.asarray(spread, float).reshape(4)
        n = self.cfg.n_particles
        self.particles = pose + self.rng.normal(0.0, 1.0, (n, 4)) * spread
        self.particles[:, 3] = wrap(self.particles[:, 3])
        self.weights = np.full(n, 1.0 / n)
        self.pending = np.zeros(4)
        self.acc_translation = self.acc_rotation = 0.0
        self.initialized = True
        return self

    def predict(self, delta: Sequence[float]) -> "MclFilter":
        """Advance every particle by a body-frame increment plus noise."""
        d = np.asarray(delta, float).reshape(4)
        n = len(self.particles)
        frac = self.cfg.odom_noise_frac
        noisy = d + self.rng.normal(0.0, 1.0, (n, 4)) * (frac * np.abs(d))
        fixed = self.rng.normal(0.0, 1.0, (n, 4)) * np.asarray(self.cfg.fixed_noise)
        psi = self.particles[:, 3]
        c, s = np.cos(psi), np.sin(psi)
        p = self.particles
        p[:, 0] += fixed[:, 0] + noisy[:, 0] * c - noisy[:, 1] * s
        p[:, 1] += fixed[:, 1] + noisy[:, 0] * s + noisy[:, 1] * c
        p[:, 2] += fixed[:, 2] + noisy[:, 2]
        p[:, 3] = wrap(psi + fixed[:, 3] + noisy[:, 3])
        self.acc_translation += float(np.linalg.norm(d[:3]))
        self.acc_rotation += abs(float(d[3]))
        return self

    def add_odometry(self, delta: Sequence[float]) -> None:
        """Queue an increment; it is applied by :meth:`predict_pending`."""
        d = np.asarray(delta, float).reshape(4)
        self.pending = compose(self.pending, d)
        self.acc_translation += float(np.linalg.norm(d[:3]))
        self.acc_rotation += abs(float(d[3]))

    def predict_pending(self) -> None:
        t, r = self.acc_translation, self.acc_rotation
        self.predict(self.pending)
        self.acc_translation, self.acc_rotation = t, r
        self.pending = np.zeros(4)

    def should_update(self) -> bool:
        return (self.acc_translation >= self.cfg.update_translation
                or self.acc_rotation >= self.cfg.update_rotation)

    # -- weights ------------------------------------------------------------------

    def update_cloud_weight(self, cloud: np.ndarray, field: LikelihoodField,
                            roll: float = 0.0, pitch: float = 0.0) -> Optional[np.ndarray]:
        """Mean likelihood of the cloud seen from each particle."""
        cloud = np.asarray(cloud, float).reshape(-1, 3)
        if len(cloud) == 0:
            self.events.append({"type": "mcl_empty_cloud"})
            return None
        pts = subsample(cloud, self.cfg.max_cloud_points)
        if roll != 0.0 or pitch != 0.0:
            pts = pts @ rotation_rp(roll, pitch).T
        self.w_map = map_weights(self.particles, pts, field)
        return self.w_map

    def update_gps_weight(self, gps: Sequence[float]) -> np.ndarray:
        g = np.asarray(gps, float)
        sig = self.cfg.gps_sigma
        d2 = (self.particles[:, 0] - g[0]) ** 2 + (self.particles[:, 1] - g[1]) ** 2
        self.w_gps = np.exp(-d2 / (2 * sig * sig)) / (SQRT_2PI * sig)
        return self.w_gps

    def combine_and_normalize(self, alpha: Optional[float] = None) -> np.ndarray:
        a = self.cfg.alpha if alpha is None else alpha
        n = len(self.particles)
        if self.w_map is None and self.w_gps is None:
            return self.weights
        if self.w_gps is None:
            w = self.w_map.copy()
        elif self.w_map is None:
            w = self.w_gps.copy()
        else:
            w = a * self.w_map + (1.0 - a) * self.w_gps
        total = float(w.sum())
        if not total > 0 or not np.isfinite(total):
            self.events.append({"type": "mcl_divergence"})
            self.weights = np.full(n, 1.0 / n)
        else:
            self.weights = w / total
        self.w_map = self.w_gps = None
        return self.weights

    # -- resampling / estimate ------------------------------------------------------

    def resample(self, z_ref: Optional[float] = None, yaw_ref: Optional[float] = None) -> "MclFilter":
        """Systematic resampling, then z and yaw redrawn around the altimeter
        and compass references (when given and enabled)."""
        n = len(self.particles)
        cdf = np.cumsum(self.weights)
        cdf[-1] = 1.0
        u = (self.rng.random() + np.arange(n)) / n
        idx = np.searchsorted(cdf, u, side="right")
        idx = np.minimum(idx, n - 1)
        self.particles = self.particles[idx].copy()
        if z_ref is not None and self.cfg.use_altimeter:
            self.particles[:, 2] = z_ref + self.rng.normal(0.0, 1.0, n) * self.cfg.sigma_z
        if yaw_ref is not None and self.cfg.use_compass:
            self.particles[:, 3] = wrap(yaw_ref + self.rng.normal(0.0, 1.0, n) * self.cfg.sigma_yaw)
        self.weights = np.full(n, 1.0 / n)
        self.acc_translation = self.acc_rotation = 0.0
        return self

    def estimate(self) -> PoseEstimate:
        w = self.weights
        p = self.particles
        xyz = w @ p[:, :3]
        yaw = math.atan2(float(w @ np.sin(p[:, 3])), float(w @ np.cos(p[:, 3])))
        res = np.c_[p[:, :3] - xyz, wrap(p[:, 3] - yaw)]
        cov = (res * w[:, None]).T @ res
        return PoseEstimate(np.array([*xyz, yaw]), cov)

    def current_pose(self) -> np.ndarray:
        """Estimate advanced by the odometry queued since the last update."""
        return compose(self.estimate().pose, self.pending)

    def effective_sample_size(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))

    # -- full cycle -------------------------------------------------------------------

    def update(self, cloud: Optional[np.ndarray], field: LikelihoodField, roll: float = 0.0,
               pitch: float = 0.0, gps: Optional[Sequence[float]] = None,
               z_ref: Optional[float] = None, yaw_ref: Optional[float] = None,
               force: bool = False) -> bool:
        """Predict with the queued odometry and, if the motion thresholds are
        met, weight and resample. Returns True when an update ran."""
        if not (force or self.should_update()):
            return False
        self.predict_pending()
        wm = self.update_cloud_weight(cloud, field, roll, pitch) if cloud is not None else None
        if gps is not None and self.cfg.alpha < 1.0:
            self.update_gps_weight(gps)
        if wm is None and self.w_gps is None:
            # nothing to weigh against: keep the predicted cloud
            self.acc_translation = self.acc_rotation = 0.0
            return True
        self.combine_and_normalize()
        self.resample(z_ref, yaw_ref)
        return True


def map_weights(particles: np.ndarray, pts: np.ndarray, field: LikelihoodField) -> np.ndarray:
    """``(1/M) * sum_j field(p_i(v_j))`` for every particle ``i``."""
    res = field.resolution
    vals = field.values
    nx, ny, nz = vals.shape
    flat = vals.ravel()
    inv = 1.0 / res
    c = np.cos(particles[:, 3])[:, None]
    s = np.sin(particles[:, 3])[:, None]
    vx, vy, vz = pts[:, 0][None, :], pts[:, 1][None, :], pts[:, 2][None, :]
    o = field.origin_index
    ix = np.floor((particles[:, 0:1] + c * vx - s * vy) * inv).astype(np.int64) - o[0]
    iy = np.floor((particles[:, 1:2] + s * vx + c * vy) * inv).astype(np.int64) - o[1]
    iz = np.floor((particles[:, 2:3] + vz) * inv).astype(np.int64) - o[2]
    ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny) & (iz >= 0) & (iz < nz)
    k = (ix * ny + iy) * nz + iz
    k[~ok] = 0
    v = flat[k]
    v[~ok] = 0.0
    return v.sum(axis=1) / len(pts)


# -- debug dump ---------------------------------------------------------------------

DEBUG_FIELDS = ["time", "est_x", "est_y", "est_z", "est_yaw", "true_x", "true_y", "true_z",
                "true_yaw", "rmse_xyz", "ess"]


class MclDebugLog:
    """Per-update CSV rows of estimate vs. truth with the running RMSE."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.rows: list[dict] = []
        self._sq = 0.0

    def record(self, time: float, filt: MclFilter, truth: Sequence[float]) -> None:
        est = filt.estimate().pose
        truth = np.asarray(truth, float)
        self._sq += float(np.sum((est[:3] - truth[:3]) ** 2))
        rmse = math.sqrt(self._sq / (len(self.rows) + 1))
        vals = [time, *est, *truth[:4], rmse, filt.effective_sample_size()]
        self.rows.append(dict(zip(DEBUG_FIELDS, [round(float(v), 6) for v in vals])))

    def write(self) -> None:
        with open(self.path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=DEBUG_FIELDS, lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows)
