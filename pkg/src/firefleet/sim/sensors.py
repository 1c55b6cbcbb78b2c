"""Synthetic sensors: LIDAR, GPS, odometry, compass, altimeter and a thermal
camera. Each takes an explicit ``numpy.random.Generator`` so every stream is
reproducible from the scenario seed."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .world import FireSource, RobotState, WorldState, wrap_angle

CAMERA_RANGE = (-40.0, 330.0)

FORWARD = "Forward"
NADIR = "Nadir"
PAN_TILT = "PanTilt"
MOUNTS = (FORWARD, NADIR, PAN_TILT)


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# -- LIDAR -------------------------------------------------------------------------

@dataclass(frozen=True)
class LidarConfig:
    channels: int = 16
    horizontal_rays: int = 180
    vertical_fov: tuple[float, float] = (-15.0, 15.0)  # degrees
    max_range: float = 120.0
    min_range: float = 0.2
    range_noise: float = 0.02
    mount: tuple[float, float, float] = (0.0, 0.0, 0.7)  # body frame offset

    def directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, channel-major order."""
        el = np.radians(np.linspace(self.vertical_fov[0], self.vertical_fov[1], self.channels))
        az = np.linspace(-math.pi, math.pi, self.horizontal_rays, endpoint=False)
        E, A = np.meshgrid(el, az, indexing="ij")
        return np.c_[(np.cos(E) * np.cos(A)).ravel(), (np.cos(E) * np.sin(A)).ravel(),
                     np.sin(E).ravel()]


def cast_rays(world: WorldState, origin: np.ndarray, dirs: np.ndarray, max_range: float) -> np.ndarray:
    """Range to the first occupied voxel along each ray (``nan`` on a miss).

    Sphere tracing on the clearance field, then fixed fine steps near
    surfaces. The reported range is the middle of the ray's chord through the
    hit voxel, so the hit point lies inside that voxel.
    """
    grid = world.grid
    dist = world.clearance
    res = grid.resolution
    origin = np.asarray(origin, float)
    dirs = np.asarray(dirs, float)
    n = len(dirs)
    out = np.full(n, np.nan)
    dims = np.array(grid.dims)
    # start each ray where it enters the grid's bounding box
    lo = grid.origin_index * res
    hi = lo + dims * res
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        a, b = (lo - origin) / dirs, (hi - origin) / dirs
    inside = (origin >= lo) & (origin < hi)
    tlo = np.where(dirs != 0, np.minimum(a, b), np.where(inside, -np.inf, np.inf))
    thi = np.where(dirs != 0, np.maximum(a, b), np.where(inside, np.inf, -np.inf))
    t_in, t_out = np.maximum(tlo.max(axis=1), 0.0), thi.min(axis=1)
    active = np.flatnonzero((t_in <= t_out) & (t_in <= max_range))
    t = np.where(t_in > 0, t_in + 1e-9, 0.0)
    occ = grid.occupancy
    dvals = dist.distances
    fine = 0.3 * res
    margin = res * math.sqrt(3.0)
    while active.size:
        p = origin + t[active, None] * dirs[active]
        idx = np.floor(p / res).astype(np.int64) - grid.origin_index
        inb = np.all((idx >= 0) & (idx < dims), axis=1)
        active, idx = active[inb], idx[inb]
        if not active.size:
            break
        hit = occ[idx[:, 0], idx[:, 1], idx[:, 2]]
        if np.any(hit):
            hi = active[hit]
            cell_lo = (idx[hit] + grid.origin_index) * res
            d = dirs[hi]
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                t0 = (cell_lo - origin) / d
                t1 = (cell_lo + res - origin) / d
            tmin = np.where(d != 0, np.minimum(t0, t1), -np.inf)
            tmax = np.where(d != 0, np.maximum(t0, t1), np.inf)
            enter = np.maximum(tmin.max(axis=1), 0.0)
            leave = tmax.min(axis=1)
            out[hi] = 0.5 * (enter + np.maximum(leave, enter))
            active, idx = active[~hit], idx[~hit]
        if not active.size:
            break
        clear = dvals[idx[:, 0], idx[:, 1], idx[:, 2]]
        t[active] += np.maximum(clear - margin, fine)
        active = active[t[active] <= max_range]
    out[out > max_range] = np.nan
    return out


def simulate_lidar(world: WorldState, pose: Sequence[float], cfg: LidarConfig,
                   rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Point cloud in the sensor frame (axes aligned with the body, origin at the mount)."""
    pose = np.asarray(pose, float)
    R = yaw_matrix(pose[3])
    origin = pose[:3] + R @ np.asarray(cfg.mount)
    d_s = cfg.directions()
    r = cast_rays(world, origin, d_s @ R.T, cfg.max_range)
    if rng is not None and cfg.range_noise > 0:
        r = r + rng.normal(0.0, cfg.range_noise, size=r.shape)
    keep = np.isfinite(r) & (r >= cfg.min_range)
    return d_s[keep] * r[keep, None]


# -- GPS / odometry / compass / altimeter -------------------------------------------

@dataclass(frozen=True)
class GpsOutlier:
    """Between ``t_start`` and ``t_end`` the fix drifts at ``velocity`` m/s along
    ``axis`` (0=x, 1=y), then snaps back to the truth."""
    t_start: float
    t_end: float
    velocity: float
    axis: int = 1


@dataclass(frozen=True)
class GpsConfig:
    noise: float = 0.5
    z_noise: float = 2.0
    outlier: Optional[GpsOutlier] = None


def gps_offset(cfg: GpsConfig, time: float) -> np.ndarray:
    off = np.zeros(3)
    o = cfg.outlier
    if o is not None and o.t_start <= time < o.t_end:
        off[o.axis] = o.velocity * (time - o.t_start)
    return off


def simulate_gps(true_pose: Sequence[float], cfg: GpsConfig, time: float,
                 rng: Optional[np.random.Generator] = None) -> np.ndarray:
    p = np.asarray(true_pose, float)[:3] + gps_offset(cfg, time)
    if rng is not None:
        p = p + rng.normal(0.0, 1.0, 3) * np.array([cfg.noise, cfg.noise, cfg.z_noise])
    return p


@dataclass(frozen=True)
class OdomConfig:
    drift: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)  # multiplicative per axis
    yaw_bias: float = 0.0  # rad added per step
    noise: tuple[float, float] = (0.0, 0.0)  # additive sigma: translation m, rotation rad


def body_increment(prev: np.ndarray, new: np.ndarray) -> np.ndarray:
    """True (dx, dy, dz, dyaw) expressed in the frame of ``prev``."""
    d = np.asarray(new[:3], float) - np.asarray(prev[:3], float)
    c, s = math.cos(prev[3]), math.sin(prev[3])
    return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1], d[2], wrap_angle(new[3] - prev[3])])


def simulate_odometry(prev_pose: Sequence[float], new_pose: Sequence[float], cfg: OdomConfig,
                      rng: Optional[np.random.Generator] = None) -> np.ndarray:
    inc = body_increment(np.asarray(prev_pose, float), np.asarray(new_pose, float))
    out = inc * np.asarray(cfg.drift, float)
    out[3] += cfg.yaw_bias
    if rng is not None and (cfg.noise[0] > 0 or cfg.noise[1] > 0):
        out[:3] += rng.normal(0.0, cfg.noise[0], 3)
        out[3] += rng.normal(0.0, cfg.noise[1])
    return out


def simulate_compass(true_yaw: float, sigma: float, rng: Optional[np.random.Generator] = None,
                     noise: Optional[float] = None) -> float:
    n = noise if noise is not None else (rng.normal(0.0, sigma) if rng is not None and sigma > 0 else 0.0)
    return wrap_angle(true_yaw + n)


def simulate_altimeter(true_height: float, sigma: float,
                       rng: Optional[np.random.Generator] = None) -> float:
    n = rng.normal(0.0, sigma) if rng is not None and sigma > 0 else 0.0
    return float(true_height + n)


# -- thermal camera -----------------------------------------------------------------

@dataclass(frozen=True)
class ThermalCameraConfig:
    width: int = 160
    height: int = 120
    hfov_deg: float = 56.0
    mount: str = FORWARD
    offset: tuple[float, float, float] = (0.0, 0.0, 0.3)
    pitch_deg: float = 0.0  # downward tilt of a Forward mount
    noise: float = 0.5
    ambient: float = 25.0

    def __post_init__(self) -> None:
        if self.mount not in MOUNTS:
            raise ValueError(f"unknown camera mount {self.mount!r}")

    @property
    def intrinsics(self) -> tuple[float, float, float, float]:
        fx = (self.width / 2.0) / math.tan(math.radians(self.hfov_deg) / 2.0)
        return fx, fx, (self.width - 1) / 2.0, (self.height - 1) / 2.0


def camera_rotation(yaw: float, pitch: float) -> np.ndarray:
    """Columns are the image-right, image-down and optical axes in the map
    frame; ``pitch`` is positive looking down."""
    cp, sp, cy, sy = math.cos(pitch), math.sin(pitch), math.cos(yaw), math.sin(yaw)
    z = np.array([cp * cy, cp * sy, -sp])
    x = np.array([sy, -cy, 0.0])
    y = np.cross(z, x)
    return np.c_[x, y, z]


def camera_pose(robot: RobotState, cfg: ThermalCameraConfig,
                pose: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    p = robot.pose if pose is None else np.asarray(pose, float)
    pos = p[:3] + yaw_matrix(p[3]) @ np.asarray(cfg.offset)
    if cfg.mount == NADIR:
        R = camera_rotation(p[3], math.pi / 2)
    elif cfg.mount == PAN_TILT:
        R = camera_rotation(p[3] + robot.pan_tilt[0], robot.pan_tilt[1])
    else:
        R = camera_rotation(p[3], math.radians(cfg.pitch_deg))
    return pos, R


@dataclass
class ThermalImage:
    values: np.ndarray  # (height, width) degrees C
    intrinsics: tuple[float, float, float, float]
    timestamp: float
    position: np.ndarray  # camera center, map frame
    rotation: np.ndarray  # 3x3, columns = image right, image down, optical axis

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def height(self) -> int:
        return int(self.values.shape[0])


def project(points: np.ndarray, position: np.ndarray, rotation: np.ndarray,
            intrinsics: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates ``(u, v)`` and depth of map-frame points."""
    fx, fy, cx, cy = intrinsics
    c = (np.atleast_2d(points) - position) @ rotation
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        uv = np.c_[cx + fx * c[:, 0] / c[:, 2], cy + fy * c[:, 1] / c[:, 2]]
    return uv, c[:, 2]


def pixel_rays(u: np.ndarray, v: np.ndarray, rotation: np.ndarray,
               intrinsics: Sequence[float]) -> np.ndarray:
    """Unit map-frame directions through pixel coordinates."""
    fx, fy, cx, cy = intrinsics
    c = np.c_[(np.asarray(u, float) - cx) / fx, (np.asarray(v, float) - cy) / fy, np.ones(np.size(u))]
    d = c @ rotation.T
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def fire_visible(world: WorldState, position: np.ndarray, fire: FireSource) -> bool:
    """Line of sight from the camera to the plate, which sits just off its surface."""
    target = fire.position + 0.05 * fire.normal
    if np.dot(position - fire.position, fire.normal) <= 0:
        return False
    # Point samples every quarter cell: a plate mounted flush on a wall sits on
    # cell faces, where a conservative traversal would count the wall itself.
    seg = target - position
    n = max(int(np.ceil(np.linalg.norm(seg) / (0.25 * world.grid.resolution))), 1)
    pts = position + np.linspace(0.0, 1.0, n + 1)[:, None] * seg
    return not bool(np.any(world.grid.is_occupied(pts)))


def simulate_thermal(world: WorldState, position: np.ndarray, rotation: np.ndarray,
                     cfg: ThermalCameraConfig, rng: Optional[np.random.Generator] = None) -> ThermalImage:
    """Ambient image with every visible plate rendered as a filled disc."""
    h, w = cfg.height, cfg.width
    K = cfg.intrinsics
    img = np.full((h, w), cfg.ambient, dtype=float)
    V, U = np.mgrid[0:h, 0:w]
    rays = None
    for fire in world.fires:
        if fire.blanket_coverage >= 1.0:
            continue
        _, depth = project(fire.position, position, rotation, K)
        if not depth[0] > 0 or not fire_visible(world, position, fire):
            continue
        if rays is None:
            rays = pixel_rays(U.ravel(), V.ravel(), rotation, K)
        denom = rays @ fire.normal
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            t = ((fire.position - position) @ fire.normal) / denom
        hit = (t > 0) & np.isfinite(t)
        pts = position + t[:, None] * rays
        inside = hit & (np.linalg.norm(pts - fire.position, axis=1) <= fire.radius)
        img.ravel()[inside] = fire.plate_temperature
    if rng is not None and cfg.noise > 0:
        img = img + rng.normal(0.0, cfg.noise, size=img.shape)
    np.clip(img, *CAMERA_RANGE, out=img)
    return ThermalImage(img, K, world.time, np.asarray(position, float).copy(), rotation.copy())
