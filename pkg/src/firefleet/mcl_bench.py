"""Localization ablation on a fixed simulated flight.

A UAV flies one 200 s loop around the building with varying height and yaw.
Each sensor combination re-runs the filter on identical sensor streams: scans
and noises are drawn from generators keyed by the step index, so rows differ
only in what the filter is allowed to use.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .localization import MclConfig, MclFilter, wrap
from .sim.arena import competition_arena
from .sim.sensors import (GpsConfig, GpsOutlier, LidarConfig, OdomConfig, simulate_altimeter,
                          simulate_compass, simulate_gps, simulate_lidar, simulate_odometry)
from .sim.world import UAV, RobotState, make_world
from .world_model import LikelihoodField, build_likelihood_field, build_voxel_grid

BENCH_DT = 0.1
BENCH_LIDAR = LidarConfig(channels=16, horizontal_rays=120, mount=(0.0, 0.0, 0.2))
BENCH_ODOM = OdomConfig(drift=(1.03, 0.97, 1.05, 1.03), yaw_bias=2e-4, noise=(0.004, 0.002))
COMPASS_SIGMA = 0.002  # fused IMU heading
ALTIMETER_SIGMA = 0.05


@dataclass(frozen=True)
class Variant:
    name: str
    altimeter: bool
    compass: bool
    alpha: float = 1.0


VARIANTS = {v.name: v for v in (
    Variant("map-only", False, False),
    Variant("+Alt", True, False),
    Variant("+Yaw", False, True),
    Variant("+Alt+Yaw", True, True),
    Variant("+Alt+Yaw+GPS", True, True, alpha=0.5),
    Variant("+GPS", False, False, alpha=0.5),
)}

FIELDS = ["variant", "particles", "seed", "rmse_position", "rmse_xy", "rmse_z", "rmse_yaw",
          "max_position_error", "updates"]


def trajectory(t: np.ndarray) -> np.ndarray:
    """Benchmark poses ``(x, y, z, yaw)``: an ellipse around the building."""
    t = np.asarray(t, float)
    th = 2 * math.pi * t / 200.0 - math.pi / 2
    x = 1.0 + 9.0 * np.cos(th)
    y = 7.5 * np.sin(th)
    z = 4.0 + 1.5 * np.sin(2 * math.pi * t / 50.0)
    heading = np.arctan2(7.5 * np.cos(th), -9.0 * np.sin(th))
    yaw = wrap(heading + 0.3 * np.sin(2 * math.pi * t / 37.0))
    return np.c_[x, y, z, yaw]


class BenchWorld:
    """Arena, likelihood field and a scan cache shared by all variants."""

    def __init__(self, resolution: float = 0.2):
        arena = competition_arena()
        pts = arena.point_map()
        self.grid = build_voxel_grid(pts, resolution)
        self.field: LikelihoodField = build_likelihood_field(self.grid, 0.2, 0.6)
        self.world = make_world(pts, [RobotState("uav", UAV, np.zeros(4))], [], resolution,
                                grid=self.grid)
        self._scans: dict[tuple, np.ndarray] = {}

    def scan(self, seed: int, k: int, pose: np.ndarray, cfg: LidarConfig = BENCH_LIDAR) -> np.ndarray:
        key = (seed, k)
        if key not in self._scans:
            rng = np.random.default_rng([seed, k, 1])
            self._scans[key] = simulate_lidar(self.world, pose, cfg, rng) + np.asarray(cfg.mount)
        return self._scans[key]


def run_variant(bw: BenchWorld, variant: Variant, seed: int = 0, particles: int = 1000,
                duration: float = 200.0, gps_cfg: GpsConfig = GpsConfig(),
                log: Optional[list] = None) -> dict:
    """Closed-form replay of the benchmark flight through one filter."""
    n = int(round(duration / BENCH_DT))
    times = np.arange(n + 1) * BENCH_DT
    truth = trajectory(times)
    cfg = MclConfig(n_particles=particles, alpha=variant.alpha, use_altimeter=variant.altimeter,
                    use_compass=variant.compass)
    filt = MclFilter(cfg, seed=seed).initialize(truth[0])
    est = np.zeros((n + 1, 4))
    est[0] = filt.current_pose()
    updates = 0
    for k in range(1, n + 1):
        rng = np.random.default_rng([seed, k, 0])
        filt.add_odometry(simulate_odometry(truth[k - 1], truth[k], BENCH_ODOM, rng))
        if filt.should_update():
            p = truth[k]
            cloud = bw.scan(seed, k, p)
            yaw = simulate_compass(p[3], COMPASS_SIGMA, rng)
            z = simulate_altimeter(p[2], ALTIMETER_SIGMA, rng)
            gps = simulate_gps(p, gps_cfg, times[k], rng)
            filt.update(cloud, bw.field, gps=gps, z_ref=z, yaw_ref=yaw)
            updates += 1
        est[k] = filt.current_pose()
        if log is not None:
            log.append((times[k], est[k].copy(), truth[k].copy()))
    err = est[:, :3] - truth[:, :3]
    dyaw = wrap(est[:, 3] - truth[:, 3])
    return {
        "variant": variant.name, "particles": particles, "seed": seed,
        "rmse_position": float(np.sqrt(np.mean(np.sum(err ** 2, axis=1)))),
        "rmse_xy": float(np.sqrt(np.mean(np.sum(err[:, :2] ** 2, axis=1)))),
        "rmse_z": float(np.sqrt(np.mean(err[:, 2] ** 2))),
        "rmse_yaw": float(np.sqrt(np.mean(dyaw ** 2))),
        "max_position_error": float(np.max(np.linalg.norm(err, axis=1))),
        "updates": updates,
    }


def run_ablation(variants: Iterable[str] = tuple(VARIANTS), seed: int = 0, particles: Sequence[int] = (1000,),
                 duration: float = 200.0, bw: Optional[BenchWorld] = None) -> list[dict]:
    bw = bw or BenchWorld()
    rows = []
    for n in particles:
        for name in variants:
            if name not in VARIANTS:
                raise KeyError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
            rows.append(run_variant(bw, VARIANTS[name], seed, int(n), duration))
    return rows


def gps_outlier_run(bw: BenchWorld, seed: int = 0, duration: float = 120.0, particles: int = 1000,
                    outlier: GpsOutlier = GpsOutlier(40.0, 55.0, 1.0, axis=1)) -> dict:
    """Benchmark flight with a drifting GPS that snaps back after ``outlier.t_end``;
    the GPS term is weighted zero. Returns per-step filter and raw-fix errors."""
    gps_cfg = GpsConfig(outlier=outlier)
    log: list = []
    v = Variant("+Alt+Yaw", True, True, alpha=1.0)
    run_variant(bw, v, seed, particles, duration, gps_cfg, log=log)
    t = np.array([r[0] for r in log])
    est = np.array([r[1] for r in log])
    truth = np.array([r[2] for r in log])
    rng = np.random.default_rng([seed, 99])
    raw = np.array([simulate_gps(p, gps_cfg, ti, rng) for p, ti in zip(truth, t)])
    return {"time": t, "filter_error": np.linalg.norm(est[:, :2] - truth[:, :2], axis=1),
            "gps_error": np.linalg.norm(raw[:, :2] - truth[:, :2], axis=1)}


def update_latency(bw: BenchWorld, particles: int = 1000, points: int = 500, repeats: int = 20) -> list[float]:
    """Wall-clock seconds of full filter updates (predict, weigh, resample)."""
    p = trajectory(np.array([30.0]))[0]
    cloud = bw.scan(0, 300, p)
    filt = MclFilter(MclConfig(n_particles=particles, max_cloud_points=points), seed=0)
    filt.initialize(p, (0.1, 0.1, 0.05, 0.02))
    out = []
    for _ in range(repeats):
        filt.add_odometry((0.05, 0.0, 0.0, 0.0))
        t0 = time.perf_counter()
        filt.update(cloud, bw.field, z_ref=p[2], yaw_ref=p[3], force=True)
        out.append(time.perf_counter() - t0)
    return out


def write_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
