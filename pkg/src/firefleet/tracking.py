"""Path trackers: pure pursuit for the ground robot, saturated proportional
control for the multirotors."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


def _wrap(a: float) -> float:
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def clamp(x: float, lim: float) -> float:
    return max(-lim, min(lim, x))


@dataclass(frozen=True)
class TrackerConfig:
    lookahead: float = 1.0
    k_omega: float = 1.0
    omega_max: float = 1.0
    v_nom: float = 0.5
    k_p: float = 0.8
    v_max_xy: float = 1.5
    v_max_z: float = 1.0
    k_yaw: float = 1.0
    yaw_rate_max: float = 0.8
    goal_tolerance: float = 0.2

    def __post_init__(self) -> None:
        if self.lookahead <= 0:
            raise ValueError("lookahead must be positive")
        for name in ("k_omega", "k_p", "k_yaw", "v_nom"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("omega_max", "v_max_xy", "v_max_z", "yaw_rate_max", "goal_tolerance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _closest_on_path(path: np.ndarray, p: np.ndarray, dims: int = 2) -> tuple[int, float]:
    """Segment index and parameter of the point of ``path`` closest to ``p``."""
    if len(path) == 1:
        return 0, 0.0
    a, b = path[:-1, :dims], path[1:, :dims]
    ab = b - a
    L2 = np.einsum("ij,ij->i", ab, ab)
    t = np.where(L2 > 0, np.einsum("ij,ij->i", p[:dims] - a, ab) / np.where(L2 > 0, L2, 1), 0.0)
    t = np.clip(t, 0.0, 1.0)
    q = a + t[:, None] * ab
    d = np.linalg.norm(q - p[:dims], axis=1)
    i = int(np.argmin(d))
    return i, float(t[i])


def lookahead_point(path: np.ndarray, pose: np.ndarray, L: float, dims: int = 2) -> np.ndarray:
    """Point at arc distance ``L`` beyond the closest path point (clamped to
    the end); distances use the first ``dims`` coordinates."""
    path = np.asarray(path, float)
    i, t = _closest_on_path(path, np.asarray(pose, float), dims)
    if len(path) == 1:
        return path[0]
    pos = path[i] + t * (path[i + 1] - path[i])
    remaining = L
    j = i + 1
    while j < len(path):
        seg = float(np.linalg.norm(path[j, :dims] - pos[:dims]))
        if seg >= remaining:
            return pos + (path[j] - pos) * (remaining / seg if seg > 0 else 0.0)
        remaining -= seg
        pos = path[j]
        j += 1
    return path[-1]


def pure_pursuit(path: Sequence, pose: Sequence[float], cfg: TrackerConfig = TrackerConfig()) -> tuple[float, float]:
    """``(v, omega)`` toward the look-ahead point."""
    path = np.asarray(path, float).reshape(-1, np.shape(path)[-1])
    if len(path) == 0:
        raise ValueError("empty path")
    pose = np.asarray(pose, float)
    goal = path[-1]
    dist_goal = math.hypot(goal[0] - pose[0], goal[1] - pose[1])
    if dist_goal <= cfg.goal_tolerance:
        return 0.0, 0.0
    wp = lookahead_point(path, pose, cfg.lookahead)
    dx, dy = wp[0] - pose[0], wp[1] - pose[1]
    c, s = math.cos(pose[3]), math.sin(pose[3])
    x, y = c * dx + s * dy, -s * dx + c * dy
    dtheta = math.atan2(y, x)
    omega = clamp(cfg.k_omega * dtheta, cfg.omega_max)
    turn = max(0.0, 1.0 - abs(dtheta) / (math.pi / 2))
    approach = min(1.0, dist_goal / cfg.lookahead)
    return cfg.v_nom * turn * approach, omega


def saturated_proportional(target: Sequence[float], pose: Sequence[float],
                           cfg: TrackerConfig = TrackerConfig(),
                           yaw_target: Optional[float] = None) -> np.ndarray:
    """Body-frame ``(vx, vy, vz, yaw_rate)``: per-axis gain, clipped to the
    axis saturation, giving a trapezoid-shaped speed profile."""
    target = np.asarray(target, float)
    pose = np.asarray(pose, float)
    e = target[:3] - pose[:3]
    c, s = math.cos(pose[3]), math.sin(pose[3])
    ex, ey = c * e[0] + s * e[1], -s * e[0] + c * e[1]
    vx = clamp(cfg.k_p * ex, cfg.v_max_xy)
    vy = clamp(cfg.k_p * ey, cfg.v_max_xy)
    vz = clamp(cfg.k_p * e[2], cfg.v_max_z)
    w = 0.0
    if yaw_target is not None:
        w = clamp(cfg.k_yaw * _wrap(yaw_target - pose[3]), cfg.yaw_rate_max)
    return np.array([vx, vy, vz, w])
