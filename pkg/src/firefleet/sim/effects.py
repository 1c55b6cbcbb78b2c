"""Extinguishing effects: a straight water stream and a dropped blanket."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate

from .world import DROPPED, STOWED, UNROLLED, OUTDOOR_GROUND, WorldState

DEFAULT_FLOW = 1.0 / 60.0  # L/s


class BlanketError(RuntimeError):
    pass


@dataclass(frozen=True)
class WaterConfig:
    reach: float = 2.0
    flow: float = DEFAULT_FLOW
    jitter_deg: float = 1.0


def _perturb(direction: np.ndarray, sigma: float, rng: Optional[np.random.Generator]) -> np.ndarray:
    d = direction / np.linalg.norm(direction)
    if rng is None or sigma <= 0:
        return d
    a = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    ex, ey = rng.normal(0.0, sigma, 2)
    out = d + math.tan(ex) * e1 + math.tan(ey) * e2
    return out / np.linalg.norm(out)


def _stream_free_length(world: WorldState, origin: np.ndarray, d: np.ndarray, reach: float) -> float:
    """Distance along the stream before it enters an occupied voxel."""
    step = world.grid.resolution / 4
    ts = np.arange(0.0, reach + step, step)
    occ = world.grid.is_occupied(origin + ts[:, None] * d)
    if not occ.any():
        return reach
    return float(ts[int(np.argmax(occ))])


def apply_water(world: WorldState, robot_id: str, nozzle: np.ndarray, direction: np.ndarray,
                dt: float, cfg: WaterConfig = WaterConfig(),
                rng: Optional[np.random.Generator] = None) -> float:
    """Eject ``flow * dt`` liters along ``direction``; returns liters on target.

    The tank always drains by the ejected amount; an empty tank ejects nothing.
    """
    if cfg.flow < 0 or dt < 0:
        raise ValueError("flow and dt must be non-negative")
    robot = world.robots[robot_id]
    liters = min(cfg.flow * dt, robot.water_remaining)
    if liters <= 0:
        return 0.0
    robot.water_remaining = max(robot.water_remaining - liters, 0.0)
    nozzle = np.asarray(nozzle, float)
    d = _perturb(np.asarray(direction, float), math.radians(cfg.jitter_deg), rng)
    reach = _stream_free_length(world, nozzle, d, cfg.reach)
    best, best_t = None, math.inf
    for fire in world.fires:
        denom = float(d @ fire.normal)
        if abs(denom) < 1e-12:
            continue
        t = float((fire.position - nozzle) @ fire.normal) / denom
        if not 0.0 <= t <= reach:
            continue
        if np.linalg.norm(nozzle + t * d - fire.position) <= fire.radius and t < best_t:
            best, best_t = fire, t
    if best is None:
        return 0.0
    best.water_received += liters
    return liters


# -- blanket --------------------------------------------------------------------

@dataclass(frozen=True)
class BlanketConfig:
    size: tuple[float, float] = (1.6, 1.6)
    hang_offset: float = -0.8  # blanket center relative to the body along heading while unrolled
    gravity: float = 9.81


def disc_rect_overlap(center: np.ndarray, radius: float, rect_center: np.ndarray,
                      half_size: tuple[float, float], rect_yaw: float = 0.0) -> float:
    """Area of a disc intersected with a rotated rectangle (in the plane)."""
    c, s = math.cos(rect_yaw), math.sin(rect_yaw)
    d = np.asarray(center, float)[:2] - np.asarray(rect_center, float)[:2]
    px, py = c * d[0] + s * d[1], -s * d[0] + c * d[1]
    hx, hy = half_size
    a, b = max(px - radius, -hx), min(px + radius, hx)
    if a >= b:
        return 0.0

    def chord(x: float) -> float:
        h = math.sqrt(max(radius * radius - (x - px) ** 2, 0.0))
        return max(min(py + h, hy) - max(py - h, -hy), 0.0)

    pts = [x for x in (px, px - hx, px + hx) if a < x < b]
    for yy in (-hy, hy):
        dy = yy - py
        if abs(dy) < radius:
            w = math.sqrt(radius * radius - dy * dy)
            pts += [x for x in (px - w, px + w) if a < x < b]
    area, _ = integrate.quad(chord, a, b, points=sorted(set(pts)) or None, limit=200,
                             epsabs=1e-10, epsrel=1e-10)
    return float(area)


def blanket_landing(release: np.ndarray, yaw: float, speed: float, height: float,
                    cfg: BlanketConfig = BlanketConfig()) -> np.ndarray:
    """Ground point under the released blanket's center: the hang offset plus
    the forward travel during the fall."""
    t_fall = math.sqrt(2.0 * max(height, 0.0) / cfg.gravity)
    along = cfg.hang_offset + speed * t_fall
    return np.asarray(release[:2], float) + along * np.array([math.cos(yaw), math.sin(yaw)])


def drop_blanket(world: WorldState, robot_id: str, release: str, speed: float = 0.0,
                 cfg: BlanketConfig = BlanketConfig()) -> Optional[np.ndarray]:
    """``release`` is ``"Unroll"`` or ``"Drop"``. On Drop, returns the landing
    center and updates the coverage of ground fires."""
    robot = world.robots[robot_id]
    if release == "Unroll":
        if robot.blanket != STOWED:
            raise BlanketError(f"blanket not stowed ({robot.blanket})")
        robot.blanket = UNROLLED
        world.emit("blanket_unroll", robot=robot_id)
        return None
    if release != "Drop":
        raise ValueError(f"unknown blanket release {release!r}")
    if robot.blanket != UNROLLED:
        raise BlanketError("blanket not unrolled")
    robot.blanket = DROPPED
    yaw = float(robot.pose[3])
    landing = blanket_landing(robot.pose, yaw, speed, robot.pose[2], cfg)
    half = (cfg.size[0] / 2, cfg.size[1] / 2)
    world.emit("blanket_drop", robot=robot_id, x=round(float(landing[0]), 4),
               y=round(float(landing[1]), 4))
    for fire in world.fires:
        if fire.kind != OUTDOOR_GROUND:
            continue
        area = disc_rect_overlap(fire.position, fire.radius, landing, half, yaw)
        cov = min(area / (math.pi * fire.radius ** 2), 1.0)
        fire.blanket_coverage = max(fire.blanket_coverage, cov)
        if cov > 0:
            world.emit("blanket_coverage", robot=robot_id, fire=fire.id, coverage=round(cov, 6))
    return landing
