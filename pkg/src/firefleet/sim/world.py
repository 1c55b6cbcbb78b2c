"""World state and kinematic stepping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..planning import Visibility
from ..world_model import DistanceField, PointMap, VoxelGrid, build_distance_field, build_voxel_grid

UGV = "UGV"
UAV = "UAV"
KINDS = (UGV, UAV)

INDOOR_FLOOR = "IndoorFloor"
FACADE = "Facade"
OUTDOOR_GROUND = "OutdoorGround"
FIRE_KINDS = (INDOOR_FLOOR, FACADE, OUTDOOR_GROUND)

TANK_CAPACITY = {UGV: 3.0, UAV: 1.0}
UGV_MAX_SPEED = 0.7
MAX_PLATE_TEMPERATURE = 110.0

# blanket states
STOWED, UNROLLED, DROPPED, ABSENT = "Stowed", "Unrolled", "Dropped", "Absent"


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, float) + math.pi, 2 * math.pi) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass
class RobotState:
    id: str
    kind: str
    pose: np.ndarray  # x, y, z, yaw (z is the ground contact / skid height)
    command: np.ndarray = field(default_factory=lambda: np.zeros(4))
    water_remaining: float = 0.0
    blanket: str = ABSENT
    pan_tilt: np.ndarray = field(default_factory=lambda: np.zeros(2))
    body_radius: float = 0.35
    disturbance: np.ndarray = field(default_factory=lambda: np.zeros(3))  # world-frame m/s
    in_contact: bool = False
    odometer: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown robot kind {self.kind!r}")
        self.pose = np.asarray(self.pose, float).reshape(4).copy()
        self.pose[3] = wrap_angle(self.pose[3])
        cap = TANK_CAPACITY[self.kind]
        if not 0.0 <= self.water_remaining <= cap:
            raise ValueError(f"water_remaining must be in [0, {cap}]")

    @property
    def tank_capacity(self) -> float:
        return TANK_CAPACITY[self.kind]

    def body_points(self, pose: Optional[np.ndarray] = None) -> np.ndarray:
        """Sample points of the body hull used for collision checks."""
        p = self.pose if pose is None else pose
        heights = (0.3, 0.6) if self.kind == UGV else (0.2, 0.4)
        ang = np.linspace(0, 2 * math.pi, 8, endpoint=False)
        ring = np.c_[np.cos(ang), np.sin(ang)] * self.body_radius
        pts = [np.array([[p[0], p[1], p[2] + h]]) for h in heights]
        pts += [np.c_[p[0] + ring[:, 0], p[1] + ring[:, 1], np.full(8, p[2] + h)] for h in heights]
        return np.vstack(pts)


@dataclass
class FireSource:
    id: str
    position: np.ndarray
    kind: str
    plate_temperature: float = MAX_PLATE_TEMPERATURE
    radius: float = 0.25
    normal: Optional[np.ndarray] = None
    water_received: float = 0.0
    blanket_coverage: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in FIRE_KINDS:
            raise ValueError(f"unknown fire kind {self.kind!r}")
        if self.plate_temperature > MAX_PLATE_TEMPERATURE:
            raise ValueError("plate_temperature above 110")
        self.position = np.asarray(self.position, float).reshape(3)
        if self.normal is None:
            if self.kind != OUTDOOR_GROUND:
                raise ValueError(f"fire {self.id}: wall fires need a normal")
            self.normal = np.array([0.0, 0.0, 1.0])
        n = np.asarray(self.normal, float).reshape(3)
        self.normal = n / np.linalg.norm(n)


@dataclass
class WorldState:
    time: float
    robots: dict[str, RobotState]
    fires: list[FireSource]
    geometry: PointMap
    grid: VoxelGrid
    rng_seed: int = 0
    events: list[dict] = field(default_factory=list)
    clearance: Optional[DistanceField] = None
    _visibility: Optional[Visibility] = field(default=None, repr=False)

    @property
    def visibility(self) -> Visibility:
        if self._visibility is None:
            self._visibility = Visibility(self.grid)
        return self._visibility

    def emit(self, kind: str, **data) -> None:
        ev = {"t": round(self.time, 6), "type": kind}
        ev.update(data)
        self.events.append(ev)

    def fire(self, fire_id: str) -> FireSource:
        for f in self.fires:
            if f.id == fire_id:
                return f
        raise KeyError(fire_id)


def make_world(geometry: PointMap, robots: list[RobotState], fires: list[FireSource],
               resolution: float = 0.2, seed: int = 0, grid: Optional[VoxelGrid] = None) -> WorldState:
    grid = grid if grid is not None else build_voxel_grid(geometry, resolution)
    world = WorldState(0.0, {r.id: r for r in robots}, list(fires), geometry, grid, seed)
    world.clearance = build_distance_field(grid, 5.0)
    return world


def collides(world: WorldState, robot: RobotState, pose: np.ndarray) -> bool:
    return bool(np.any(world.grid.is_occupied(robot.body_points(pose))))


def step(world: WorldState, dt: float, commands: Optional[dict] = None) -> WorldState:
    """Advance ``dt`` seconds. Commands are body-frame ``(vx, vy, vz, yaw_rate)``;
    robots without a new command keep their previous one. Motion into an
    occupied voxel is refused and reported once per contact."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    for rid, cmd in (commands or {}).items():
        world.robots[rid].command = np.asarray(cmd, float).reshape(4).copy()
    for rid in sorted(world.robots):
        r = world.robots[rid]
        vx, vy, vz, wz = r.command
        if r.kind == UGV:
            vy = vz = 0.0
            speed = abs(vx)
            if speed > UGV_MAX_SPEED:
                vx = math.copysign(UGV_MAX_SPEED, vx)
        yaw = r.pose[3]
        c, s = math.cos(yaw), math.sin(yaw)
        d = np.array([(c * vx - s * vy) * dt, (s * vx + c * vy) * dt, vz * dt])
        if r.kind == UAV and (r.pose[2] > 0.0 or vz > 0.0):
            d = d + r.disturbance * dt  # a landed airframe is held by friction
        new = r.pose.copy()
        new[:3] += d
        new[3] = wrap_angle(yaw + wz * dt)
        if r.kind == UGV:
            new[2] = r.pose[2]
        elif new[2] < 0.0:
            new[2] = 0.0  # resting on the ground is not a collision
        if np.any(d != 0) and collides(world, r, new):
            # translation refused; rotation in place is still applied
            new[:3] = r.pose[:3]
            if not r.in_contact:
                world.emit("collision", robot=rid, x=round(float(r.pose[0]), 4),
                           y=round(float(r.pose[1]), 4), z=round(float(r.pose[2]), 4))
            r.in_contact = True
        else:
            r.in_contact = False
        r.odometer += float(np.linalg.norm(new[:3] - r.pose[:3]))
        r.pose = new
    world.time = round(world.time + dt, 9)
    return world
