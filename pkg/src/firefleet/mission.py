"""Per-robot mission runtime: the atomic tasks behind the tree leaves, driven
by the robot's own localization estimate.

An :class:`Agent` owns one robot's filter, planner settings, tree and
blackboard, and implements the task-runtime protocol the tree's action
leaves call into. Each simulation step the agent (1) ticks its tree when a
tick is due, (2) turns the active tasks into a velocity command and effects,
and (3) after the world moves, feeds odometry/LIDAR/compass/altimeter into
its filter.
"""
from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .bt import Blackboard, BehaviorTree, NodeStatus, TaskRuntime, TaskStatus, TickContext
from .extinguish import (ABORTED, SUCCEEDED, UAV_BLANKET, ExtinguishProcedure, LockOnZone,
                         Observation, ProcedureConfig, lock_on_zone)
from .localization import MclConfig, MclFilter
from .perception import FireTracker, segment_fire
from .planning import PLANAR, Path, PlannerConfig, PlanningError, densify, plan, plan_local, planar_grid
from .sim.effects import BlanketError, WaterConfig, apply_water, drop_blanket
from .sim.scenario import RobotSpec
from .sim.sensors import (NADIR, ThermalImage, camera_pose, simulate_altimeter, simulate_compass,
                          simulate_gps, simulate_lidar, simulate_odometry, simulate_thermal, yaw_matrix)
from .sim.world import UAV, UGV, WorldState, wrap_angle
from .tracking import TrackerConfig, clamp, lookahead_point, pure_pursuit, saturated_proportional
from .world_model import DistanceField, LikelihoodField, VoxelGrid, build_distance_field

BT_PERIOD = 0.1
SCAN_PERIOD = 0.5
THERMAL_PERIOD = 0.2
LOCAL_PERIOD = 0.5
LOCAL_HORIZON = 4.0  # m of global path handed to the local planner
PAN_RATE = 1.0
TILT_LIMITS = (-0.6, 1.0)
UAV_REACH = 3.0


@dataclass
class MapContext:
    """Shared, read-only map products (built once per run)."""
    grid: VoxelGrid
    dist: DistanceField
    likelihood: LikelihoodField
    planar: VoxelGrid
    planar_dist: DistanceField


def build_map_context(grid: VoxelGrid, dist: DistanceField, lf: LikelihoodField,
                      band: tuple[float, float] = (0.15, 1.2)) -> MapContext:
    pg = planar_grid(grid, *band)
    return MapContext(grid, dist, lf, pg, build_distance_field(pg, dist.max_dist))


class Task:
    """Base task: ACTIVE until it sets a terminal status."""
    name = "Task"
    moves = False

    def __init__(self, agent: "Agent", params: dict):
        self.agent = agent
        self.params = params
        self.status = TaskStatus.ACTIVE
        self.t0: Optional[float] = None
        self.reason = ""

    def finish(self, status: TaskStatus, reason: str = "") -> None:
        if self.status is TaskStatus.ACTIVE:
            self.status = status
            self.reason = reason
            self.on_finish()

    def on_finish(self) -> None:
        pass

    def step(self, world: WorldState, dt: float) -> Optional[np.ndarray]:
        if self.t0 is None:
            self.t0 = world.time
        return self._step(world, dt)

    def _step(self, world: WorldState, dt: float) -> Optional[np.ndarray]:  # pragma: no cover
        raise NotImplementedError


class TakeOff(Task):
    name = "TakeOff"
    moves = True

    def _step(self, world, dt):
        a = self.agent
        if a.kind != UAV:
            self.finish(TaskStatus.CANCELED, "TakeOff is not applicable to a ground robot")
            return None
        h = float(self.params["height"])
        z = a.altitude()
        if world.time == self.t0 and z > 0.3:
            self.finish(TaskStatus.CANCELED, "vehicle not ready: already airborne")
            return None
        if abs(z - h) < 0.1:
            self.finish(TaskStatus.SUCCEEDED)
            return np.zeros(4)
        if world.time - self.t0 > 60.0:
            self.finish(TaskStatus.ABORTED, "height not reached")
            return np.zeros(4)
        return np.array([0.0, 0.0, clamp(a.tracker.k_p * (h - z) + 0.1 * np.sign(h - z),
                                         a.tracker.v_max_z), 0.0])


class Land(Task):
    name = "Land"
    moves = True

    def _step(self, world, dt):
        a = self.agent
        if a.kind != UAV:
            self.finish(TaskStatus.CANCELED, "Land is not applicable to a ground robot")
            return None
        z = a.altitude()
        if world.time == self.t0 and a.robot(world).pose[2] <= 0.0 and z < 0.15:
            self.finish(TaskStatus.CANCELED, "vehicle not ready: already landed")
            return None
        if a.robot(world).pose[2] <= 0.0:  # autopilot touchdown flag
            self.finish(TaskStatus.SUCCEEDED)
            return np.zeros(4)
        if world.time - self.t0 > 60.0:
            self.finish(TaskStatus.ABORTED, "ground not reached")
            return np.zeros(4)
        return np.array([0.0, 0.0, -clamp(0.6 * z + 0.15, 0.6), 0.0])


class GoToGoal(Task):
    """Plan to each goal in turn and track the path."""
    name = "GoToGoal"
    moves = True
    stall_time = 30.0
    budget = 600.0

    def __init__(self, agent, params):
        super().__init__(agent, params)
        if "waypoints" in params:
            goals = [np.asarray(w, float).reshape(-1) for w in params["waypoints"]]
            if not goals or any(g.size != 3 for g in goals):
                raise ValueError("waypoints must be a non-empty list of [x, y, z]")
        else:
            goals = [np.array([params["x"], params["y"], params.get("z", 0.0)], float)]
        self.goals = goals
        self.leg = 0
        self.path: Optional[Path] = None
        self.local: Optional[np.ndarray] = None
        self.local_t = -math.inf
        self.best = math.inf
        self.best_t = 0.0
        self.yaw = params.get("yaw")
        self.tol = float(params.get("tolerance", agent.tracker.goal_tolerance if agent.kind == UGV else 0.3))
        self.turning = False

    def _plan_leg(self, pose: np.ndarray) -> None:
        a = self.agent
        goal = self.goals[self.leg].copy()
        if a.kind == UGV:
            goal[2] = pose[2]
        self.path = a.plan_global(pose[:3], goal)
        self.local = None
        self.best, self.best_t = math.inf, self.agent.now

    def _dist(self, pose: np.ndarray) -> float:
        g = self.goals[self.leg]
        if self.agent.kind == UGV:
            return math.hypot(g[0] - pose[0], g[1] - pose[1])
        return float(np.linalg.norm(g - pose[:3]))

    def _step(self, world, dt):
        a = self.agent
        pose = a.control_pose()
        if self.path is None:
            try:
                self._plan_leg(pose)
            except PlanningError as e:
                kind = TaskStatus.CANCELED if self.leg == 0 else TaskStatus.ABORTED
                self.finish(kind, f"no path to waypoint: {e}")
                return np.zeros(4)
        if world.time - self.t0 > self.budget:
            self.finish(TaskStatus.ABORTED, "time budget exceeded")
            return np.zeros(4)
        d = self._dist(pose)
        if d <= self.tol or self.turning:
            if self.leg + 1 < len(self.goals):
                self.leg += 1
                self.path = None
                return np.zeros(4)
            if self.yaw is not None:
                err = wrap_angle(float(self.yaw) - pose[3])
                self.turning = True
                if abs(err) > 0.05:
                    if a.kind == UGV:
                        return np.array([0.0, 0.0, 0.0, clamp(1.0 * err, a.tracker.omega_max)])
                    return saturated_proportional(self.goals[-1], pose, a.tracker, float(self.yaw))
            self.finish(TaskStatus.SUCCEEDED)
            return np.zeros(4)
        if d < self.best - 0.2:
            self.best, self.best_t = d, world.time
        elif world.time - self.best_t > self.stall_time:
            try:
                self._plan_leg(pose)
            except PlanningError as e:
                self.finish(TaskStatus.ABORTED, f"unreachable: {e}")
                return np.zeros(4)
            self.best_t = world.time
        track = self._track_path(world, pose)
        if a.kind == UGV:
            v, w = pure_pursuit(track, pose, replace(a.tracker, goal_tolerance=min(self.tol, 0.1)))
            return np.array([v, 0.0, 0.0, w])
        carrot = lookahead_point(track, pose, 1.5, dims=3)
        yaw_t = float(self.yaw) if self.yaw is not None else None
        return saturated_proportional(carrot, pose, a.tracker, yaw_t)

    def _track_path(self, world, pose) -> np.ndarray:
        a = self.agent
        if world.time - self.local_t >= LOCAL_PERIOD and a.cloud_map is not None \
                and world.time - a.cloud_time < 1.0:
            self.local_t = world.time
            try:
                t0 = _time.perf_counter()
                lp = plan_local(a.cloud_map, self._remaining(pose), pose, a.local_cfg,
                                a.maps.grid.resolution, ground_z=a.ground_z)
                a.timings.append(("local", _time.perf_counter() - t0))
                self.local = lp.waypoints if len(lp.waypoints) > 1 else None
            except PlanningError:
                self.local = None
        if self.local is not None and world.time - self.local_t < 2 * LOCAL_PERIOD:
            return self.local
        return self.path.waypoints

    def _remaining(self, pose) -> np.ndarray:
        wps = self.path.waypoints
        dense = densify(wps, 0.2)
        dims = 2 if self.agent.kind == UGV else 3
        i = int(np.argmin(np.linalg.norm(dense[:, :dims] - pose[:dims], axis=1)))
        rest = dense[i:]
        # Unseen walls read as free in the scan grid, so a far local goal
        # invites shortcuts the global map rules out.
        arc = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(rest[:, :dims], axis=0), axis=1))]
        return rest[arc <= LOCAL_HORIZON]


class FireDetection3D(Task):
    """Look for a fire for ``duration`` seconds; publish its 3D position."""
    name = "FireDetection3D"

    def __init__(self, agent, params):
        super().__init__(agent, params)
        self.tracker = FireTracker()
        self.next_frame = -math.inf
        agent.bb.set("fd_found", False)

    def _step(self, world, dt):
        a = self.agent
        if world.time - self.t0 > float(self.params["duration"]):
            self.finish(TaskStatus.ABORTED, "no fire found within the duration")
            return None
        if world.time + 1e-9 < self.next_frame:
            return None
        self.next_frame = world.time + THERMAL_PERIOD
        img = a.thermal_image(world)
        nadir = a.spec.rig.camera.mount == NADIR
        before = len(self.tracker.records)
        self.tracker.observe(img, a.id, a.cloud_map, a.maps.grid, nadir=nadir, ground_height=a.ground_z)
        a.detections.extend(self.tracker.records[before:])
        if self.tracker.estimate.confirmed():
            m = self.tracker.estimate.mean
            a.bb.set("fd_x", float(m[0]))
            a.bb.set("fd_y", float(m[1]))
            a.bb.set("fd_z", float(m[2]))
            a.bb.set("fd_found", True)
            self.finish(TaskStatus.SUCCEEDED)
        return None


class FireExtinguish(Task):
    """Dispatch to the robot's extinguishing procedure."""
    name = "FireExtinguish"
    moves = True

    def __init__(self, agent, params):
        super().__init__(agent, params)
        variant = params.get("variant", agent.spec.extinguish)
        cam = agent.spec.rig.camera
        if variant == UAV_BLANKET:
            zone = LockOnZone((cam.intrinsics[2], cam.intrinsics[3]), (10.0, 10.0))
        else:
            zone = lock_on_zone(cam.intrinsics, agent.spec.rig.nozzle_offset, agent.spec.attack_distance)
        zone.validate(cam.width, cam.height)
        self.proc = ExtinguishProcedure(variant, zone, agent.procedure_cfg)

    def on_finish(self):
        self.agent.pump_on = False

    def _step(self, world, dt):
        a = self.agent
        robot = a.robot(world)
        img = a.thermal_image(world)
        dets = segment_fire(img)
        obs = Observation(world.time, dets[0] if dets else None, a.control_pose(),
                          robot.pan_tilt.copy(), robot.water_remaining, a.altitude())
        act = self.proc.step(obs, dt)
        for ev in self.proc.events:
            world.emit("procedure", robot=a.id, **{k: v for k, v in ev.items() if k != "t"})
        self.proc.events.clear()
        if act.pan_tilt is not None:
            a.pan_tilt_target = np.asarray(act.pan_tilt, float)
        a.pump_on = bool(act.water)
        if act.release is not None:
            try:
                drop_blanket(world, a.id, act.release, speed=float(max(act.velocity[0], 0.0)))
            except BlanketError as e:
                self.proc.abort(world.time, str(e))
        if self.proc.phase == SUCCEEDED:
            self.finish(TaskStatus.SUCCEEDED)
        elif self.proc.phase == ABORTED:
            self.finish(TaskStatus.ABORTED, self.proc.reason)
        return np.asarray(act.velocity, float)


TASK_TYPES = {t.name: t for t in (TakeOff, Land, GoToGoal, FireDetection3D, FireExtinguish)}


class Agent(TaskRuntime):
    def __init__(self, spec: RobotSpec, index: int, seed: int, maps: MapContext,
                 tree: Optional[BehaviorTree], world: WorldState):
        self.spec = spec
        self.id = spec.id
        self.kind = spec.kind
        self.maps = maps
        self.tree = tree
        self.now = 0.0
        ss = np.random.SeedSequence([seed, index])
        streams = ss.spawn(8)
        (self.rng_lidar, self.rng_gps, self.rng_odom, self.rng_compass, self.rng_alt,
         self.rng_thermal, self.rng_water, rng_mcl) = [np.random.default_rng(s) for s in streams]
        mcl_kw = dict(n_particles=500)
        mcl_kw.update(spec.mcl)
        self.mcl_cfg = MclConfig.ugv(**mcl_kw) if spec.kind == UGV else MclConfig(**mcl_kw)
        self.mcl = MclFilter(self.mcl_cfg, seed=int(rng_mcl.integers(2 ** 31)))
        self.mcl.initialize(spec.pose, (0.05, 0.05, 0.0 if spec.kind == UGV else 0.02, 0.01))
        self.ground_z = 0.0
        base = PlannerConfig.ugv() if spec.kind == UGV else PlannerConfig.uav()
        self.planner_cfg = replace(base, **spec.planner)
        self.local_cfg = self.planner_cfg
        self.tracker = TrackerConfig(**spec.tracker)
        self.procedure_cfg = ProcedureConfig(**spec.procedure)
        self.water_cfg = WaterConfig(reach=2.0 if spec.kind == UGV else UAV_REACH)
        self.bb = Blackboard(log=self._bb_log)
        self.events: list[dict] = []
        self.ctx = TickContext(self.bb, self, self.events)
        self.handles: dict[int, Task] = {}
        self.active: list[int] = []
        self._next_handle = 0
        self.prev_true = np.array(spec.pose, float)
        self.cloud_map: Optional[np.ndarray] = None
        self.cloud_time = -math.inf
        self.last_scan = -math.inf
        self.pan_tilt_target = np.zeros(2)
        self.pump_on = False
        self.command = np.zeros(4)
        self.started = False
        self.result: Optional[str] = None
        self.next_tick = spec.start_delay
        self.timings: list[tuple[str, float]] = []
        self.detections: list[dict] = []
        self.world = world

    # -- helpers -------------------------------------------------------------------

    def robot(self, world: WorldState):
        return world.robots[self.id]

    def _bb_log(self, ev: dict) -> None:
        self.events.append({"t": round(self.now, 6), **ev})

    def estimate(self) -> np.ndarray:
        return self.mcl.estimate().pose

    def control_pose(self) -> np.ndarray:
        p = self.mcl.current_pose()
        if self.kind == UGV:
            p[2] = self.ground_z
        return p

    def altitude(self) -> float:
        r = self.robot(self.world)
        return simulate_altimeter(r.pose[2] - self.ground_z, self.spec.rig.altimeter_sigma, self.rng_alt)

    def plan_global(self, start: np.ndarray, goal: np.ndarray) -> Path:
        t0 = _time.perf_counter()
        try:
            if self.planner_cfg.mode == PLANAR:
                return plan(self.maps.planar, self.maps.planar_dist, start, goal, self.planner_cfg)
            return plan(self.maps.grid, self.maps.dist, start, goal, self.planner_cfg)
        finally:
            self.timings.append(("global", _time.perf_counter() - t0))

    def thermal_image(self, world: WorldState) -> ThermalImage:
        """Render from the true camera pose; tag it with the estimated one."""
        robot = self.robot(world)
        cam = self.spec.rig.camera
        pos, R = camera_pose(robot, cam)
        img = simulate_thermal(world, pos, R, cam, self.rng_thermal)
        epos, eR = camera_pose(robot, cam, self.control_pose())
        img.position, img.rotation = epos, eR
        return img

    # -- task runtime protocol -------------------------------------------------------

    def start(self, task: str, params: dict, bb: Blackboard) -> int:
        h = self._next_handle
        self._next_handle += 1
        try:
            t = TASK_TYPES[task](self, params)
        except (KeyError, ValueError, TypeError) as e:
            t = Task(self, params)
            t.name = task
            t.finish(TaskStatus.CANCELED, f"bad parameters: {e}")
        self.handles[h] = t
        if t.status is TaskStatus.ACTIVE:
            self.active.append(h)
        else:
            self.events.append({"t": round(self.now, 6), "type": "task_end", "task": t.name,
                                "status": t.status.value, "reason": t.reason})
        return h

    def poll(self, handle: int) -> TaskStatus:
        t = self.handles[handle]
        if t.status.terminal:
            self._retire(handle)
        return t.status

    def preempt(self, handle: int) -> TaskStatus:
        t = self.handles[handle]
        t.finish(TaskStatus.PREEMPTED, "preempted")
        self._retire(handle)
        return t.status

    def _retire(self, handle: int) -> None:
        if handle in self.active:
            self.active.remove(handle)
            t = self.handles[handle]
            self.events.append({"t": round(self.now, 6), "type": "task_end", "task": t.name,
                                "status": t.status.value, "reason": t.reason})

    def leaked_tasks(self) -> list[str]:
        return [self.handles[h].name for h in self.active]

    # -- loop phases --------------------------------------------------------------------

    def tick(self, world: WorldState) -> None:
        self.now = world.time
        if self.result is not None or self.tree is None:
            return
        if world.time + 1e-9 < self.next_tick:
            return
        if not self.started:
            self.started = True
            self.events.append({"t": round(world.time, 6), "type": "mission_start"})
        self.next_tick = round(self.next_tick + BT_PERIOD, 9)
        self.ctx.time = world.time
        st = self.tree.tick(self.ctx)
        if st is not NodeStatus.RUNNING:
            self.result = st.value
            self.events.append({"t": round(world.time, 6), "type": "tree_done", "status": st.value})

    def control(self, world: WorldState, dt: float) -> np.ndarray:
        """Run the active tasks for one step; returns the velocity command."""
        self.now = world.time
        cmd = None
        for h in list(self.active):
            t = self.handles[h]
            if t.status.terminal:
                continue
            out = t.step(world, dt)
            if out is not None and cmd is None and t.moves:
                cmd = out
        self.command = np.zeros(4) if cmd is None else np.asarray(cmd, float)
        robot = self.robot(world)
        if self.kind == UGV:
            step = PAN_RATE * dt
            delta = np.clip(self.pan_tilt_target - robot.pan_tilt, -step, step)
            robot.pan_tilt = robot.pan_tilt + delta
            robot.pan_tilt[1] = min(max(robot.pan_tilt[1], TILT_LIMITS[0]), TILT_LIMITS[1])
        self.water_hit = (0.0, "")
        if self.pump_on:
            self._eject(world, dt)
        return self.command

    def _eject(self, world: WorldState, dt: float) -> None:
        robot = self.robot(world)
        pos, R = camera_pose(robot, self.spec.rig.camera)
        nozzle = pos + R @ np.asarray(self.spec.rig.nozzle_offset)
        before = {f.id: f.water_received for f in world.fires}
        liters = apply_water(world, self.id, nozzle, R[:, 2], dt, self.water_cfg, self.rng_water)
        fid = ""
        if liters > 0:
            fid = next(f.id for f in world.fires if f.water_received != before[f.id])
        self.water_hit = (liters, fid)

    def sense(self, world: WorldState) -> None:
        """Feed the filter after the world moved."""
        self.now = world.time
        robot = self.robot(world)
        inc = simulate_odometry(self.prev_true, robot.pose, self.spec.rig.odom, self.rng_odom)
        self.prev_true = robot.pose.copy()
        self.mcl.add_odometry(inc)
        moving = self.mcl.should_update()
        if not moving and world.time - self.last_scan < 5.0:
            return
        if world.time - self.last_scan < SCAN_PERIOD - 1e-9:
            return
        self.last_scan = world.time
        rig = self.spec.rig
        scan = simulate_lidar(world, robot.pose, rig.lidar, self.rng_lidar)
        body = scan + np.asarray(rig.lidar.mount)
        yaw = simulate_compass(robot.pose[3], rig.compass_sigma, self.rng_compass)
        if self.kind == UGV:
            z_ref = self.ground_z
        else:
            z_ref = self.ground_z + simulate_altimeter(robot.pose[2] - self.ground_z,
                                                       rig.altimeter_sigma, self.rng_alt)
        gps = simulate_gps(robot.pose, rig.gps, world.time, self.rng_gps)
        ran = self.mcl.update(body if len(body) else None, self.maps.likelihood, gps=gps,
                              z_ref=z_ref, yaw_ref=yaw, force=True)
        for ev in self.mcl.events:
            world.emit(ev["type"], robot=self.id)
        self.mcl.events.clear()
        if ran:
            est = self.control_pose()
            R = yaw_matrix(est[3])
            self.cloud_map = body @ R.T + est[:3]
            self.cloud_time = world.time

    def halt(self, world: WorldState) -> None:
        self.now = world.time
        if self.tree is not None:
            self.ctx.time = world.time
            self.tree.halt(self.ctx)
        for h in list(self.active):
            self.preempt(h)
        self.pump_on = False
