"""Extinguishing procedures as explicit state machines.

Each procedure is stepped once per control tick with an :class:`Observation`
and returns an :class:`Action` that the runtime applies to the vehicle:
body-frame velocities, pan-tilt setpoints, the pump switch and blanket
magnet releases. Variants:

* ``UgvWater`` — pan-tilt scan, pan-tilt centering, 60 s ejection with a
  cross-shaped sweep around the lock.
* ``UavFacadeWater`` — square scan parallel to the facade, lateral/vertical
  centering that keeps running while ejecting.
* ``UavIndoorWater`` — yaw-only scan and centering.
* ``UavBlanket`` — plane-parallel scan, then Above → Descend → BackUntilLost
  → Unroll → ForwardOverFire → DropWhenLost → Ascend.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .perception import FireDetection2D
from .tracking import clamp

UGV_WATER = "UgvWater"
UAV_FACADE_WATER = "UavFacadeWater"
UAV_INDOOR_WATER = "UavIndoorWater"
UAV_BLANKET = "UavBlanket"
VARIANTS = (UGV_WATER, UAV_FACADE_WATER, UAV_INDOOR_WATER, UAV_BLANKET)

CONFIRMING, CENTERING, EXTINGUISHING = "Confirming", "Centering", "Extinguishing"
ABOVE, DESCEND, BACK_UNTIL_LOST, UNROLL = "Above", "Descend", "BackUntilLost", "Unroll"
FORWARD_OVER_FIRE, DROP_WHEN_LOST, ASCEND = "ForwardOverFire", "DropWhenLost", "Ascend"
SUCCEEDED, ABORTED = "Succeeded", "Aborted"
TERMINAL = (SUCCEEDED, ABORTED)

WATER_PHASES = (CONFIRMING, CENTERING, EXTINGUISHING)
BLANKET_PHASES = (CONFIRMING, ABOVE, DESCEND, BACK_UNTIL_LOST, UNROLL, FORWARD_OVER_FIRE,
                  DROP_WHEN_LOST, ASCEND)


@dataclass(frozen=True)
class LockOnZone:
    center: tuple[float, float]
    half_extent: tuple[float, float] = (10.0, 10.0)

    def contains(self, uv: Sequence[float]) -> bool:
        return (abs(uv[0] - self.center[0]) <= self.half_extent[0]
                and abs(uv[1] - self.center[1]) <= self.half_extent[1])

    def validate(self, width: int, height: int) -> "LockOnZone":
        (cu, cv), (du, dv) = self.center, self.half_extent
        if cu - du < 0 or cv - dv < 0 or cu + du > width - 1 or cv + dv > height - 1:
            raise ValueError("lock-on zone not inside the image")
        return self


def lock_on_zone(intrinsics: Sequence[float], nozzle_offset: Sequence[float], attack_distance: float,
                 half_extent: tuple[float, float] = (10.0, 10.0)) -> LockOnZone:
    """Zone around the pixel where a stream parallel to the optical axis,
    leaving at ``nozzle_offset`` (camera frame), crosses the attack distance."""
    fx, fy, cx, cy = intrinsics
    ox, oy, _ = nozzle_offset
    return LockOnZone((cx + fx * ox / attack_distance, cy + fy * oy / attack_distance), half_extent)


@dataclass
class Observation:
    time: float
    detection: Optional[FireDetection2D]
    pose: np.ndarray  # estimated x, y, z, yaw
    pan_tilt: np.ndarray = field(default_factory=lambda: np.zeros(2))
    water_remaining: float = 0.0
    height: float = 0.0  # above ground


@dataclass
class Action:
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(4))  # body vx, vy, vz, yaw rate
    pan_tilt: Optional[np.ndarray] = None  # absolute setpoint
    water: bool = False
    release: Optional[str] = None  # "Unroll" | "Drop"


@dataclass(frozen=True)
class ProcedureConfig:
    dwell: float = 0.5
    lost_timeout: float = 2.0
    budget: float = 240.0
    eject_time: float = 60.0
    # UGV pan-tilt
    pan_gain: float = 0.004  # rad/s per px
    scan_hold: float = 1.0
    scan_pans_deg: tuple[float, ...] = (0, 20, -20, 40, -40, 60, -60, 80, -80)
    scan_tilts_deg: tuple[float, ...] = (0.0, 15.0)
    cross_deg: float = 5.0
    cross_lobe: float = 4.0
    # UAV servo
    servo_gain: float = 0.02  # m/s per px; holds a 0.15 m/s drift inside the zone
    servo_vmax: float = 0.5
    yaw_gain: float = 0.004  # rad/s per px
    yaw_rate_max: float = 0.4
    scan_size: float = 0.75
    scan_gain: float = 0.8
    scan_tol: float = 0.15
    scan_yaws_deg: tuple[float, ...] = (30, -30, 60, -60, 0)
    # blanket
    descend_height: float = 1.5
    blanket_speed: float = 0.5
    forward_budget: float = 4.0
    ascend_height: float = 3.0
    blanket_scan_size: float = 1.5


class ExtinguishProcedure:
    """One procedure instance per robot, stepped synchronously."""

    def __init__(self, variant: str, zone: LockOnZone, cfg: ProcedureConfig = ProcedureConfig()):
        if variant not in VARIANTS:
            raise ValueError(f"unknown extinguish variant {variant!r}")
        self.variant = variant
        self.zone = zone
        self.cfg = cfg
        self.phase = CONFIRMING
        self.events: list[dict] = []
        self.t0: Optional[float] = None
        self.phase_t0 = 0.0
        self.scan_index = 0
        self.scan_t0: Optional[float] = None
        self.anchor: Optional[np.ndarray] = None  # pose when the scan started
        self.in_zone_since: Optional[float] = None
        self.last_seen: Optional[float] = None
        self.lock_pan_tilt: Optional[np.ndarray] = None
        self.eject_t0: Optional[float] = None
        self.ejecting = False
        self.lobes_visited: set[int] = set()
        self.mark: Optional[np.ndarray] = None
        self.target_z: Optional[float] = None
        self.reason = ""

    # -- bookkeeping ---------------------------------------------------------------

    @property
    def done(self) -> bool:
        return self.phase in TERMINAL

    def _goto(self, phase: str, t: float, **data) -> None:
        self.events.append({"type": "phase", "variant": self.variant, "from": self.phase, "to": phase,
                            "t": round(t, 6), **data})
        self.phase = phase
        self.phase_t0 = t
        self.in_zone_since = None

    def abort(self, t: float, reason: str) -> Action:
        self.reason = reason
        act = self._pump(False, t)
        if not self.done:
            self._goto(ABORTED, t, reason=reason)
        return act

    def _pump(self, on: bool, t: float) -> Action:
        if on != self.ejecting:
            self.events.append({"type": "eject_start" if on else "eject_stop", "t": round(t, 6)})
            self.ejecting = on
        return Action(water=on)

    def _seen(self, obs: Observation) -> bool:
        if obs.detection is not None:
            self.last_seen = obs.time
            return True
        return False

    def _lost_too_long(self, obs: Observation) -> bool:
        return self.last_seen is None or obs.time - self.last_seen > self.cfg.lost_timeout

    def pixel_error(self, det: FireDetection2D) -> tuple[float, float]:
        return det.centroid[0] - self.zone.center[0], det.centroid[1] - self.zone.center[1]

    # -- stepping ------------------------------------------------------------------------

    def step(self, obs: Observation, dt: float) -> Action:
        if self.t0 is None:
            self.t0 = self.phase_t0 = obs.time
        if self.done:
            return Action()
        if obs.time - self.t0 > self.cfg.budget:
            return self.abort(obs.time, "time budget exceeded")
        if self.phase == CONFIRMING:
            return confirm_step(self, obs, dt)
        if self.phase == CENTERING:
            return center_step(self, obs, dt)
        if self.phase == EXTINGUISHING:
            return extinguish_step(self, obs, dt)
        return blanket_step(self, obs, dt)

    # -- servo laws ------------------------------------------------------------------------

    def servo(self, det: FireDetection2D, obs: Observation, dt: float) -> Action:
        """Proportional law from pixel error to the variant's actuators; the
        command points the camera (or vehicle) toward the target."""
        eu, ev = self.pixel_error(det)
        c = self.cfg
        if self.variant == UGV_WATER:
            # image right is a negative pan, image down a positive tilt
            pan = obs.pan_tilt[0] - c.pan_gain * eu * dt
            tilt = obs.pan_tilt[1] + c.pan_gain * ev * dt
            return Action(pan_tilt=np.array([pan, tilt]))
        if self.variant == UAV_FACADE_WATER:
            vy = clamp(-c.servo_gain * eu, c.servo_vmax)
            vz = clamp(-c.servo_gain * ev, c.servo_vmax)
            return Action(velocity=np.array([0.0, vy, vz, 0.0]))
        if self.variant == UAV_INDOOR_WATER:
            return Action(velocity=np.array([0.0, 0.0, 0.0, clamp(-c.yaw_gain * eu, c.yaw_rate_max)]))
        # nadir camera: image right is body -y, image down is body -x
        vx = clamp(-c.servo_gain * ev, c.servo_vmax)
        vy = clamp(-c.servo_gain * eu, c.servo_vmax)
        return Action(velocity=np.array([vx, vy, 0.0, 0.0]))

    def hold_height(self, obs: Observation, z: float) -> float:
        return clamp(self.cfg.scan_gain * (z - obs.pose[2]), 1.0)

    # -- scan patterns -------------------------------------------------------------------------

    def scan_targets(self) -> list:
        c = self.cfg
        if self.variant == UGV_WATER:
            return [(math.radians(p), math.radians(t)) for t in c.scan_tilts_deg for p in c.scan_pans_deg]
        if self.variant == UAV_FACADE_WATER:
            s = c.scan_size
            return [(s, 0), (s, s), (-s, s), (-s, -s), (s, -s), (0, 0)]  # body (y, z) offsets
        if self.variant == UAV_INDOOR_WATER:
            return [math.radians(a) for a in c.scan_yaws_deg]
        s = c.blanket_scan_size
        return [(s, 0), (s, s), (-s, s), (-s, -s), (s, -s), (0, 0)]  # body (x, y) offsets


# -- phase steps ---------------------------------------------------------------------------

def confirm_step(proc: ExtinguishProcedure, obs: Observation, dt: float) -> Action:
    """Run the variant's scan pattern until the fire shows up."""
    if proc._seen(obs):
        proc._goto(CENTERING if proc.variant != UAV_BLANKET else ABOVE, obs.time)
        proc.scan_t0 = None
        return proc.servo(obs.detection, obs, dt)
    c = proc.cfg
    targets = proc.scan_targets()
    if proc.anchor is None:
        proc.anchor = np.array(obs.pose, float)
    if proc.scan_index >= len(targets):
        return proc.abort(obs.time, "fire not confirmed")
    tgt = targets[proc.scan_index]
    a = proc.anchor
    if proc.variant == UGV_WATER:
        if proc.scan_t0 is None:
            proc.scan_t0 = obs.time
        if obs.time - proc.scan_t0 >= c.scan_hold:
            proc.scan_index += 1
            proc.scan_t0 = obs.time
        return Action(pan_tilt=np.array(tgt, float))
    cy, sy = math.cos(a[3]), math.sin(a[3])
    if proc.variant == UAV_INDOOR_WATER:
        err = math.remainder(a[3] + tgt - obs.pose[3], 2 * math.pi)
        if abs(err) < 0.05:
            proc.scan_index += 1
        return Action(velocity=np.array([0.0, 0.0, 0.0, clamp(c.scan_gain * err, c.yaw_rate_max)]))
    if proc.variant == UAV_FACADE_WATER:
        goal = a[:3] + np.array([-sy * tgt[0], cy * tgt[0], tgt[1]])
    else:
        goal = a[:3] + np.array([cy * tgt[0] - sy * tgt[1], sy * tgt[0] + cy * tgt[1], 0.0])
    e = goal - obs.pose[:3]
    if np.linalg.norm(e) < c.scan_tol:
        proc.scan_index += 1
    ch, sh = math.cos(obs.pose[3]), math.sin(obs.pose[3])
    bx, by = ch * e[0] + sh * e[1], -sh * e[0] + ch * e[1]
    v = np.array([clamp(c.scan_gain * bx, c.servo_vmax), clamp(c.scan_gain * by, c.servo_vmax),
                  clamp(c.scan_gain * e[2], c.servo_vmax), 0.0])
    return Action(velocity=v)


def center_step(proc: ExtinguishProcedure, obs: Observation, dt: float) -> Action:
    """Servo the centroid into the lock-on zone; dwell, then extinguish."""
    if not proc._seen(obs):
        if proc._lost_too_long(obs):
            proc._goto(CONFIRMING, obs.time)
            proc.anchor = None
            proc.scan_index = 0
        proc.in_zone_since = None
        return Action(pan_tilt=None if proc.variant != UGV_WATER else np.array(obs.pan_tilt, float))
    act = proc.servo(obs.detection, obs, dt)
    if proc.zone.contains(obs.detection.centroid):
        if proc.in_zone_since is None:
            proc.in_zone_since = obs.time
        if obs.time - proc.in_zone_since >= proc.cfg.dwell - 1e-9:
            return _enter_extinguishing(proc, obs, act)
    else:
        proc.in_zone_since = None
    return act


def _enter_extinguishing(proc: ExtinguishProcedure, obs: Observation, act: Action) -> Action:
    if obs.water_remaining <= 0:
        return proc.abort(obs.time, "tank empty")
    proc._goto(EXTINGUISHING, obs.time)
    proc.eject_t0 = obs.time
    proc.lock_pan_tilt = np.array(obs.pan_tilt, float)
    proc.lobes_visited = set()
    out = proc._pump(True, obs.time)
    out.velocity, out.pan_tilt = act.velocity, act.pan_tilt
    return out


def cross_offset(t: float, amplitude: float, lobe: float) -> tuple[int, np.ndarray]:
    """Lobe index and (pan, tilt) offset of the cross sweep at time ``t``."""
    k = int(t // lobe) % 4
    offs = ((amplitude, 0.0), (-amplitude, 0.0), (0.0, amplitude), (0.0, -amplitude))
    return k, np.array(offs[k])


def extinguish_step(proc: ExtinguishProcedure, obs: Observation, dt: float) -> Action:
    """Eject until the timer or the tank runs out."""
    c = proc.cfg
    elapsed = obs.time - proc.eject_t0
    if elapsed >= c.eject_time - 1e-9 or obs.water_remaining <= 0:
        act = proc._pump(False, obs.time)
        proc._goto(SUCCEEDED, obs.time, ejected_s=round(elapsed, 6))
        return act
    act = proc._pump(True, obs.time)
    if proc.variant == UGV_WATER:
        k, off = cross_offset(elapsed, math.radians(c.cross_deg), c.cross_lobe)
        if k not in proc.lobes_visited:
            proc.lobes_visited.add(k)
            proc.events.append({"type": "cross_lobe", "lobe": k, "t": round(obs.time, 6)})
        act.pan_tilt = proc.lock_pan_tilt + off
        return act
    if proc._seen(obs):
        servo = proc.servo(obs.detection, obs, dt)
        act.velocity = servo.velocity
        if proc.variant == UAV_FACADE_WATER:
            proc.events.append({"type": "servo", "t": round(obs.time, 6),
                                "vy": round(float(servo.velocity[1]), 6),
                                "vz": round(float(servo.velocity[2]), 6)})
    return act


def blanket_step(proc: ExtinguishProcedure, obs: Observation, dt: float) -> Action:
    """The seven-phase blanket sequence."""
    c = proc.cfg
    seen = proc._seen(obs)
    ph = proc.phase
    ch, sh = math.cos(obs.pose[3]), math.sin(obs.pose[3])

    def along() -> float:
        d = obs.pose[:2] - proc.mark[:2]
        return float(ch * d[0] + sh * d[1])

    if ph in (ABOVE, DESCEND):
        if not seen:
            if proc._lost_too_long(obs):
                proc._goto(CONFIRMING, obs.time)
                proc.anchor = None
                proc.scan_index = 0
            return Action()
        act = proc.servo(obs.detection, obs, dt)
        if ph == ABOVE:
            act.velocity[2] = 0.0
            if proc.zone.contains(obs.detection.centroid):
                if proc.in_zone_since is None:
                    proc.in_zone_since = obs.time
                if obs.time - proc.in_zone_since >= c.dwell - 1e-9:
                    proc.target_z = obs.pose[2] - obs.height + c.descend_height
                    proc._goto(DESCEND, obs.time)
            else:
                proc.in_zone_since = None
            return act
        act.velocity[2] = proc.hold_height(obs, proc.target_z)
        if abs(obs.pose[2] - proc.target_z) < 0.1 and proc.zone.contains(obs.detection.centroid):
            proc._goto(BACK_UNTIL_LOST, obs.time)
        return act
    if ph == BACK_UNTIL_LOST:
        if not seen:
            proc._goto(UNROLL, obs.time)
            return Action(velocity=np.array([0.0, 0.0, proc.hold_height(obs, proc.target_z), 0.0]))
        return Action(velocity=np.array([-c.blanket_speed, 0.0, proc.hold_height(obs, proc.target_z), 0.0]))
    if ph == UNROLL:
        proc.events.append({"type": "magnet_release", "release": "Unroll", "t": round(obs.time, 6)})
        proc._goto(FORWARD_OVER_FIRE, obs.time)
        proc.mark = np.array(obs.pose, float)
        return Action(release="Unroll")
    vz = proc.hold_height(obs, proc.target_z) if proc.target_z is not None else 0.0
    if ph == FORWARD_OVER_FIRE:
        if seen:
            proc._goto(DROP_WHEN_LOST, obs.time)
        elif along() > c.forward_budget:
            return proc.abort(obs.time, "fire not re-detected")
        return Action(velocity=np.array([c.blanket_speed, 0.0, vz, 0.0]))
    if ph == DROP_WHEN_LOST:
        if not seen:
            proc.events.append({"type": "magnet_release", "release": "Drop", "t": round(obs.time, 6)})
            proc._goto(ASCEND, obs.time)
            proc.mark = np.array(obs.pose, float)
            return Action(velocity=np.array([c.blanket_speed, 0.0, vz, 0.0]), release="Drop")
        return Action(velocity=np.array([c.blanket_speed, 0.0, vz, 0.0]))
    if ph == ASCEND:
        goal = proc.mark[2] + c.ascend_height
        if obs.pose[2] >= goal - 0.1:
            proc._goto(SUCCEEDED, obs.time)
            return Action()
        return Action(velocity=np.array([0.0, 0.0, 1.0, 0.0]))
    raise RuntimeError(f"unexpected phase {ph}")
