import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from firefleet.extinguish import (ABORTED, ASCEND, BLANKET_PHASES, CENTERING, CONFIRMING, DROP_WHEN_LOST,
                                  EXTINGUISHING, SUCCEEDED, UAV_BLANKET, UAV_FACADE_WATER, UAV_INDOOR_WATER,
                                  UGV_WATER, UNROLL, ExtinguishProcedure, LockOnZone, Observation,
                                  ProcedureConfig, center_step, cross_offset, lock_on_zone)
from firefleet.perception import FireDetection2D
from firefleet.sim.sensors import ThermalCameraConfig

FX, FY, CX, CY = ThermalCameraConfig().intrinsics
W, H = 160, 120
ZONE = LockOnZone((CX, CY))
DT = 0.1


def det(u, v):
    return FireDetection2D((float(u), float(v)), 20, 110.0, (int(u) - 2, int(v) - 2, int(u) + 2, int(v) + 2))


def obs(t, d=None, pose=(0, 0, 2, 0), water=1.0, pan_tilt=(0, 0), height=None):
    pose = np.array(pose, float)
    return Observation(t, d, pose, np.array(pan_tilt, float), water, pose[2] if height is None else height)


def run(proc, observe, t_max=400.0, plant=None, state=None):
    """Step ``proc`` until terminal. ``observe(t, state)`` returns an Observation;
    ``plant(state, action, dt)`` integrates the action. Returns (actions, phases)."""
    t, log = 0.0, []
    while not proc.done and t < t_max:
        o = observe(t, state)
        before = proc.phase
        a = proc.step(o, DT)
        log.append((before, proc.phase, a))
        if plant is not None:
            plant(state, a, DT)
        t = round(t + DT, 9)
    return log


# -- zone ---------------------------------------------------------------------------------

def test_lock_zone_geometry():
    z = lock_on_zone((FX, FY, CX, CY), (0.0, 0.3, 0.0), 1.5)
    assert z.center == pytest.approx((CX, CY + FY * 0.2))
    z.validate(W, H)
    with pytest.raises(ValueError):
        LockOnZone((5.0, 5.0)).validate(W, H)
    assert ZONE.contains((CX + 10, CY - 10)) and not ZONE.contains((CX + 10.5, CY))


def test_unknown_variant():
    with pytest.raises(ValueError):
        ExtinguishProcedure("Hose", ZONE)


# -- confirming ---------------------------------------------------------------------------------

@pytest.mark.parametrize("variant", [UGV_WATER, UAV_FACADE_WATER, UAV_INDOOR_WATER])
def test_first_detection_goes_to_centering(variant):
    p = ExtinguishProcedure(variant, ZONE)
    p.step(obs(0.0, det(CX + 30, CY)), DT)
    assert p.phase == CENTERING


def test_blanket_first_detection_goes_above():
    p = ExtinguishProcedure(UAV_BLANKET, ZONE)
    p.step(obs(0.0, det(CX, CY)), DT)
    assert p.phase == "Above"


def test_ugv_scan_exhausted_aborts_with_pan_tilt_only():
    p = ExtinguishProcedure(UGV_WATER, ZONE)
    log = run(p, lambda t, s: obs(t, pose=(0, 0, 0, 0)))
    assert p.phase == ABORTED and p.reason == "fire not confirmed"
    scanning = [a for b, _, a in log if b == CONFIRMING and a.pan_tilt is not None]
    assert len(scanning) > 10
    assert all(np.all(a.velocity == 0) and not a.water for _, _, a in log)


def uav_plant(state, a, dt):
    yaw = state[3]
    c, s = math.cos(yaw), math.sin(yaw)
    vx, vy, vz, w = a.velocity
    state += np.array([(c * vx - s * vy) * dt, (s * vx + c * vy) * dt, vz * dt, w * dt])


@pytest.mark.parametrize("variant", [UAV_FACADE_WATER, UAV_INDOOR_WATER, UAV_BLANKET])
def test_uav_scan_without_fire_terminates_aborted(variant):
    p = ExtinguishProcedure(variant, ZONE)
    state = np.array([0.0, 0.0, 2.0, 0.0])
    run(p, lambda t, s: obs(t, pose=s.copy()), plant=uav_plant, state=state)
    assert p.phase == ABORTED


# -- centering -----------------------------------------------------------------------------------

def test_center_at_zone_center_zero_command_and_dwell():
    p = ExtinguishProcedure(UAV_FACADE_WATER, ZONE)
    p.phase = CENTERING
    a = center_step(p, obs(0.0, det(CX, CY)), DT)
    assert np.all(a.velocity == 0) and p.phase == CENTERING
    center_step(p, obs(0.5, det(CX, CY)), DT)
    assert p.phase == EXTINGUISHING


def test_center_proportional_lateral_command():
    p = ExtinguishProcedure(UAV_FACADE_WATER, ZONE, ProcedureConfig(servo_gain=0.002))
    p.phase = CENTERING
    a = center_step(p, obs(0.0, det(CX + 40, CY)), DT)
    # image right is body -y for a forward camera: move right to center the target
    assert a.velocity[1] == pytest.approx(-0.08) and a.velocity[2] == 0.0


def test_center_lost_returns_to_confirming():
    p = ExtinguishProcedure(UAV_FACADE_WATER, ZONE)
    p.step(obs(0.0, det(CX + 30, CY)), DT)
    for k in range(1, 21):
        p.step(obs(k * DT, None), DT)
    assert p.phase == CENTERING
    p.step(obs(2.1 + 1e-6, None), DT)
    assert p.phase == CONFIRMING


def facade_observe(fire):
    def observe(t, s):
        d = fire[0] - s[0]
        u = CX - FX * (fire[1] - s[1]) / d
        v = CY - FY * (fire[2] - s[2]) / d
        seen = 0 <= u < W and 0 <= v < H
        return obs(t, det(u, v) if seen else None, pose=s.copy(), water=1.0)
    return observe


@settings(max_examples=30, deadline=None)
@given(st.floats(2, W - 3), st.floats(2, H - 3))
def test_centering_converges_within_10s(u0, v0):
    d = 2.0
    fire = np.array([d, 0.0, 2.0])
    # place the vehicle so the fire starts at (u0, v0)
    state = np.array([0.0, (u0 - CX) * d / FX, 2.0 + (v0 - CY) * d / FY, 0.0])
    p = ExtinguishProcedure(UAV_FACADE_WATER, ZONE)
    observe = facade_observe(fire)
    t = 0.0
    while t <= 10.0 and not ZONE.contains(observe(t, state).detection.centroid):
        a = p.step(observe(t, state), DT)
        uav_plant(state, a, DT)
        t += DT
    assert ZONE.contains(observe(t, state).detection.centroid)


# -- extinguishing -------------------------------------------------------------------------------

def test_ugv_nominal_sixty_seconds_cross():
    p = ExtinguishProcedure(UGV_WATER, ZONE)
    log = run(p, lambda t, s: obs(t, det(CX, CY), pose=(0, 0, 0, 0), water=3.0))
    assert p.phase == SUCCEEDED
    start = next(e for e in p.events if e["type"] == "eject_start")["t"]
    stop = next(e for e in p.events if e["type"] == "eject_stop")["t"]
    assert stop - start == pytest.approx(60.0, abs=DT)
    assert {e["lobe"] for e in p.events if e["type"] == "cross_lobe"} == {0, 1, 2, 3}
    assert all(np.all(a.velocity == 0) for _, _, a in log)  # base stays put
    assert all(a.pan_tilt is not None for b, _, a in log if b == EXTINGUISHING and a.water)


def test_cross_offsets():
    amp = math.radians(5)
    assert [cross_offset(t, amp, 4.0)[0] for t in (0, 4, 8, 12, 16)] == [0, 1, 2, 3, 0]
    assert np.allclose(cross_offset(9.0, amp, 4.0)[1], [0, amp])


def test_tank_empty_aborts_without_water():
    p = ExtinguishProcedure(UGV_WATER, ZONE)
    log = run(p, lambda t, s: obs(t, det(CX, CY), pose=(0, 0, 0, 0), water=0.0))
    assert p.phase == ABORTED and p.reason == "tank empty"
    assert not any(a.water for _, _, a in log)


def test_facade_servo_keeps_running_under_disturbance():
    fire = np.array([2.0, 0.0, 2.0])
    state = np.array([0.0, 0.0, 2.0, 0.0])
    p = ExtinguishProcedure(UAV_FACADE_WATER, ZONE)
    observe = facade_observe(fire)

    def plant(s, a, dt):
        uav_plant(s, a, dt)
        s[1] += 0.1 * dt  # lateral wind

    run(p, observe, plant=plant, state=state)
    assert p.phase == SUCCEEDED
    servo = [e for e in p.events if e["type"] == "servo"]
    assert len(servo) > 100 and any(e["vy"] != 0 for e in servo)


@pytest.mark.parametrize("variant", [UGV_WATER, UAV_FACADE_WATER, UAV_INDOOR_WATER])
def test_water_only_while_extinguishing(variant):
    fire = np.array([2.0, 0.3, 2.2])
    state = np.array([0.0, 0.0, 2.0, 0.0])
    p = ExtinguishProcedure(variant, ZONE)
    log = run(p, facade_observe(fire), plant=uav_plant, state=state)
    assert p.done
    for before, after, a in log:
        if a.water:
            assert EXTINGUISHING in (before, after)


# -- blanket -----------------------------------------------------------------------------------------

class BlanketPlant:
    """Nadir camera over a ground fire; records magnet releases."""

    def __init__(self, fire_xy, start):
        self.fire = np.array(fire_xy, float)
        self.s = np.array(start, float)
        self.releases = []

    def observe(self, t, _):
        h = self.s[2]
        u = CX - FX * (self.fire[1] - self.s[1]) / h
        v = CY - FY * (self.fire[0] - self.s[0]) / h
        seen = 0 <= u < W and 0 <= v < H
        return obs(t, det(u, v) if seen else None, pose=self.s.copy(), height=h)

    def step(self, _, a, dt):
        if a.release:
            self.releases.append((a.release, self.s.copy()))
        uav_plant(self.s, a, dt)


def test_blanket_nominal_sequence():
    plant = BlanketPlant((0.5, -0.4), (0.0, 0.0, 3.0, 0.0))
    p = ExtinguishProcedure(UAV_BLANKET, ZONE)
    log = run(p, plant.observe, plant=plant.step)
    assert p.phase == SUCCEEDED
    visited = [a for b, a, _ in log if a != b]
    order = [ph for ph in BLANKET_PHASES if ph in visited]
    assert order == [ph for ph in BLANKET_PHASES[1:]]
    assert [r for r, _ in plant.releases] == ["Unroll", "Drop"]
    mags = [e["release"] for e in p.events if e["type"] == "magnet_release"]
    assert mags == ["Unroll", "Drop"]
    drop_pose = plant.releases[1][1]
    assert drop_pose[2] == pytest.approx(1.5, abs=0.15)
    assert drop_pose[0] > plant.fire[0]  # the fire left the image behind the body


def test_blanket_never_redetected_aborts_without_drop():
    plant = BlanketPlant((0.5, -0.4), (0.0, 0.0, 3.0, 0.0))
    p = ExtinguishProcedure(UAV_BLANKET, ZONE)
    blind = {"on": False}

    def observe(t, s):
        if p.phase == UNROLL:
            blind["on"] = True
        o = plant.observe(t, s)
        if blind["on"]:
            o.detection = None
        return o

    run(p, observe, plant=plant.step)
    assert p.phase == ABORTED and p.reason == "fire not re-detected"
    assert [r for r, _ in plant.releases] == ["Unroll"]


def test_blanket_releases_only_in_release_phases():
    plant = BlanketPlant((-0.3, 0.6), (0.0, 0.0, 2.5, 0.4))
    p = ExtinguishProcedure(UAV_BLANKET, ZONE)
    log = run(p, plant.observe, plant=plant.step)
    for before, _, a in log:
        if a.release == "Unroll":
            assert before == UNROLL
        if a.release == "Drop":
            assert before == DROP_WHEN_LOST
    assert any(b == ASCEND for b, _, _ in log)


@pytest.mark.parametrize("variant", [UGV_WATER, UAV_FACADE_WATER, UAV_INDOOR_WATER, UAV_BLANKET])
def test_budget_bounds_every_procedure(variant):
    # a fire that flickers in and out far from the zone never settles
    p = ExtinguishProcedure(variant, ZONE, ProcedureConfig(budget=30.0))
    run(p, lambda t, s: obs(t, det(5, 5) if int(t * 10) % 7 else None), t_max=31.0)
    assert p.done
