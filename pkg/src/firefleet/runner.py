"""Closed-loop scenario runs and their trace files.

Outputs in the run directory:

* ``traces/<robot>.csv`` — 10 Hz rows of truth, estimate, command, tank,
  water on target, blanket and pan-tilt state, and the events of the row.
* ``events.ndjson`` — every world, procedure, task, node and blackboard event.
* ``detections.csv`` — fused thermal detections.
* ``metrics.json`` — the run report, reduced from the files above.
* ``timings.json`` — planner wall-clock times (the only non-reproducible file).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .bt import parse_tree
from .mission import Agent, MapContext, build_map_context
from .perception import DETECTION_FIELDS
from .report import percentiles_ms, reduce_run
from .sim.scenario import Scenario
from .sim.world import (ABSENT, STOWED, FireSource, RobotState, UAV, make_world, step)
from .world_model import build_distance_field, build_likelihood_field, build_voxel_grid

TRACE_FIELDS = ["time", "x", "y", "z", "yaw", "est_x", "est_y", "est_z", "est_yaw", "cmd_vx", "cmd_vy",
                "cmd_vz", "cmd_wz", "water_remaining", "water_hit", "water_fire", "blanket", "pan",
                "tilt", "events"]
TRACE_PERIOD = 0.1
UAV_STAGGER = 5.0


def fmt(v) -> str:
    """Shortest round-trip text for floats; stable across runs."""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if v == 0.0:
            return "0.0"
        return repr(v)
    return str(v)


def stagger_starts(robots) -> dict[str, float]:
    """Start offsets such that no two UAVs take off within ``UAV_STAGGER`` s."""
    starts = {r.id: float(r.start_delay) for r in robots}
    last = -math.inf
    for r in sorted((r for r in robots if r.kind == UAV), key=lambda r: (r.start_delay, r.id)):
        s = max(starts[r.id], last + UAV_STAGGER)
        starts[r.id] = s
        last = s
    return starts


@dataclass
class RunResult:
    out_dir: Path
    report: dict
    exit_code: int


def build_maps(scenario: Scenario, cache_dir: Optional[Path] = None) -> MapContext:
    grid = build_voxel_grid(scenario.point_map, scenario.resolution)
    dist = build_distance_field(grid, 5.0)
    lf = build_likelihood_field(grid, 0.2, 0.6)
    return build_map_context(grid, dist, lf)


def run_scenario(scenario: Scenario, out_dir: Union[str, Path], seed: Optional[int] = None,
                 duration: Optional[float] = None) -> RunResult:
    seed = scenario.seed if seed is None else int(seed)
    duration = scenario.duration if duration is None else float(duration)
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)

    maps = build_maps(scenario)
    robots = [RobotState(r.id, r.kind, r.pose.copy(), water_remaining=r.water,
                         blanket=STOWED if r.blanket else ABSENT, disturbance=r.disturbance.copy())
              for r in scenario.robots]
    fires = [FireSource(f.id, f.position.copy(), f.kind, f.temperature, f.radius,
                        None if f.normal is None else f.normal.copy()) for f in scenario.fires]
    world_pts = scenario.world_points()
    wgrid = maps.grid if world_pts is scenario.point_map else build_voxel_grid(world_pts, scenario.resolution)
    world = make_world(world_pts, robots, fires, scenario.resolution, seed, grid=wgrid)

    starts = stagger_starts(scenario.robots)
    agents = []
    for i, spec in enumerate(scenario.robots):
        tree = parse_tree(spec.tree) if spec.tree is not None else None
        a = Agent(spec, i, seed, maps, tree, world)
        a.next_tick = starts[spec.id]
        agents.append(a)
        world.emit("director", robot=spec.id, start=starts[spec.id])

    rows = {a.id: [] for a in agents}
    acc_hit = {a.id: [0.0, set()] for a in agents}
    ev_seen = 0
    pending_events = {a.id: [] for a in agents}
    log: list[dict] = []
    dt = scenario.dt
    n_steps = int(round(duration / dt))
    trace_every = max(int(round(TRACE_PERIOD / dt)), 1)

    def drain():
        nonlocal ev_seen
        for ev in world.events[ev_seen:]:
            log.append(ev)
            rid = ev.get("robot")
            if rid in pending_events:
                pending_events[rid].append(ev["type"])
        ev_seen = len(world.events)
        for a in agents:
            for ev in a.events:
                ev = {"t": ev.get("t", round(world.time, 6)), "robot": a.id,
                      **{k: v for k, v in ev.items() if k != "t"}}
                log.append(ev)
                pending_events[a.id].append(ev["type"])
            a.events.clear()

    def record():
        for a in agents:
            r = world.robots[a.id]
            est = a.control_pose()
            hit, fids = acc_hit[a.id]
            rows[a.id].append([world.time, *r.pose, *est, *a.command, r.water_remaining, hit,
                               "|".join(sorted(fids)), r.blanket, *r.pan_tilt,
                               ";".join(pending_events[a.id])])
            acc_hit[a.id] = [0.0, set()]
            pending_events[a.id] = []

    record()
    outcome = "TIMEOUT"
    for k in range(n_steps):
        for a in agents:
            a.tick(world)
        cmds = {a.id: a.control(world, dt) for a in agents}
        for a in agents:
            liters, fid = a.water_hit
            if liters > 0:
                acc_hit[a.id][0] += liters
                acc_hit[a.id][1].add(fid)
        step(world, dt, cmds)
        for a in agents:
            a.sense(world)
        drain()
        if (k + 1) % trace_every == 0:
            record()
        if all(a.result is not None or a.tree is None for a in agents):
            outcome = "COMPLETED"
            break
    if outcome == "TIMEOUT":
        for a in agents:
            if a.result is None and a.tree is not None:
                a.halt(world)
                a.events.append({"t": round(world.time, 6), "type": "tree_done", "status": "TIMEOUT"})
    for a in agents:
        a.command = np.zeros(4)
        for name in a.leaked_tasks():
            a.events.append({"t": round(world.time, 6), "type": "task_leak", "task": name})
    drain()
    if k + 1 != n_steps or (k + 1) % trace_every:
        record()
    log.append({"t": round(world.time, 6), "type": "run_end", "outcome": outcome})

    for a in agents:
        with open(out / "traces" / f"{a.id}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_FIELDS)
            for row in rows[a.id]:
                w.writerow([fmt(v) for v in row])
    with open(out / "events.ndjson", "w") as fh:
        for ev in log:
            fh.write(json.dumps(ev, sort_keys=True, default=_json_default) + "\n")
    with open(out / "detections.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=DETECTION_FIELDS, lineterminator="\n")
        w.writeheader()
        for a in agents:
            w.writerows(a.detections)
    timings = {a.id: {"global": [t for k_, t in a.timings if k_ == "global"],
                      "local": [t for k_, t in a.timings if k_ == "local"]} for a in agents}
    summary = {rid: {k: percentiles_ms(v) for k, v in d.items()} for rid, d in timings.items()}
    (out / "timings.json").write_text(json.dumps({"summary": summary, "samples_s": timings}, indent=1))
    meta = {"scenario": scenario.name, "seed": seed, "duration": duration, "dt": dt,
            "fires": [{"id": f.id, "kind": f.kind, "position": [float(v) for v in f.position]}
                      for f in scenario.fires],
            "objectives": [o.__dict__ for o in scenario.objectives],
            "robots": {r.id: {"kind": r.kind, "water": r.water} for r in scenario.robots}}
    (out / "run.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    report = reduce_run(out)
    (out / "metrics.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return RunResult(out, report, 0 if report["success"] else 1)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, set):
        return sorted(o)
    raise TypeError(type(o).__name__)
