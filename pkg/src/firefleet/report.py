"""Run report: a pure reduction of the trace files in a run directory.

Wall-clock planner timings are summarized separately (``timings.json``) so
that the report itself is reproducible."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Union

import numpy as np


def percentiles_ms(values: list[float]) -> dict:
    """Count, median, p95 and max of wall-clock samples given in seconds."""
    if not values:
        return {}
    a = np.asarray(values) * 1000.0
    return {"count": len(values), "p50_ms": float(np.percentile(a, 50)),
            "p95_ms": float(np.percentile(a, 95)), "max_ms": float(a.max())}


def reduce_run(run_dir: Union[str, Path]) -> dict:
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "run.json").read_text())
    events = [json.loads(line) for line in (run_dir / "events.ndjson").read_text().splitlines() if line]
    fires = {f["id"]: {"water_on_target": 0.0, "blanket_coverage": 0.0} for f in meta["fires"]}
    robots = {}
    for rid in sorted(meta["robots"]):
        with open(run_dir / "traces" / f"{rid}.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        pos = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows])
        est = np.array([[float(r["est_x"]), float(r["est_y"]), float(r["est_z"])] for r in rows])
        yaw = np.array([float(r["yaw"]) for r in rows])
        est_yaw = np.array([float(r["est_yaw"]) for r in rows])
        dyaw = np.mod(est_yaw - yaw + math.pi, 2 * math.pi) - math.pi
        err = np.linalg.norm(pos - est, axis=1)
        for r in rows:
            if r["water_fire"]:
                for fid in r["water_fire"].split("|"):
                    fires[fid]["water_on_target"] += float(r["water_hit"])
        start_water = float(rows[0]["water_remaining"])
        robots[rid] = {
            "distance": float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=1))) if len(pos) > 1 else 0.0,
            "collisions": sum(1 for e in events if e.get("type") == "collision" and e.get("robot") == rid),
            "rmse_position": float(np.sqrt(np.mean(err ** 2))),
            "max_position_error": float(err.max()),
            "rmse_yaw": float(np.sqrt(np.mean(dyaw ** 2))),
            "water_dispensed": start_water - float(rows[-1]["water_remaining"]),
            "outcome": next((e["status"] for e in events
                             if e.get("type") == "tree_done" and e.get("robot") == rid), "NONE"),
        }
    for e in events:
        if e.get("type") == "blanket_coverage":
            f = fires[e["fire"]]
            f["blanket_coverage"] = max(f["blanket_coverage"], float(e["coverage"]))
    false_pos = 0
    det_path = run_dir / "detections.csv"
    fire_pos = np.array([f["position"] for f in meta["fires"]]) if meta["fires"] else np.zeros((0, 3))
    n_det = 0
    if det_path.exists():
        with open(det_path, newline="") as fh:
            for r in csv.DictReader(fh):
                n_det += 1
                m = np.array([float(r["mean_x"]), float(r["mean_y"]), float(r["mean_z"])])
                if not len(fire_pos) or np.min(np.linalg.norm(fire_pos - m, axis=1)) > 1.5:
                    false_pos += 1
    objectives = []
    for ob in meta["objectives"]:
        f = fires[ob["fire"]]
        ok = True
        if ob.get("water_min") is not None:
            ok &= f["water_on_target"] >= ob["water_min"]
        if ob.get("coverage_min") is not None:
            ok &= f["blanket_coverage"] >= ob["coverage_min"]
        objectives.append({**ob, "met": bool(ok)})
    outcome = next((e["outcome"] for e in events if e.get("type") == "run_end"), "UNKNOWN")
    success = (outcome == "COMPLETED" and all(r["outcome"] == "SUCCESS" for r in robots.values())
               and all(o["met"] for o in objectives) and false_pos == 0)
    return {"scenario": meta["scenario"], "seed": meta["seed"], "outcome": outcome,
            "fires": fires, "robots": robots, "detections": n_det, "false_positives": false_pos,
            "objectives": objectives, "success": bool(success)}
