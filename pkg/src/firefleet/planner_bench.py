"""Planner benchmark scenarios and the visibility-graph reference.

The reference solves the any-angle problem over the same vertex set the
planner uses (free cell centers) by running A* on the full visibility graph,
so its length is a lower bound for any path the planner can return.
"""
from __future__ import annotations

import csv
import heapq
import math
import time
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage

from .planning import (PLANAR, VOLUMETRIC, PlannerConfig, PlanningError, Visibility, densify, plan,
                       plan_local)
from .world_model import DistanceField, VoxelGrid, build_distance_field


@dataclass
class Scenario:
    name: str
    grid: VoxelGrid
    start: np.ndarray
    goal: np.ndarray
    mode: str = PLANAR
    inflation: float = 0.0  # robot radius the scenario is benchmarked with

    @property
    def dist(self) -> DistanceField:
        if not hasattr(self, "_dist"):
            self._dist = build_distance_field(self.grid, 5.0)
        return self._dist


def _random_blocks(rng: np.random.Generator, shape: tuple, n_blocks: int, max_side: int) -> np.ndarray:
    occ = np.zeros(shape, bool)
    for _ in range(n_blocks):
        lo = [int(rng.integers(0, s)) for s in shape]
        size = [int(rng.integers(1, max_side + 1)) for _ in shape]
        if len(shape) == 3 and shape[2] == 1:
            size[2] = 1
        sl = tuple(slice(l, min(l + z, s)) for l, z, s in zip(lo, size, shape))
        occ[sl] = True
    return occ


def _pick_endpoints(rng: np.random.Generator, occ: np.ndarray, planar: bool):
    # diagonal moves need both side cells free, so reachability is face-connected
    structure = ndimage.generate_binary_structure(3, 1)
    if planar:
        structure[1, 1, 0] = structure[1, 1, 2] = False
    labels, n = ndimage.label(~occ, structure=structure)
    if n == 0:
        return None
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    comp = np.argwhere(labels == int(np.argmax(sizes)))
    if len(comp) < 2:
        return None
    for _ in range(20):
        a, b = comp[rng.choice(len(comp), size=2, replace=False)]
        if np.linalg.norm(a - b) >= 0.5 * max(occ.shape[:2]):
            return a, b
    return None


def random_scenario(rng: np.random.Generator, shape=(20, 20, 1), n_blocks: int = 12,
                    max_side: int = 4, resolution: float = 1.0, name: str = "rand") -> Scenario:
    planar = shape[2] == 1
    while True:
        occ = _random_blocks(rng, shape, n_blocks, max_side)
        ends = _pick_endpoints(rng, occ, planar)
        if ends is not None:
            break
    grid = VoxelGrid(resolution, [0, 0, 0], occ)
    s, g = (grid.index_to_world(e) for e in ends)
    return Scenario(name, grid, s, g, PLANAR if planar else VOLUMETRIC)


def door_scenario(resolution: float = 0.2) -> Scenario:
    """Building entrance: a wall with a 1.6 m door, approached obliquely so the
    straight start-goal line clips the upper jamb."""
    nx, ny = int(12 / resolution), int(10 / resolution)
    occ = np.zeros((nx, ny, 1), bool)
    wall_x = int(6 / resolution)
    occ[wall_x:wall_x + 1, :, 0] = True
    d0, d1 = int(4.2 / resolution), int(5.8 / resolution)
    occ[wall_x:wall_x + 1, d0:d1, 0] = False
    occ[0, :, 0] = occ[-1, :, 0] = occ[:, 0, 0] = occ[:, -1, 0] = True
    grid = VoxelGrid(resolution, [0, 0, 0], occ)
    start = grid.index_to_world(np.array([int(1.5 / resolution), int(7.5 / resolution), 0]))
    goal = grid.index_to_world(np.array([int(10.5 / resolution), int(4.5 / resolution), 0]))
    return Scenario("door", grid, start, goal, PLANAR, inflation=0.4)


def corridor_scenario(resolution: float = 0.2) -> Scenario:
    nx, ny = int(14 / resolution), int(8 / resolution)
    occ = np.zeros((nx, ny, 1), bool)
    occ[0, :, 0] = occ[-1, :, 0] = occ[:, 0, 0] = occ[:, -1, 0] = True
    for k, x in enumerate((3.5, 7.0, 10.5)):
        ix = int(x / resolution)
        if k % 2 == 0:
            occ[ix, : int(5.5 / resolution), 0] = True
        else:
            occ[ix, int(2.5 / resolution):, 0] = True
    grid = VoxelGrid(resolution, [0, 0, 0], occ)
    start = grid.index_to_world(np.array([int(1 / resolution), int(1 / resolution), 0]))
    goal = grid.index_to_world(np.array([int(13 / resolution), int(7 / resolution), 0]))
    return Scenario("corridor", grid, start, goal, PLANAR, inflation=0.4)


def facade_scenario(resolution: float = 0.25) -> Scenario:
    """UAV flying around a building corner at mid height."""
    nx, ny, nz = int(16 / resolution), int(16 / resolution), int(8 / resolution)
    occ = np.zeros((nx, ny, nz), bool)
    occ[:, :, 0] = True
    b0, b1 = int(5 / resolution), int(11 / resolution)
    occ[b0:b1, b0:b1, : int(6 / resolution)] = True
    grid = VoxelGrid(resolution, [0, 0, 0], occ)
    start = grid.index_to_world(np.array([int(2 / resolution), int(8 / resolution), int(3 / resolution)]))
    goal = grid.index_to_world(np.array([int(14 / resolution), int(8 / resolution), int(3 / resolution)]))
    return Scenario("facade", grid, start, goal, VOLUMETRIC, inflation=0.6)


def benchmark_scenarios() -> list[Scenario]:
    return [door_scenario(), corridor_scenario(), facade_scenario()]


# -- visibility-graph reference -------------------------------------------------

def visibility_graph_length(grid: VoxelGrid, blocked: np.ndarray, start: np.ndarray,
                            goal: np.ndarray, planar: bool) -> float:
    """Shortest center-to-center polyline from ``start`` to ``goal`` whose
    segments have line of sight; ``inf`` if none. A* with Euclidean
    heuristic; an edge is only tested when it could improve the target."""
    vis = Visibility(grid, blocked)
    si = grid.world_to_index(start)
    gi = grid.world_to_index(goal)
    if planar:
        layer = int(si[2]) if grid.dims[2] > 1 else 0
        cells = np.argwhere(~blocked[:, :, layer:layer + 1])
        cells[:, 2] = layer
    else:
        cells = np.argwhere(~blocked)
    centers = grid.index_to_world(cells)
    index = {tuple(c): i for i, c in enumerate(cells.tolist())}
    s = index.get(tuple(int(v) for v in si))
    t = index.get(tuple(int(v) for v in gi))
    if s is None or t is None:
        return math.inf
    n = len(cells)
    g = np.full(n, np.inf)
    g[s] = 0.0
    done = np.zeros(n, bool)
    hgoal = np.linalg.norm(centers - centers[t], axis=1)
    heap = [(hgoal[s], s)]
    while heap:
        f, u = heapq.heappop(heap)
        if done[u]:
            continue
        if u == t:
            return float(g[t])
        done[u] = True
        d = np.linalg.norm(centers - centers[u], axis=1)
        cand = np.nonzero(~done & (g[u] + d < g))[0]
        # nearest first so later candidates are more often pruned
        for v in cand[np.argsort(d[cand], kind="stable")]:
            nv = g[u] + d[v]
            if nv < g[v] and vis.clear(centers[u], centers[v]):
                g[v] = nv
                heapq.heappush(heap, (nv + hgoal[v], int(v)))
    return math.inf


# -- sweeps -------------------------------------------------------------------

REFERENCE_MAX_CELLS = 20000  # the all-pairs visibility graph is quadratic in free cells
BENCH_FIELDS = ["scenario", "cost_weight", "max_los", "expanded", "length", "min_clearance",
                "wall_time_s", "reference_length"]


def run_sweep(scenarios: Iterable[Scenario], cost_weights: Iterable[float],
              los_values: Iterable[float], inflation: Optional[float] = None,
              with_reference: bool = True) -> list[dict]:
    """One row per (scenario, C_w, LoS); ``inflation`` overrides each
    scenario's own robot radius. The reference length is NaN for grids too
    large for the visibility graph."""
    rows = []
    cost_weights = list(cost_weights)
    los_values = list(los_values)
    for sc in scenarios:
        infl = sc.inflation if inflation is None else inflation
        ref = math.nan
        if with_reference and sc.grid.occupancy.size <= REFERENCE_MAX_CELLS:
            blocked = sc.grid.occupancy if infl <= 0 else \
                sc.grid.occupancy | (sc.dist.distances <= infl + 1e-9)
            ref = visibility_graph_length(sc.grid, blocked, sc.start, sc.goal, sc.mode == PLANAR)
        for cw in cost_weights:
            for los in los_values:
                cfg = PlannerConfig(cost_weight=cw, max_los=los, inflation_radius=infl,
                                    mode=sc.mode, goal_tolerance=0.0)
                t0 = time.perf_counter()
                try:
                    p = plan(sc.grid, sc.dist, sc.start, sc.goal, cfg)
                    row = dict(expanded=p.expanded, length=p.length, min_clearance=p.min_clearance)
                except PlanningError:
                    row = dict(expanded=-1, length=math.inf, min_clearance=math.nan)
                row.update(scenario=sc.name, cost_weight=cw, max_los=los,
                           wall_time_s=time.perf_counter() - t0,
                           reference_length=ref if (cw == 0 and math.isinf(los)) else math.nan)
                rows.append(row)
    return rows


def write_csv(rows: list[dict], path, fields: Optional[list[str]] = None) -> None:
    fields = fields or BENCH_FIELDS
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


# -- local planner latency -------------------------------------------------------

def local_latency_flight(cycles: int = 500, seed: int = 0, horizon: float = 4.0,
                         cfg: Optional[PlannerConfig] = None) -> dict:
    """Replan the local window once per cycle along the localization benchmark
    flight, each time from a fresh scan in the map frame. Returns wall-clock
    seconds per call and the number of cycles that found no local path."""
    from .mcl_bench import BenchWorld, trajectory
    from .sim.sensors import LidarConfig, simulate_lidar, yaw_matrix

    cfg = cfg or PlannerConfig.uav()
    bw = BenchWorld()
    lidar = LidarConfig()
    times = np.linspace(0.0, 200.0, cycles, endpoint=False)
    ahead = trajectory(np.arange(0.0, 240.0, 0.1))[:, :3]
    samples, failures = [], 0
    for k, t in enumerate(times):
        pose = trajectory(np.array([t]))[0]
        rng = np.random.default_rng([seed, k])
        body = simulate_lidar(bw.world, pose, lidar, rng) + np.asarray(lidar.mount)
        cloud = body @ yaw_matrix(pose[3]).T + pose[:3]
        i0 = int(round(t / 0.1))
        path = densify(ahead[i0:i0 + 200], 0.1)
        arc = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(path, axis=0), axis=1))]
        t0 = time.perf_counter()
        try:
            plan_local(cloud, path[arc <= horizon], pose, cfg, bw.grid.resolution)
        except PlanningError:
            failures += 1
        samples.append(time.perf_counter() - t0)
    return {"samples_s": samples, "failures": failures, "window": cfg.local_window,
            "resolution": bw.grid.resolution}
