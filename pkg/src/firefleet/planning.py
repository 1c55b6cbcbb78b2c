"""Global and local path planning with a safety-aware Lazy Theta*.

Two changes relative to textbook Lazy Theta*:

* every link ``parent -> s'`` pays ``cost_weight * dist_cost(s')`` on top of
  its Euclidean length, where ``dist_cost`` grows as clearance shrinks;
* a parent may only be linked to a node within ``max_los`` meters, so the
  clearance term keeps acting on long straight runs.

With ``cost_weight=0`` and ``max_los=inf`` the search is plain Lazy Theta*.
Cells are addressed by flat indices into a grid padded with one blocked cell
on every side, so neighbour arithmetic never leaves the array.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .world_model import DistanceField, VoxelGrid, build_distance_field, grid_from_box

PLANAR = "planar"
VOLUMETRIC = "volumetric"


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    cost_weight: float = 0.0
    max_los: float = math.inf
    inflation_radius: float = 0.0
    goal_tolerance: float = 0.3
    mode: str = VOLUMETRIC
    max_dist: float = 5.0
    # local window (x, y, z extents, meters) and obstacle height band for planar mode
    local_window: tuple[float, float, float] = (10.0, 10.0, 4.0)
    planar_band: tuple[float, float] = (0.15, 1.2)
    max_expansions: int = 400_000

    def __post_init__(self) -> None:
        if not 0.0 <= self.cost_weight <= 1.0:
            raise ValueError("cost_weight must be in [0, 1]")
        if not self.max_los > 0:
            raise ValueError("max_los must be positive")
        if self.mode not in (PLANAR, VOLUMETRIC):
            raise ValueError(f"unknown planner mode {self.mode!r}")

    @classmethod
    def ugv(cls, **kw) -> "PlannerConfig":
        base = dict(cost_weight=0.15, max_los=1.5, inflation_radius=0.4, mode=PLANAR)
        base.update(kw)
        return cls(**base)

    @classmethod
    def uav(cls, **kw) -> "PlannerConfig":
        base = dict(cost_weight=0.0, max_los=math.inf, inflation_radius=0.6, mode=VOLUMETRIC)
        base.update(kw)
        return cls(**base)


@dataclass
class Path:
    waypoints: np.ndarray  # (k, 3)
    length: float
    min_clearance: float
    expanded: int
    cost: float = 0.0

    def __len__(self) -> int:
        return len(self.waypoints)


def dist_cost(dist: DistanceField, cell: Sequence[int]) -> float:
    """Safety cost of a cell: ``max_dist - clearance`` clamped to [0, max_dist]."""
    c = float(dist.distances[tuple(int(v) for v in cell)])
    return min(max(dist.max_dist - c, 0.0), dist.max_dist)


def inflate(grid: VoxelGrid, dist: DistanceField, radius: float) -> np.ndarray:
    if radius <= 0:
        return grid.occupancy.copy()
    return grid.occupancy | (dist.distances <= radius + 1e-9)


def planar_grid(grid: VoxelGrid, z_lo: float, z_hi: float) -> VoxelGrid:
    """Collapse the cells overlapping the height band [z_lo, z_hi] into one layer."""
    res = grid.resolution
    k_lo = int(math.floor(z_lo / res)) - int(grid.origin_index[2])
    k_hi = int(math.floor(z_hi / res)) - int(grid.origin_index[2])
    k_lo, k_hi = max(k_lo, 0), min(k_hi, grid.dims[2] - 1)
    if k_hi < k_lo:
        occ = np.zeros(grid.dims[:2] + (1,), bool)
    else:
        occ = grid.occupancy[:, :, k_lo:k_hi + 1].any(axis=2, keepdims=True)
    origin = grid.origin_index.copy()
    origin[2] = int(math.floor(z_lo / res))
    return VoxelGrid(res, origin, occ)


# -- voxel traversal ----------------------------------------------------------

def _traverse_free(free, strides, a, b, fa, fb) -> bool:
    """Conservative voxel walk from point ``fa`` (in cell units, inside cell
    ``a``) to ``fb`` (inside cell ``b``). When the segment crosses an edge or
    corner exactly, every cell sharing it is tested, so touching an occupied
    cell counts as blocked. ``free`` is indexed by padded flat index."""
    sx, sy, sz = strides
    cx, cy, cz = a
    bx, by, bz = b
    if not free[cx * sx + cy * sy + cz * sz]:
        return False
    if a == b:
        return True
    steps = []
    tnum = []
    for i in range(3):
        d = fb[i] - fa[i]
        if d > 0:
            steps.append(1)
            tnum.append(((a[i] + 1) - fa[i], d))
        elif d < 0:
            steps.append(-1)
            tnum.append((fa[i] - a[i], -d))
        else:
            steps.append(0)
            tnum.append(None)
    counts = [0, 0, 0]
    cur = [cx, cy, cz]
    st = (sx, sy, sz)
    target = (bx, by, bz)
    limit = abs(bx - cx) + abs(by - cy) + abs(bz - cz) + 3
    for _ in range(limit):
        tmin = math.inf
        tied = []
        for i in range(3):
            tn = tnum[i]
            if tn is None:
                continue
            t = (tn[0] + counts[i]) / tn[1]
            if t < tmin:
                tmin = t
                tied = [i]
            elif t == tmin:
                tied.append(i)
        if tmin > 1.0 or not tied:
            break
        if len(tied) > 1:
            # cells reached by stepping a strict subset of the tied axes
            for r in range(1, len(tied)):
                for sub in itertools.combinations(tied, r):
                    k = cur[0] * sx + cur[1] * sy + cur[2] * sz
                    for i in sub:
                        k += steps[i] * st[i]
                    if not free[k]:
                        return False
        for i in tied:
            cur[i] += steps[i]
            counts[i] += 1
        if not free[cur[0] * sx + cur[1] * sy + cur[2] * sz]:
            return False
        if cur[0] == target[0] and cur[1] == target[1] and cur[2] == target[2]:
            return True
    return (cur[0], cur[1], cur[2]) == target


class _Space:
    """Padded free-space view of a grid for one planning query."""

    def __init__(self, blocked: np.ndarray, cost: Optional[np.ndarray], planar: bool):
        padded = np.pad(blocked, 1, constant_values=True)
        self.shape = padded.shape
        nx, ny, nz = padded.shape
        self.strides = (ny * nz, nz, 1)
        self.free = (~padded).ravel().tolist()
        if cost is not None:
            self.cost = np.pad(cost, 1, constant_values=0.0).ravel().tolist()
        else:
            self.cost = None
        if planar:
            offs = [(dx, dy, 0) for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0)]
        else:
            offs = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
                    if (dx, dy, dz) != (0, 0, 0)]
        sx, sy, sz = self.strides
        self.moves = []
        for o in offs:
            comps = [i for i in range(3) if o[i] != 0]
            subs = []
            for r in range(1, len(comps)):
                for sub in itertools.combinations(comps, r):
                    subs.append(sum(o[i] * self.strides[i] for i in sub))
            self.moves.append((o[0] * sx + o[1] * sy + o[2] * sz, tuple(subs),
                               math.sqrt(o[0] * o[0] + o[1] * o[1] + o[2] * o[2])))

    def flat(self, ijk) -> int:
        return (ijk[0] + 1) * self.strides[0] + (ijk[1] + 1) * self.strides[1] + (ijk[2] + 1)

    def unflat(self, k: int) -> tuple[int, int, int]:
        x, r = divmod(k, self.strides[0])
        y, z = divmod(r, self.strides[1])
        return x, y, z

    def los(self, ka: int, kb: int, max_cells: float) -> bool:
        a = self.unflat(ka)
        b = self.unflat(kb)
        dx, dy, dz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
        if dx * dx + dy * dy + dz * dz > max_cells * max_cells:
            return False
        fa = (a[0] + 0.5, a[1] + 0.5, a[2] + 0.5)
        fb = (b[0] + 0.5, b[1] + 0.5, b[2] + 0.5)
        return _traverse_free(self.free, self.strides, a, b, fa, fb)


class Visibility:
    """Reusable line-of-sight checker over one grid and blocked mask."""

    def __init__(self, grid: VoxelGrid, blocked: Optional[np.ndarray] = None):
        self.grid = grid
        if blocked is None:
            blocked = grid.occupancy
        padded = np.pad(blocked, 1, constant_values=True)
        nx, ny, nz = padded.shape
        self.strides = (ny * nz, nz, 1)
        self.free = (~padded).ravel()

    def clear(self, a: Sequence[float], b: Sequence[float], max_dist: float = math.inf) -> bool:
        grid = self.grid
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        if float(np.linalg.norm(b - a)) > max_dist:
            return False
        ia = grid.world_to_index(a)
        ib = grid.world_to_index(b)
        if not (grid.in_bounds(ia) and grid.in_bounds(ib)):
            return False
        res = grid.resolution
        fa = tuple((a / res - grid.origin_index + 1).tolist())
        fb = tuple((b / res - grid.origin_index + 1).tolist())
        return _traverse_free(self.free, self.strides, tuple(int(v) + 1 for v in ia),
                              tuple(int(v) + 1 for v in ib), fa, fb)


def line_of_sight(grid: VoxelGrid, a: Sequence[float], b: Sequence[float],
                  max_dist: float = math.inf, blocked: Optional[np.ndarray] = None) -> bool:
    """True iff ``|a-b| <= max_dist`` and the conservative voxel traversal from
    ``a`` to ``b`` touches no blocked cell. ``blocked`` defaults to the grid
    occupancy (pass an inflated mask to test against inflated obstacles).
    Points outside the grid are blocked."""
    return Visibility(grid, blocked).clear(a, b, max_dist)


# -- search -------------------------------------------------------------------

@dataclass
class SearchResult:
    cells: list  # unpadded (i, j, k) from start to goal
    cost: float
    expanded: int


def _lazy_theta(space: _Space, start: int, goal: int, cost_weight: float,
                max_los_cells: float, max_expansions: int) -> tuple[list[int], float, int]:
    free = space.free
    cost = space.cost if cost_weight > 0 else None
    moves = space.moves
    unflat = space.unflat
    gx, gy, gz = unflat(goal)

    def h(k: int) -> float:
        x, y, z = unflat(k)
        return math.sqrt((x - gx) ** 2 + (y - gy) ** 2 + (z - gz) ** 2)

    def c(ka: int, kb: int) -> float:
        ax, ay, az = unflat(ka)
        bx, by, bz = unflat(kb)
        return math.sqrt((ax - bx) ** 2 + (ay - by) ** 2 + (az - bz) ** 2)

    def can_move(k: int, off: int, subs) -> bool:
        if not free[k + off]:
            return False
        for s in subs:
            if not free[k + s]:
                return False
        return True

    g = {start: 0.0}
    parent = {start: start}
    key = {}
    closed = set()
    h0 = h(start)
    key[start] = h0
    heap = [(h0, h0, start)]
    expanded = 0
    while heap:
        f, hs, s = heapq.heappop(heap)
        if s in closed or key.get(s) != f:
            continue
        # SetVertex: verify the lazily assumed parent link
        p = parent[s]
        if p != s and not space.los(p, s, max_los_cells):
            best, best_p = math.inf, None
            extra = cost_weight * cost[s] if cost is not None else 0.0
            for off, subs, step in moves:
                # a move and its reverse test the same side cells
                n = s + off
                if n in closed and can_move(s, off, subs):
                    cand = g[n] + step + extra
                    if cand < best:
                        best, best_p = cand, n
            parent[s] = best_p
            g[s] = best
        if s == goal:
            path = [s]
            while path[-1] != start:
                path.append(parent[path[-1]])
            path.reverse()
            return path, g[s], expanded + 1
        closed.add(s)
        expanded += 1
        if expanded > max_expansions:
            break
        ps = parent[s]
        gps = g[ps]
        for off, subs, step in moves:
            n = s + off
            if n in closed or not can_move(s, off, subs):
                continue
            gold = g.get(n, math.inf)
            # ComputeCost along the lazy path parent(s) -> n
            newg = gps + c(ps, n)
            if cost is not None:
                newg += cost_weight * cost[n]
            if newg < gold:
                parent[n] = ps
                g[n] = newg
                hn = h(n)
                fn = newg + hn
                key[n] = fn
                heapq.heappush(heap, (fn, hn, n))
    raise PlanningError("no path found")


def _clearance_along(waypoints: np.ndarray, dist: DistanceField, step: float) -> float:
    samples = densify(waypoints, step)
    return float(np.min(dist.at(samples)))


def densify(waypoints: np.ndarray, step: float) -> np.ndarray:
    wp = np.asarray(waypoints, float)
    if len(wp) < 2:
        return wp.copy()
    out = [wp[:1]]
    for a, b in zip(wp[:-1], wp[1:]):
        n = max(1, int(math.ceil(np.linalg.norm(b - a) / step)))
        t = np.arange(1, n + 1)[:, None] / n
        out.append(a + t * (b - a))
    return np.vstack(out)


def path_length(waypoints: np.ndarray) -> float:
    wp = np.asarray(waypoints, float)
    if len(wp) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(wp, axis=0), axis=1)))


def _nearest_free_cell(blocked: np.ndarray, target_idx: np.ndarray, res: float,
                       max_radius: float, layer: Optional[int]) -> Optional[np.ndarray]:
    r = int(math.ceil(max_radius / res))
    lo = np.maximum(target_idx - r, 0)
    hi = np.minimum(target_idx + r + 1, blocked.shape)
    if layer is not None:
        lo[2], hi[2] = layer, layer + 1
    sub = blocked[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    cand = np.argwhere(~sub)
    if len(cand) == 0:
        return None
    cand = cand + lo
    d2 = np.sum((cand - target_idx) ** 2, axis=1)
    ok = d2 * res * res <= max_radius * max_radius + 1e-12
    if not np.any(ok):
        return None
    cand, d2 = cand[ok], d2[ok]
    # argmin picks the lowest flat index among equals: deterministic
    return cand[int(np.argmin(d2))]


def plan(grid: VoxelGrid, dist: DistanceField, start: Sequence[float], goal: Sequence[float],
         cfg: PlannerConfig) -> Path:
    """Plan from ``start`` to ``goal`` (map frame, meters)."""
    start = np.asarray(start, float)
    goal = np.asarray(goal, float)
    planar = cfg.mode == PLANAR
    blocked3 = inflate(grid, dist, cfg.inflation_radius)
    si = grid.world_to_index(start)
    gi = grid.world_to_index(goal)
    layer = None
    if planar:
        layer = 0 if grid.dims[2] == 1 else int(si[2])
        si[2] = gi[2] = layer
    if not grid.in_bounds(si) or grid.occupancy[tuple(si)] or blocked3[tuple(si)]:
        raise PlanningError("invalid start")
    if not grid.in_bounds(gi):
        raise PlanningError("no path found")
    if blocked3[tuple(gi)]:
        alt = _nearest_free_cell(blocked3, gi, grid.resolution, cfg.goal_tolerance, layer)
        if alt is None:
            raise PlanningError("no path found")
        gi = alt
    if planar:
        blocked = blocked3[:, :, layer:layer + 1]
        costs = dist.distances[:, :, layer:layer + 1] if cfg.cost_weight > 0 else None
        s_cell = (int(si[0]), int(si[1]), 0)
        g_cell = (int(gi[0]), int(gi[1]), 0)
    else:
        blocked = blocked3
        costs = dist.distances if cfg.cost_weight > 0 else None
        s_cell = tuple(int(v) for v in si)
        g_cell = tuple(int(v) for v in gi)
    if costs is not None:
        costs = np.clip(dist.max_dist - costs, 0.0, dist.max_dist) / grid.resolution
    space = _Space(blocked, costs, planar)
    max_cells = cfg.max_los / grid.resolution
    ks, kg = space.flat(s_cell), space.flat(g_cell)
    flat_path, cost_cells, expanded = _lazy_theta(space, ks, kg, cfg.cost_weight, max_cells,
                                                  cfg.max_expansions)
    cells = np.array([space.unflat(k) for k in flat_path]) - 1
    if planar:
        cells[:, 2] = layer
    centers = grid.index_to_world(cells)
    if planar:
        centers[:, 2] = start[2]
    # the search already verified every parent link; re-check as a guard
    for ka, kb in zip(flat_path[:-1], flat_path[1:]):
        if not space.los(ka, kb, max_cells + 1e-9):
            raise PlanningError("no path found")
    wps = [start]
    for cpt in centers:
        if not np.allclose(cpt, wps[-1]):
            wps.append(cpt)
    goal_cell = grid.world_to_index(goal)
    dims = 2 if planar else 3
    if np.array_equal(goal_cell[:dims], cells[-1][:dims]):
        g_end = goal.copy()
        if planar:
            g_end[2] = start[2]
        if not np.allclose(g_end, wps[-1]):
            wps.append(g_end)
    waypoints = np.vstack(wps)
    clear_pts = waypoints.copy()
    if planar:
        clear_pts[:, 2] = grid.index_to_world(np.array([0, 0, layer]))[2]
    return Path(waypoints=waypoints, length=path_length(waypoints),
                min_clearance=_clearance_along(clear_pts, dist, grid.resolution / 2),
                expanded=expanded, cost=cost_cells * grid.resolution)


# -- local planning -------------------------------------------------------------

def build_local_grid(cloud: np.ndarray, center: np.ndarray, cfg: PlannerConfig,
                     resolution: float, ground_z: float = 0.0) -> VoxelGrid:
    """Occupancy grid of the local window around ``center`` from map-frame points."""
    half = np.asarray(cfg.local_window, float) / 2.0
    center = np.asarray(center, float)
    if cfg.mode == PLANAR:
        lo = np.array([center[0] - half[0], center[1] - half[1], ground_z + cfg.planar_band[0]])
        hi = np.array([center[0] + half[0], center[1] + half[1], ground_z + cfg.planar_band[0]])
        grid = grid_from_box(lo, hi, resolution)
        pts = np.asarray(cloud, float).reshape(-1, 3)
        sel = (pts[:, 2] >= ground_z + cfg.planar_band[0]) & (pts[:, 2] <= ground_z + cfg.planar_band[1])
        pts = pts[sel].copy()
        pts[:, 2] = (grid.origin_index[2] + 0.5) * resolution
    else:
        grid = grid_from_box(center - half, center + half, resolution)
        pts = np.asarray(cloud, float).reshape(-1, 3)
    idx = grid.world_to_index(pts)
    ok = grid.in_bounds(idx)
    idx = idx[ok]
    grid.occupancy[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return grid


def _local_goal(global_path: np.ndarray, pos: np.ndarray, grid: VoxelGrid, planar: bool,
                margin: float) -> np.ndarray:
    dense = densify(global_path, grid.resolution / 2)
    xy = slice(0, 2) if planar else slice(0, 3)
    d = np.linalg.norm(dense[:, xy] - pos[xy], axis=1)
    i0 = int(np.argmin(d))
    lo = grid.origin + margin
    hi = grid.upper - margin
    dims = 2 if planar else 3
    goal = dense[i0]
    for p in dense[i0:]:
        if np.all(p[:dims] >= lo[:dims]) and np.all(p[:dims] <= hi[:dims]):
            goal = p
        else:
            break
    return goal


def plan_local(cloud: np.ndarray, global_path: np.ndarray, pose: Sequence[float],
               cfg: PlannerConfig, resolution: float = 0.2, ground_z: float = 0.0) -> Path:
    """Re-plan inside a window around the robot using only the latest cloud.

    ``cloud`` is in the map frame; ``pose`` is (x, y, z[, yaw]).
    """
    gp = np.asarray(global_path, float).reshape(-1, 3)
    if len(gp) == 0:
        raise PlanningError("no global path")
    pos = np.asarray(pose, float)[:3]
    planar = cfg.mode == PLANAR
    dims = 2 if planar else 3
    if np.linalg.norm(gp[-1][:dims] - pos[:dims]) <= cfg.goal_tolerance:
        return Path(waypoints=pos[None, :].copy(), length=0.0, min_clearance=math.nan, expanded=0)
    grid = build_local_grid(cloud, pos, cfg, resolution, ground_z)
    dist = build_distance_field(grid, cfg.max_dist)
    goal = _local_goal(gp, pos, grid, planar, resolution)
    if planar:
        goal = np.array([goal[0], goal[1], pos[2]])
    layer = 0 if planar else None
    gi = grid.world_to_index(goal)
    if planar:
        gi[2] = 0
    inflation = cfg.inflation_radius
    last_err: Optional[PlanningError] = None
    # inflation is relaxed if the robot itself sits inside an inflated cell
    for scale in (1.0, 0.5, 0.0):
        c = replace(cfg, inflation_radius=inflation * scale, goal_tolerance=max(cfg.goal_tolerance, 0.5))
        blocked = inflate(grid, dist, c.inflation_radius)
        g_use = goal
        if blocked[tuple(gi)]:
            alt = _nearest_free_cell(blocked, gi, resolution, 2.0, layer)
            if alt is None:
                raise PlanningError("local goal blocked")
            g_use = grid.index_to_world(alt)
            if planar:
                g_use[2] = pos[2]
        try:
            return plan(grid, dist, pos, g_use, c)
        except PlanningError as e:
            last_err = e
            if str(e) != "invalid start":
                raise
    assert last_err is not None
    raise last_err
