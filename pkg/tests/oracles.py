"""Independent geometric oracles shared by the planner tests."""
import numpy as np

from firefleet.planning import PLANAR, inflate, line_of_sight


def touches_blocked(blocked, a, b):
    """Closed-box slab test of segment a->b (cell units) against every blocked cell."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    d = b - a
    lo = np.maximum(np.floor(np.minimum(a, b)).astype(int) - 1, 0)
    hi = np.minimum(np.floor(np.maximum(a, b)).astype(int) + 1, np.array(blocked.shape) - 1)
    for c in np.argwhere(blocked[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]):
        c = c + lo
        t0, t1 = 0.0, 1.0
        for i in range(3):
            if d[i] == 0:
                if not (c[i] <= a[i] <= c[i] + 1):
                    break
            else:
                e, x = (c[i] - a[i]) / d[i], (c[i] + 1 - a[i]) / d[i]
                t0, t1 = max(t0, min(e, x)), min(t1, max(e, x))
        else:
            if t0 <= t1:
                return True
    return False


def check_path(grid, dist, path, cfg, start, goal):
    blocked = inflate(grid, dist, cfg.inflation_radius)
    wp = path.waypoints
    assert np.allclose(wp[0], start)
    dims = 2 if cfg.mode == PLANAR else 3
    assert np.linalg.norm(wp[-1][:dims] - np.asarray(goal)[:dims]) <= cfg.goal_tolerance + grid.resolution
    if cfg.mode == PLANAR:
        assert np.all(wp[:, 2] == start[2])
    pts = wp.copy()
    if cfg.mode == PLANAR and grid.dims[2] == 1:
        pts[:, 2] = grid.index_to_world(np.zeros(3))[2]
    for a, b in zip(pts[:-1], pts[1:]):
        assert line_of_sight(grid, a, b, blocked=blocked)
        fa = a / grid.resolution - grid.origin_index
        fb = b / grid.resolution - grid.origin_index
        assert not touches_blocked(blocked, fa, fb)
    inner = wp[1:-1]
    if len(inner) > 1:
        assert np.all(np.linalg.norm(np.diff(inner, axis=0), axis=1) <= cfg.max_los + 1e-9)
