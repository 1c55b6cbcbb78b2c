"""Arena geometry as axis-aligned solid boxes, and the point map sampled from
their surfaces.

Surface samples are pulled 1 mm inside each solid, so with box coordinates on
multiples of the grid resolution the occupied voxels lie exactly inside the
solids and free space stays free.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..world_model import PointMap

INSET = 1e-3
ALL_FACES = "xXyYzZ"


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    faces: str = ALL_FACES  # lower-case = min face, upper-case = max face along that axis

    def __post_init__(self) -> None:
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"degenerate box {self.lo} {self.hi}")

    def contains(self, p: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(p)
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)


def _axis_samples(lo: float, hi: float, spacing: float) -> np.ndarray:
    n = max(int(np.ceil((hi - lo) / spacing)), 1)
    return np.linspace(lo + INSET, hi - INSET, n + 1)


def box_surface_points(box: Box, spacing: float) -> np.ndarray:
    """Grid samples on the selected faces, spacing at most ``spacing``."""
    lo, hi = np.asarray(box.lo, float), np.asarray(box.hi, float)
    axes = [_axis_samples(lo[i], hi[i], spacing) for i in range(3)]
    out = []
    for i, (low_key, high_key) in enumerate(zip("xyz", "XYZ")):
        j, k = [a for a in range(3) if a != i]
        A, B = np.meshgrid(axes[j], axes[k], indexing="ij")
        for key, value in ((low_key, lo[i] + INSET), (high_key, hi[i] - INSET)):
            if key not in box.faces:
                continue
            pts = np.empty((A.size, 3))
            pts[:, i] = value
            pts[:, j] = A.ravel()
            pts[:, k] = B.ravel()
            out.append(pts)
    return np.vstack(out) if out else np.zeros((0, 3))


@dataclass
class Arena:
    name: str
    boxes: list[Box]

    def point_map(self, spacing: float = 0.19) -> PointMap:
        pts = np.vstack([box_surface_points(b, spacing) for b in self.boxes])
        # stable de-duplication keeps the map deterministic and compact
        pts = np.round(pts, 4)
        _, keep = np.unique(pts, axis=0, return_index=True)
        return PointMap(pts[np.sort(keep)])


def walls_with_openings(x0: float, x1: float, y: float, thickness: float, z0: float, z1: float,
                        openings: Iterable[tuple[float, float, float, float]] = (),
                        along_x: bool = True) -> list[Box]:
    """A straight wall split around rectangular openings ``(a0, a1, zb, zt)``
    given in the wall's own (along, z) coordinates."""
    cuts = sorted(openings)
    boxes = []
    a = x0
    for a0, a1, zb, zt in cuts:
        if a0 > a:
            boxes.append((a, a0, z0, z1))
        if zb > z0:
            boxes.append((a0, a1, z0, zb))
        if zt < z1:
            boxes.append((a0, a1, zt, z1))
        a = a1
    if a < x1:
        boxes.append((a, x1, z0, z1))
    out = []
    for a0, a1, zb, zt in boxes:
        if along_x:
            out.append(Box((a0, y, zb), (a1, y + thickness, zt)))
        else:
            out.append(Box((y, a0, zb), (y + thickness, a1, zt)))
    return out


def competition_arena() -> Arena:
    """40 x 30 m fenced arena with a three-storey 10 x 8 m building.

    Building footprint x in [-4, 6], y in [-4, 4]; 0.2 m walls; floors every
    3 m; ground-floor door on the south wall at x in [-1.4, 0.0]; a partition
    at x = 1 splits the ground floor into a west and an east room, connected
    at the north end (y > 1).
    """
    t = 0.2
    boxes: list[Box] = [Box((-20.0, -15.0, -0.2), (20.0, 15.0, 0.0), faces="Z")]
    # perimeter fence
    boxes += [Box((-20.0, -15.0, 0.0), (20.0, -14.8, 2.0)), Box((-20.0, 14.8, 0.0), (20.0, 15.0, 2.0)),
              Box((-20.0, -14.8, 0.0), (-19.8, 14.8, 2.0)), Box((19.8, -14.8, 0.0), (20.0, 14.8, 2.0))]
    # building shell
    x0, x1, y0, y1, top = -4.0, 6.0, -4.0, 4.0, 9.0
    boxes += walls_with_openings(x0, x1, y0, t, 0.0, top, [(-1.4, 0.0, 0.0, 2.2)])  # south, door
    boxes += walls_with_openings(x0, x1, y1 - t, t, 0.0, top)  # north
    boxes += walls_with_openings(y0 + t, y1 - t, x0, t, 0.0, top, along_x=False)  # west facade
    boxes += walls_with_openings(y0 + t, y1 - t, x1 - t, t, 0.0, top, along_x=False)  # east facade
    for z in (3.0, 6.0):
        boxes.append(Box((x0 + t, y0 + t, z), (x1 - t, y1 - t, z + t)))
    boxes.append(Box((x0, y0, top), (x1, y1, top + t)))
    # ground-floor partition, open at the north end
    boxes.append(Box((1.0, y0 + t, 0.0), (1.0 + t, 1.0, 3.0)))
    # outdoor clutter: containers and poles give the LIDAR structure to match
    for cx, cy in ((-14.0, -4.0), (12.0, 8.0), (12.0, -8.0), (-10.0, 12.0)):
        boxes.append(Box((cx - 1.0, cy - 1.0, 0.0), (cx + 1.0, cy + 1.0, 2.4)))
    for cx, cy in ((-17.0, 0.0), (-6.0, -10.0), (8.0, 12.0), (16.0, 0.0), (2.0, 10.0), (-16.0, 13.0)):
        boxes.append(Box((cx - 0.2, cy - 0.2, 0.0), (cx + 0.2, cy + 0.2, 4.0)))
    return Arena("competition", boxes)


def boxes_from_spec(items: Sequence[dict]) -> list[Box]:
    return [Box(tuple(map(float, it["lo"])), tuple(map(float, it["hi"]))) for it in items]
