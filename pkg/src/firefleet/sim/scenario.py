"""Scenario files: YAML describing the map, robots, rigs, fires and schedule.

Relative paths (map, trees) resolve against the scenario file's directory.
Map-less scenarios may name a built-in arena with ``arena: competition``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import yaml

from ..world_model import PointMap, load_point_map
from .arena import Box, box_surface_points, competition_arena
from .sensors import (GpsConfig, GpsOutlier, LidarConfig, MOUNTS, OdomConfig,
                      ThermalCameraConfig)
from .world import FIRE_KINDS, KINDS, TANK_CAPACITY, UGV

ARENAS = {"competition": competition_arena}


class ScenarioError(ValueError):
    """Invalid scenario (maps to exit code 2)."""


@dataclass
class RigSpec:
    lidar: LidarConfig
    gps: GpsConfig
    odom: OdomConfig
    camera: ThermalCameraConfig
    compass_sigma: float = 0.01
    altimeter_sigma: float = 0.05
    nozzle_offset: tuple[float, float, float] = (0.0, 0.1, 0.0)  # camera frame


@dataclass
class RobotSpec:
    id: str
    kind: str
    pose: np.ndarray
    tree: Optional[Path]
    rig: RigSpec
    start_delay: float = 0.0
    water: float = 0.0
    blanket: bool = False
    extinguish: str = ""
    mcl: dict = field(default_factory=dict)
    planner: dict = field(default_factory=dict)
    tracker: dict = field(default_factory=dict)
    procedure: dict = field(default_factory=dict)
    disturbance: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attack_distance: float = 1.5


@dataclass
class FireSpec:
    id: str
    kind: str
    position: np.ndarray
    normal: Optional[np.ndarray]
    temperature: float = 110.0
    radius: float = 0.25


@dataclass
class Objective:
    fire: str
    water_min: Optional[float] = None
    coverage_min: Optional[float] = None


@dataclass
class Scenario:
    name: str
    path: Optional[Path]
    seed: int
    duration: float
    resolution: float
    dt: float
    point_map: PointMap
    obstacles: list[Box]
    robots: list[RobotSpec]
    fires: list[FireSpec]
    objectives: list[Objective]
    map_source: str = ""

    def world_points(self) -> PointMap:
        """Map points plus the unmapped obstacles (present in the world only)."""
        if not self.obstacles:
            return self.point_map
        extra = [box_surface_points(b, 0.19) for b in self.obstacles]
        return PointMap(np.vstack([self.point_map.points, *extra]))


# -- parsing helpers -----------------------------------------------------------------

def _vec(v: Any, n: int, where: str) -> np.ndarray:
    try:
        a = np.asarray(v, float).reshape(-1)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: expected {n} numbers") from None
    if a.size != n or not np.all(np.isfinite(a)):
        raise ScenarioError(f"{where}: expected {n} finite numbers, got {v!r}")
    return a


def _num(d: dict, key: str, default: Any, where: str, lo: float = -math.inf, hi: float = math.inf) -> float:
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}.{key}: expected a number, got {v!r}")
    if not lo <= v <= hi:
        raise ScenarioError(f"{where}.{key}: {v} outside [{lo}, {hi}]")
    return float(v)


def _mapping(v: Any, where: str) -> dict:
    if v is None:
        return {}
    if not isinstance(v, dict):
        raise ScenarioError(f"{where}: expected a mapping")
    return v


def _only(d: dict, allowed: set, where: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise ScenarioError(f"{where}: unknown key {sorted(extra)[0]!r}")


def default_rig(kind: str) -> RigSpec:
    if kind == UGV:
        return RigSpec(LidarConfig(horizontal_rays=90, mount=(0.0, 0.0, 0.7)), GpsConfig(),
                       OdomConfig(), ThermalCameraConfig(mount="PanTilt", offset=(0.2, 0.0, 0.9)))
    return RigSpec(LidarConfig(horizontal_rays=90, mount=(0.0, 0.0, 0.5)), GpsConfig(),
                   OdomConfig(), ThermalCameraConfig(mount="Forward", offset=(0.3, 0.0, 0.3)))


def _rig(kind: str, d: dict, where: str) -> RigSpec:
    rig = default_rig(kind)
    _only(d, {"lidar", "gps", "odom", "camera", "compass_sigma", "altimeter_sigma", "nozzle_offset"}, where)
    if "lidar" in d:
        ld = _mapping(d["lidar"], f"{where}.lidar")
        _only(ld, {"channels", "horizontal_rays", "range_noise", "max_range", "mount"}, f"{where}.lidar")
        kw = {}
        for k in ("channels", "horizontal_rays"):
            if k in ld:
                kw[k] = int(_num(ld, k, 0, f"{where}.lidar", 1, 4096))
        for k in ("range_noise", "max_range"):
            if k in ld:
                kw[k] = _num(ld, k, 0, f"{where}.lidar", 0)
        if "mount" in ld:
            kw["mount"] = tuple(_vec(ld["mount"], 3, f"{where}.lidar.mount"))
        rig.lidar = LidarConfig(**{**rig.lidar.__dict__, **kw})
    if "gps" in d:
        gd = _mapping(d["gps"], f"{where}.gps")
        _only(gd, {"noise", "z_noise", "outlier"}, f"{where}.gps")
        outlier = None
        if gd.get("outlier") is not None:
            od = _mapping(gd["outlier"], f"{where}.gps.outlier")
            _only(od, {"t_start", "t_end", "velocity", "axis"}, f"{where}.gps.outlier")
            axis = od.get("axis", "y")
            if axis not in ("x", "y", "z"):
                raise ScenarioError(f"{where}.gps.outlier.axis: expected x, y or z")
            t0 = _num(od, "t_start", 0.0, f"{where}.gps.outlier", 0)
            t1 = _num(od, "t_end", None, f"{where}.gps.outlier", t0)
            outlier = GpsOutlier(t0, t1, _num(od, "velocity", None, f"{where}.gps.outlier"), "xyz".index(axis))
        rig.gps = GpsConfig(noise=_num(gd, "noise", rig.gps.noise, f"{where}.gps", 0),
                            z_noise=_num(gd, "z_noise", rig.gps.z_noise, f"{where}.gps", 0),
                            outlier=outlier)
    if "odom" in d:
        od = _mapping(d["odom"], f"{where}.odom")
        _only(od, {"drift", "yaw_bias", "noise"}, f"{where}.odom")
        rig.odom = OdomConfig(drift=tuple(_vec(od.get("drift", rig.odom.drift), 4, f"{where}.odom.drift")),
                              yaw_bias=_num(od, "yaw_bias", rig.odom.yaw_bias, f"{where}.odom"),
                              noise=tuple(_vec(od.get("noise", rig.odom.noise), 2, f"{where}.odom.noise")))
        if min(rig.odom.noise) < 0:
            raise ScenarioError(f"{where}.odom.noise: sigmas must be >= 0")
    if "camera" in d:
        cd = _mapping(d["camera"], f"{where}.camera")
        _only(cd, {"mount", "offset", "pitch_deg", "noise", "width", "height", "hfov_deg"}, f"{where}.camera")
        kw = dict(rig.camera.__dict__)
        if "mount" in cd:
            if cd["mount"] not in MOUNTS:
                raise ScenarioError(f"{where}.camera.mount: expected one of {', '.join(MOUNTS)}")
            kw["mount"] = cd["mount"]
        if "offset" in cd:
            kw["offset"] = tuple(_vec(cd["offset"], 3, f"{where}.camera.offset"))
        for k in ("pitch_deg", "noise", "hfov_deg"):
            if k in cd:
                kw[k] = _num(cd, k, 0, f"{where}.camera", 0 if k != "pitch_deg" else -90, 179)
        for k in ("width", "height"):
            if k in cd:
                kw[k] = int(_num(cd, k, 0, f"{where}.camera", 8, 4096))
        rig.camera = ThermalCameraConfig(**kw)
    rig.compass_sigma = _num(d, "compass_sigma", rig.compass_sigma, where, 0)
    rig.altimeter_sigma = _num(d, "altimeter_sigma", rig.altimeter_sigma, where, 0)
    if "nozzle_offset" in d:
        rig.nozzle_offset = tuple(_vec(d["nozzle_offset"], 3, f"{where}.nozzle_offset"))
    return rig


ROBOT_KEYS = {"id", "kind", "pose", "tree", "rig", "start_delay", "water", "blanket", "extinguish",
              "mcl", "planner", "tracker", "procedure", "disturbance", "attack_distance"}


def _robot(d: Any, i: int, base: Path) -> RobotSpec:
    where = f"robots[{i}]"
    d = _mapping(d, where)
    _only(d, ROBOT_KEYS, where)
    rid = d.get("id")
    if not isinstance(rid, str) or not rid:
        raise ScenarioError(f"{where}.id: expected a non-empty string")
    kind = d.get("kind")
    if kind not in KINDS:
        raise ScenarioError(f"{where}.kind: expected UGV or UAV, got {kind!r}")
    pose = _vec(d.get("pose"), 4, f"{where}.pose")
    tree = None
    if d.get("tree") is not None:
        tree = (base / str(d["tree"])).resolve()
        if not tree.is_file():
            raise ScenarioError(f"{where}.tree: file not found: {d['tree']}")
    water = _num(d, "water", TANK_CAPACITY[kind], where, 0, TANK_CAPACITY[kind])
    blanket = d.get("blanket", False)
    if not isinstance(blanket, bool):
        raise ScenarioError(f"{where}.blanket: expected true/false")
    ext = d.get("extinguish", "UgvWater" if kind == UGV else "UavFacadeWater")
    from ..extinguish import VARIANTS
    if ext not in VARIANTS:
        raise ScenarioError(f"{where}.extinguish: expected one of {', '.join(VARIANTS)}")
    if (ext == "UgvWater") != (kind == UGV):
        raise ScenarioError(f"{where}.extinguish: {ext} does not fit a {kind}")
    if ext == "UavBlanket" and not blanket:
        raise ScenarioError(f"{where}: the blanket procedure needs blanket: true")
    dist = _vec(d.get("disturbance", [0, 0, 0]), 3, f"{where}.disturbance")
    return RobotSpec(
        id=rid, kind=kind, pose=pose, tree=tree,
        rig=_rig(kind, _mapping(d.get("rig"), f"{where}.rig"), f"{where}.rig"),
        start_delay=_num(d, "start_delay", 0.0, where, 0), water=water, blanket=blanket,
        extinguish=ext, mcl=_mapping(d.get("mcl"), f"{where}.mcl"),
        planner=_mapping(d.get("planner"), f"{where}.planner"),
        tracker=_mapping(d.get("tracker"), f"{where}.tracker"),
        procedure=_mapping(d.get("procedure"), f"{where}.procedure"),
        disturbance=dist,
        attack_distance=_num(d, "attack_distance", 1.5 if kind == UGV else 2.5, where, 0.2, 10))


def _fire(d: Any, i: int) -> FireSpec:
    where = f"fires[{i}]"
    d = _mapping(d, where)
    _only(d, {"id", "kind", "position", "normal", "temperature", "radius"}, where)
    fid = d.get("id")
    if not isinstance(fid, str) or not fid:
        raise ScenarioError(f"{where}.id: expected a non-empty string")
    kind = d.get("kind")
    if kind not in FIRE_KINDS:
        raise ScenarioError(f"{where}.kind: expected one of {', '.join(FIRE_KINDS)}")
    normal = None if d.get("normal") is None else _vec(d["normal"], 3, f"{where}.normal")
    if normal is None and kind != "OutdoorGround":
        raise ScenarioError(f"{where}.normal: wall fires need a normal")
    if normal is not None and not np.linalg.norm(normal) > 0:
        raise ScenarioError(f"{where}.normal: zero vector")
    return FireSpec(fid, kind, _vec(d.get("position"), 3, f"{where}.position"), normal,
                    _num(d, "temperature", 110.0, where, -40, 110), _num(d, "radius", 0.25, where, 0.01, 5))


TOP_KEYS = {"name", "seed", "duration", "resolution", "dt", "map", "arena", "obstacles", "robots",
            "fires", "objectives"}


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario {path}: {e.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError(f"{path}: invalid YAML: {e}") from None
    return scenario_from_dict(data, path.resolve().parent, path)


def scenario_from_dict(data: Any, base: Path, path: Optional[Path] = None) -> Scenario:
    data = _mapping(data, "scenario")
    _only(data, TOP_KEYS, "scenario")
    name = str(data.get("name", path.stem if path else "scenario"))
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ScenarioError("seed: expected a non-negative integer")
    resolution = _num(data, "resolution", 0.2, "scenario", 0.01, 5)
    if ("map" in data) == ("arena" in data):
        raise ScenarioError("scenario needs exactly one of 'map' or 'arena'")
    if "map" in data:
        mp = base / str(data["map"])
        if not mp.is_file():
            raise ScenarioError(f"map: file not found: {data['map']}")
        try:
            pm = load_point_map(mp)
        except ValueError as e:
            raise ScenarioError(f"map: {e}") from None
        source = str(data["map"])
    else:
        if data["arena"] not in ARENAS:
            raise ScenarioError(f"arena: unknown arena {data['arena']!r}")
        pm = ARENAS[data["arena"]]().point_map()
        source = f"arena:{data['arena']}"
    obstacles = []
    for i, ob in enumerate(data.get("obstacles") or []):
        ob = _mapping(ob, f"obstacles[{i}]")
        try:
            obstacles.append(Box(tuple(_vec(ob.get("lo"), 3, f"obstacles[{i}].lo")),
                                 tuple(_vec(ob.get("hi"), 3, f"obstacles[{i}].hi"))))
        except ValueError as e:
            if isinstance(e, ScenarioError):
                raise
            raise ScenarioError(f"obstacles[{i}]: {e}") from None
    robots_raw = data.get("robots") or []
    if not isinstance(robots_raw, list) or not robots_raw:
        raise ScenarioError("robots: expected a non-empty list")
    robots = [_robot(r, i, base) for i, r in enumerate(robots_raw)]
    ids = [r.id for r in robots]
    if len(set(ids)) != len(ids):
        raise ScenarioError("robots: duplicate id")
    fires = [_fire(f, i) for i, f in enumerate(data.get("fires") or [])]
    fids = [f.id for f in fires]
    if len(set(fids)) != len(fids):
        raise ScenarioError("fires: duplicate id")
    objectives = []
    for i, ob in enumerate(data.get("objectives") or []):
        ob = _mapping(ob, f"objectives[{i}]")
        _only(ob, {"fire", "water_min", "coverage_min"}, f"objectives[{i}]")
        if ob.get("fire") not in fids:
            raise ScenarioError(f"objectives[{i}].fire: unknown fire {ob.get('fire')!r}")
        objectives.append(Objective(ob["fire"],
                                    _num(ob, "water_min", 0, f"objectives[{i}]", 0) if "water_min" in ob else None,
                                    _num(ob, "coverage_min", 0, f"objectives[{i}]", 0, 1)
                                    if "coverage_min" in ob else None))
    return Scenario(name=name, path=path, seed=seed,
                    duration=_num(data, "duration", 900.0, "scenario", 0.05),
                    resolution=resolution, dt=_num(data, "dt", 0.05, "scenario", 1e-3, 1.0),
                    point_map=pm, obstacles=obstacles, robots=robots, fires=fires,
                    objectives=objectives, map_source=source)
