"""Scenario files: TOML with fixed sections, strict keys and units.

Layout (SI units, angles in rad)::

    [sim]            name, duration [s], ts [s], controller, kappa
    [road]           lane_marks [m], y_min, y_max [m], lane_dist [m],
                     amp_lane, road_gain, safety_eps [m]
    [ego]            x, y [m], psi [rad], v_x [m/s]
    [[obstacles]]    kind = "static" | "idm" | "pedestrian" plus kind keys
    [[adhesion]]     t [s], mu
    [[v2x]]          t [s], hazards (obstacle names)

Every section is optional; omitted keys take the library defaults.
"""

from __future__ import annotations

import re
import sys
from importlib import resources
from pathlib import Path

from .apf import RoadDesc
from .errors import ParseError, ValidationError
from .idm import IdmParams, SpeedProfile
from .sim import (
    AdhesionProfile,
    EgoSpec,
    PedestrianProfile,
    ScenarioSpec,
    StaticObstacle,
    TrafficLane,
    V2xEvent,
)
from .vehicle import ChassisParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BUNDLED = ("normal", "aggressive", "unexpected")

_SECTIONS = {"sim", "road", "ego", "obstacles", "adhesion", "v2x"}
_SIM_KEYS = {"name", "duration", "ts", "controller", "kappa"}
_ROAD_KEYS = {"lane_marks", "y_min", "y_max", "lane_dist", "amp_lane", "road_gain", "safety_eps"}
_EGO_KEYS = {"x", "y", "psi", "v_x"}
_SHAPE_KEYS = {"amp", "shape_c"}
_STATIC_KEYS = {"kind", "name", "x", "y", "length", "width"} | _SHAPE_KEYS
_IDM_PARAM_KEYS = {"a_max", "b_comf", "v_des", "delta_exp", "s0", "t_gap", "length"}
_IDM_KEYS = {"kind", "name", "lane_y", "vehicles", "leader_speed", "width"} | _IDM_PARAM_KEYS | _SHAPE_KEYS
_PED_KEYS = {
    "kind", "name", "t_entry", "x", "y", "distance", "direction",
    "accel", "cruise", "decel", "length", "width",
} | _SHAPE_KEYS
_ADH_KEYS = {"t", "mu"}
_V2X_KEYS = {"t", "hazards"}


class _Source:
    """Raw text kept around to point errors at a line."""

    def __init__(self, text: str, path: str):
        self.lines = text.splitlines()
        self.path = path

    def line_of(self, key: str, header: str | None = None, nth: int = 0) -> int:
        """1-based line of ``key = ...`` inside the ``nth`` table named ``header``."""
        start, seen = 0, -1
        if header is not None:
            pat = re.compile(rf"^\s*\[\[?\s*{re.escape(header)}\s*\]\]?\s*(#.*)?$")
            for i, ln in enumerate(self.lines):
                if pat.match(ln):
                    seen += 1
                    if seen == nth:
                        start = i
                        break
        kpat = re.compile(rf"^\s*{re.escape(key)}\s*=")
        for i in range(start, len(self.lines)):
            if i > start and header is not None and self.lines[i].lstrip().startswith("["):
                break
            if kpat.match(self.lines[i]):
                return i + 1
        return start + 1 if header is not None else 0

    def error(self, msg: str, key: str, header: str | None = None, nth: int = 0) -> ParseError:
        line = self.line_of(key, header, nth)
        where = f"{self.path}:{line}" if line else self.path
        return ParseError(f"{where}: field '{key}': {msg}")


def _check_keys(src: _Source, table: dict, allowed: set, header: str, nth: int = 0) -> None:
    for k in table:
        if k not in allowed:
            raise src.error(f"unknown key in [{header}]", k, header, nth)


def _num(src: _Source, table: dict, key: str, header: str, nth: int = 0, default=None) -> float:
    if key not in table:
        if default is None:
            raise src.error("missing required value", key, header, nth)
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise src.error(f"expected a number, got {type(v).__name__}", key, header, nth)
    return float(v)


def _str(src: _Source, table: dict, key: str, header: str, nth: int = 0, default=None) -> str:
    if key not in table:
        if default is None:
            raise src.error("missing required value", key, header, nth)
        return default
    v = table[key]
    if not isinstance(v, str):
        raise src.error(f"expected a string, got {type(v).__name__}", key, header, nth)
    return v


def _pairs(src: _Source, table: dict, key: str, header: str, nth: int) -> tuple[tuple[float, float], ...]:
    v = table.get(key)
    ok = isinstance(v, list) and all(
        isinstance(p, list) and len(p) == 2 and all(isinstance(q, (int, float)) and not isinstance(q, bool) for q in p)
        for p in v
    )
    if not ok:
        raise src.error("expected a list of [number, number] pairs", key, header, nth)
    return tuple((float(a), float(b)) for a, b in v)


def _list_of_tables(src: _Source, data: dict, name: str) -> list[dict]:
    v = data.get(name, [])
    if not isinstance(v, list) or not all(isinstance(t, dict) for t in v):
        raise src.error("expected an array of tables", name)
    return v


def _table(src: _Source, data: dict, name: str) -> dict:
    v = data.get(name, {})
    if not isinstance(v, dict):
        raise src.error("expected a table", name)
    return v


def _opt(src, table, keys, header, nth, defaults) -> dict:
    return {k: _num(src, table, k, header, nth, getattr(defaults, k)) for k in keys if k in table}


def _obstacle(src: _Source, t: dict, nth: int):
    h = "obstacles"
    kind = _str(src, t, "kind", h, nth)
    name = _str(src, t, "name", h, nth)
    if kind == "static":
        _check_keys(src, t, _STATIC_KEYS, h, nth)
        base = StaticObstacle(name, 0.0, 0.0)
        kw = _opt(src, t, ("length", "width", "amp", "shape_c"), h, nth, base)
        return StaticObstacle(name, _num(src, t, "x", h, nth), _num(src, t, "y", h, nth), **kw)
    if kind == "idm":
        _check_keys(src, t, _IDM_KEYS, h, nth)
        params = IdmParams(**_opt(src, t, sorted(_IDM_PARAM_KEYS), h, nth, IdmParams()))
        vehicles = _pairs(src, t, "vehicles", h, nth)
        if not vehicles:
            raise ValidationError(f"obstacle {name!r}: an idm lane needs at least one vehicle")
        profile = SpeedProfile(_pairs(src, t, "leader_speed", h, nth)) if "leader_speed" in t else None
        base = TrafficLane(name, 0.0, ())
        kw = _opt(src, t, ("width", "amp", "shape_c"), h, nth, base)
        return TrafficLane(name, _num(src, t, "lane_y", h, nth), vehicles, params, profile, **kw)
    if kind == "pedestrian":
        _check_keys(src, t, _PED_KEYS, h, nth)
        if "direction" in t and (isinstance(t["direction"], bool) or t["direction"] not in (-1, 1)):
            raise src.error("direction must be -1 or 1", "direction", h, nth)
        base_keys = ("accel", "cruise", "decel", "length", "width", "amp", "shape_c")
        base = PedestrianProfile(name, 0.0, 0.0, 0.0, 1.0)
        kw = _opt(src, t, base_keys, h, nth, base)
        return PedestrianProfile(
            name,
            _num(src, t, "t_entry", h, nth),
            _num(src, t, "x", h, nth),
            _num(src, t, "y", h, nth),
            _num(src, t, "distance", h, nth),
            int(t.get("direction", 1)),
            **kw,
        )
    raise src.error(f"kind must be static, idm or pedestrian, got {kind!r}", "kind", h, nth)


def parse_scenario(text: str, path: str = "<string>") -> ScenarioSpec:
    """Parse scenario text.

    Raises:
        ParseError: malformed TOML, unknown or mistyped keys (with line and field).
        ValidationError: well-formed values that break a scenario invariant.
    """
    src = _Source(text, path)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    for k in data:
        if k not in _SECTIONS:
            raise src.error("unknown section", k)

    sim = _table(src, data, "sim")
    _check_keys(src, sim, _SIM_KEYS, "sim")
    defaults = ScenarioSpec()

    road_t = _table(src, data, "road")
    _check_keys(src, road_t, _ROAD_KEYS, "road")
    rd = RoadDesc()
    marks = road_t.get("lane_marks", list(rd.lane_marks))
    if not isinstance(marks, list) or not all(isinstance(m, (int, float)) and not isinstance(m, bool) for m in marks):
        raise src.error("expected a list of numbers", "lane_marks", "road")
    road = RoadDesc(
        lane_marks=tuple(float(m) for m in marks),
        lane_dist=_num(src, road_t, "lane_dist", "road", default=rd.lane_dist),
        y_road_min=_num(src, road_t, "y_min", "road", default=rd.y_road_min),
        y_road_max=_num(src, road_t, "y_max", "road", default=rd.y_road_max),
        amp_lane=_num(src, road_t, "amp_lane", "road", default=rd.amp_lane),
        road_gain=_num(src, road_t, "road_gain", "road", default=rd.road_gain),
        safety_eps=_num(src, road_t, "safety_eps", "road", default=rd.safety_eps),
    )

    ego_t = _table(src, data, "ego")
    _check_keys(src, ego_t, _EGO_KEYS, "ego")
    ego = EgoSpec(**{k: _num(src, ego_t, k, "ego", default=getattr(EgoSpec(), k)) for k in _EGO_KEYS})

    statics, traffic, peds = [], [], []
    for i, t in enumerate(_list_of_tables(src, data, "obstacles")):
        ob = _obstacle(src, t, i)
        {StaticObstacle: statics, TrafficLane: traffic, PedestrianProfile: peds}[type(ob)].append(ob)

    breaks = []
    for i, t in enumerate(_list_of_tables(src, data, "adhesion")):
        _check_keys(src, t, _ADH_KEYS, "adhesion", i)
        breaks.append((_num(src, t, "t", "adhesion", i), _num(src, t, "mu", "adhesion", i)))
    adhesion = AdhesionProfile(tuple(breaks)) if breaks else defaults.adhesion

    events = []
    for i, t in enumerate(_list_of_tables(src, data, "v2x")):
        _check_keys(src, t, _V2X_KEYS, "v2x", i)
        hz = t.get("hazards")
        if not isinstance(hz, list) or not all(isinstance(h, str) for h in hz):
            raise src.error("expected a list of obstacle names", "hazards", "v2x", i)
        events.append(V2xEvent(_num(src, t, "t", "v2x", i), tuple(hz)))

    return ScenarioSpec(
        name=_str(src, sim, "name", "sim", default=Path(path).stem if path != "<string>" else defaults.name),
        road=road,
        ego=ego,
        statics=tuple(statics),
        traffic=tuple(traffic),
        pedestrians=tuple(peds),
        adhesion=adhesion,
        v2x=tuple(events),
        duration=_num(src, sim, "duration", "sim", default=defaults.duration),
        ts=_num(src, sim, "ts", "sim", default=defaults.ts),
        controller=_str(src, sim, "controller", "sim", default=defaults.controller),
        chassis=ChassisParams(v_x=ego.v_x),
        kappa=_num(src, sim, "kappa", "sim", default=defaults.kappa),
    )


def load_scenario(path) -> ScenarioSpec:
    """Read a scenario file, or a bundled one by bare name (``"normal"``)."""
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        return bundled(str(path))
    if not p.is_file():
        raise FileNotFoundError(f"scenario file {path} does not exist")
    return parse_scenario(p.read_text(), str(p))


def bundled_path(name: str):
    return resources.files(__package__).joinpath("scenarios").joinpath(f"{name}.scn")


def bundled(name: str) -> ScenarioSpec:
    if name not in BUNDLED:
        raise ValueError(f"no bundled scenario {name!r}; choose from {', '.join(BUNDLED)}")
    f = bundled_path(name)
    return parse_scenario(f.read_text(), f"{name}.scn")


def bundled_all() -> list[ScenarioSpec]:
    return [bundled(n) for n in BUNDLED]
