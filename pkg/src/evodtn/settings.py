"""Settings files in the ``key = value`` dialect and scenario assembly.

Values may be numbers with ``k``/``M``/``G`` suffixes (powers of 1000),
comma-separated pairs, booleans or strings. Group-specific keys
(``Group3.speed``) override the shared ``Group.speed``.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .mobility import GroupMobilityConfig, MovementModel
from .netsim import EventConfig, HostGroup, ProphetParams, RadioInterface, ScenarioSpec
from .worldmap import (MapGraph, RouteDefinition, RouteType, generate_grid, generate_random_planar,
                       load_route, load_wkt_files)

__all__ = [
    "SettingsError",
    "Settings",
    "parse_settings",
    "format_settings",
    "load_settings",
    "build_scenario",
    "bundled_scenario",
    "bundled_scenarios",
]

log = logging.getLogger(__name__)

_SUFFIX = {"k": 1e3, "M": 1e6, "G": 1e9}
_NUMBER = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)([kMG]?)$")


class SettingsError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def _scalar(text: str) -> Any:
    m = _NUMBER.match(text)
    if m:
        v = float(m.group(1)) * _SUFFIX.get(m.group(2), 1)
        return int(v) if v.is_integer() and ("." not in m.group(1) or m.group(2)) else v
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    return text


def parse_value(text: str) -> Any:
    text = text.strip()
    if "," in text:
        return tuple(_scalar(p.strip()) for p in text.split(","))
    return _scalar(text)


def _format_scalar(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_KNOWN = {
    "Scenario": {"name", "simulateConnections", "updateInterval", "endTime", "nrofHostGroups"},
    "Group": {"groupID", "movementModel", "router", "bufferSize", "waitTime", "nrofInterfaces",
              "speed", "msgTtl", "nrofHosts", "okMaps", "routeFile", "routeType", "routeStops"},
    "Events": {"nrof", "class", "interval", "size", "hosts", "prefix"},
    "MovementModel": {"rngSeed", "worldSize", "warmup"},
    "MapBasedMovement": {"nrofMapFiles", "generator", "gridSize", "gridSpacing", "planarNodes",
                         "planarSize", "planarSeed"},
    "Report": {"nrofReports", "warmup", "reportDir"},
    "ProphetRouter": {"secondsInTimeUnit", "pInit", "beta", "gamma"},
    "Optimization": {"cellSizeMult", "randomizeUpdateOrder", "allowSendWhileReceiving"},
    "interface": {"type", "transmitSpeed", "transmitRange"},
}
_NS = re.compile(r"^([A-Za-z]+?)(\d*)\.(\w+?)(\d*)$")


@dataclass
class Settings:
    """Flat ``key -> value`` map; ``base_dir`` anchors relative file paths."""

    values: dict[str, Any] = field(default_factory=dict)
    base_dir: Path | None = None

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    def require(self, key: str) -> Any:
        if key not in self.values:
            raise SettingsError(f"missing required setting {key}")
        return self.values[key]

    def group(self, index: int, key: str, default: Any = None) -> Any:
        """``GroupN.key``, falling back to ``Group.key`` and then ``default``."""
        specific = f"Group{index}.{key}"
        if specific in self.values:
            return self.values[specific]
        return self.values.get(f"Group.{key}", default)

    def updated(self, **overrides: Any) -> "Settings":
        vals = dict(self.values)
        vals.update({k.replace("__", "."): v for k, v in overrides.items()})
        return Settings(vals, self.base_dir)

    def unknown_keys(self) -> list[str]:
        ifaces = {v for k, v in self.values.items() if re.match(r"^Group\d*\.interface\d+$", k)}
        out = []
        for key in self.values:
            m = _NS.match(key)
            if not m:
                out.append(key)
                continue
            ns, _, name, _ = m.groups()
            if ns in ifaces or key.split(".")[0] in ifaces:
                ok = key.split(".", 1)[1] in _KNOWN["interface"]
            elif ns == "Group" and re.match(r"^interface\d+$", key.split(".", 1)[1]):
                ok = True
            elif ns == "MapBasedMovement" and re.match(r"^mapFile\d+$", key.split(".", 1)[1]):
                ok = True
            elif ns == "Report" and re.match(r"^report\d+$", key.split(".", 1)[1]):
                ok = True
            else:
                ok = key.split(".", 1)[1] in _KNOWN.get(ns, ()) or name in _KNOWN.get(ns, ())
            if not ok:
                out.append(key)
        return out


def parse_settings(text: str, base_dir: str | Path | None = None) -> Settings:
    """Parse settings text; later keys override earlier ones. Unknown keys
    are logged as warnings."""
    values: dict[str, Any] = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SettingsError(f"expected 'key = value', got {raw.strip()!r}", no)
        key, val = (s.strip() for s in line.split("=", 1))
        if not key or not re.match(r"^[A-Za-z_][\w.]*$", key):
            raise SettingsError(f"invalid key {key!r}", no)
        if val == "":
            raise SettingsError(f"empty value for {key}", no)
        values[key] = parse_value(val)
    s = Settings(values, Path(base_dir) if base_dir is not None else None)
    for key in s.unknown_keys():
        log.warning("unknown setting %s", key)
    return s


def format_settings(s: Settings) -> str:
    lines = []
    for k, v in s.values.items():
        if isinstance(v, tuple):
            lines.append(f"{k} = {', '.join(_format_scalar(x) for x in v)}")
        else:
            lines.append(f"{k} = {_format_scalar(v)}")
    return "\n".join(lines) + "\n"


def load_settings(path: str | Path) -> Settings:
    path = Path(path)
    return parse_settings(path.read_text(), path.parent)


# --------------------------------------------------------------- scenario

def _pair(v: Any, key: str) -> tuple[float, float]:
    if isinstance(v, tuple):
        if len(v) != 2:
            raise SettingsError(f"{key} needs two values, got {len(v)}")
        return float(v[0]), float(v[1])
    return float(v), float(v)


def _read(s: Settings, rel: str) -> str:
    path = Path(rel)
    if not path.is_absolute() and s.base_dir is not None:
        path = s.base_dir / path
    try:
        return path.read_text()
    except OSError as exc:
        raise SettingsError(f"cannot read {path}: {exc.strerror}") from exc


def _build_map(s: Settings) -> MapGraph:
    gen = s.get("MapBasedMovement.generator")
    if gen == "grid":
        rows, cols = (int(x) for x in _pair(s.require("MapBasedMovement.gridSize"), "gridSize"))
        return generate_grid(rows, cols, float(s.get("MapBasedMovement.gridSpacing", 100)))
    if gen == "planar":
        w, h = _pair(s.get("MapBasedMovement.planarSize", s.get("MovementModel.worldSize", (1000, 1000))),
                     "planarSize")
        return generate_random_planar(int(s.get("MapBasedMovement.planarNodes", 200)), w, h,
                                      int(s.get("MapBasedMovement.planarSeed", 1)))
    if gen is not None:
        raise SettingsError(f"unknown map generator {gen!r}")
    n = int(s.require("MapBasedMovement.nrofMapFiles"))
    return load_wkt_files([_read(s, s.require(f"MapBasedMovement.mapFile{i}")) for i in range(1, n + 1)])


def _ok_maps_mask(v: Any) -> int | None:
    if v is None:
        return None
    idx = v if isinstance(v, tuple) else (v,)
    mask = 0
    for i in idx:
        mask |= 1 << (int(i) - 1)
    return mask


def _route(s: Settings, gi: int, g: MapGraph, seed: int) -> RouteDefinition:
    rtype = RouteType(int(s.group(gi, "routeType", 1)))
    rel = s.group(gi, "routeFile")
    if rel is not None:
        return load_route(_read(s, rel), g, rtype)
    n_stops = int(s.group(gi, "routeStops", 0))
    if n_stops < 2:
        raise SettingsError(f"Group{gi} uses MapRouteMovement but has no routeFile or routeStops")
    rng = np.random.default_rng([seed, 4, gi])
    stops = rng.choice(g.n_nodes, size=min(n_stops, g.n_nodes), replace=False)
    return RouteDefinition(tuple(int(x) for x in stops), rtype)


def build_scenario(s: Settings, seed: int | None = None) -> ScenarioSpec:
    """Resolve settings into a :class:`ScenarioSpec`; ``seed`` overrides
    ``MovementModel.rngSeed``."""
    seed = int(s.get("MovementModel.rngSeed", 1)) if seed is None else int(seed)
    graph = _build_map(s)
    n_groups = int(s.require("Scenario.nrofHostGroups"))
    interfaces: dict[str, RadioInterface] = {}
    groups = []
    route_seed = int(s.get("MovementModel.rngSeed", 1))
    for gi in range(1, n_groups + 1):
        n_hosts = int(s.group(gi, "nrofHosts", -1))
        if n_hosts < 0:
            raise SettingsError(f"missing required setting Group{gi}.nrofHosts")
        model = MovementModel(s.group(gi, "movementModel", MovementModel.SHORTEST_PATH_MAP_BASED.value))
        mask = _ok_maps_mask(s.group(gi, "okMaps"))
        sub = graph.subgraph(mask)[0] if mask is not None else graph
        route = _route(s, gi, sub, route_seed) if model is MovementModel.MAP_ROUTE else None
        mob = GroupMobilityConfig(_pair(s.group(gi, "speed", (0.5, 1.5)), "speed"),
                                  _pair(s.group(gi, "waitTime", (0, 120)), "waitTime"), model, route)
        names = []
        for k in range(1, int(s.group(gi, "nrofInterfaces", 1)) + 1):
            name = s.group(gi, f"interface{k}")
            if name is None:
                raise SettingsError(f"Group{gi}.interface{k} is not set")
            if name not in interfaces:
                interfaces[name] = RadioInterface(name, float(s.require(f"{name}.transmitSpeed")),
                                                  float(s.require(f"{name}.transmitRange")))
            names.append(name)
        groups.append(HostGroup(str(s.group(gi, "groupID", f"g{gi}")), n_hosts, mob, tuple(names),
                                int(s.group(gi, "bufferSize", 5_000_000)),
                                float(s.group(gi, "msgTtl", 300)) * 60.0, mask))
    total = sum(g.n_hosts for g in groups)
    events = None
    if int(s.get("Events.nrof", 1)) >= 1 and "Events1.interval" in s:
        lo, hi = (int(x) for x in _pair(s.require("Events1.hosts"), "Events1.hosts"))
        if not 0 <= lo < hi or hi > total or hi - lo < 2:
            raise SettingsError(f"Events1.hosts {lo},{hi} inconsistent with {total} hosts")
        size = _pair(s.require("Events1.size"), "Events1.size")
        events = EventConfig(_pair(s["Events1.interval"], "Events1.interval"),
                             (int(size[0]), int(size[1])), (lo, hi), str(s.get("Events1.prefix", "M")))
    prophet = ProphetParams(float(s.get("ProphetRouter.pInit", 0.75)), float(s.get("ProphetRouter.beta", 0.25)),
                            float(s.get("ProphetRouter.gamma", 0.98)),
                            float(s.get("ProphetRouter.secondsInTimeUnit", 30)))
    return ScenarioSpec(
        name=str(s.get("Scenario.name", "scenario")),
        graph=graph,
        groups=tuple(groups),
        interfaces=interfaces,
        events=events,
        end_time=float(s.require("Scenario.endTime")),
        warmup=float(s.get("MovementModel.warmup", 0)),
        update_interval=float(s.get("Scenario.updateInterval", 0.1)),
        seed=seed,
        prophet=prophet,
        randomize_update_order=bool(s.get("Optimization.randomizeUpdateOrder", False)),
        allow_send_while_receiving=bool(s.get("Optimization.allowSendWhileReceiving", True)),
    )


def bundled_scenarios() -> list[str]:
    root = resources.files("evodtn") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".txt"))


def bundled_scenario(name: str) -> Path:
    """Path of a settings file shipped with the package (``desk_grid`` ...)."""
    path = Path(str(resources.files("evodtn") / "scenarios" / f"{name}.txt"))
    if not path.exists():
        raise FileNotFoundError(f"no bundled scenario {name!r}; have {bundled_scenarios()}")
    return path
