"""Map-constrained host movement.

Two models are provided: shortest-path movement between random map nodes
(pedestrians, cars) and route movement between adjacent stops of a fixed
route (trams). Motion is continuous in time: a host alternates between
waiting at a point and travelling along graph edges at a constant per-leg
speed, carrying leftover distance across vertices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .worldmap import MapGraph, RouteDefinition, shortest_path

__all__ = [
    "MovementModel",
    "GroupMobilityConfig",
    "MobilityState",
    "init_position",
    "step",
    "trajectory",
]


class MovementModel(Enum):
    SHORTEST_PATH_MAP_BASED = "ShortestPathMapBasedMovement"
    MAP_ROUTE = "MapRouteMovement"


@dataclass(frozen=True)
class GroupMobilityConfig:
    speed_range: tuple[float, float]
    wait_range: tuple[float, float]
    model: MovementModel = MovementModel.SHORTEST_PATH_MAP_BASED
    route: RouteDefinition | None = None

    def __post_init__(self):
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid speed range {self.speed_range}")
        lo, hi = self.wait_range
        if not 0 <= lo <= hi:
            raise ValueError(f"invalid wait range {self.wait_range}")


@dataclass
class MobilityState:
    model: MovementModel
    current_pos: np.ndarray
    path: list[int]
    wait_until: float
    speed: float
    rng: np.random.Generator
    time: float = 0.0
    node: int = -1
    """Last graph node reached (or the start node)."""
    stop: int = -1
    prev_stop: int = -1
    knots: list[tuple[float, float, float]] | None = field(default=None, repr=False)


def init_position(g: MapGraph, cfg: GroupMobilityConfig, rng: np.random.Generator,
                  t0: float = 0.0) -> MobilityState:
    """Place a host on the map; it starts with an empty path, so its first
    action is a wait followed by the choice of a destination."""
    if g.n_nodes == 0:
        raise ValueError("empty graph")
    stop = -1
    if cfg.model is MovementModel.MAP_ROUTE:
        if cfg.route is None:
            raise ValueError("MapRoute movement needs a route definition")
        stop = int(rng.integers(len(cfg.route.stops)))
        node = cfg.route.stops[stop]
    else:
        node = int(rng.integers(g.n_nodes))
    pos = g.coords[node].copy()
    return MobilityState(cfg.model, pos, [], t0, 0.0, rng, time=t0, node=node, stop=stop)


def _plan_next(state: MobilityState, g: MapGraph, cfg: GroupMobilityConfig):
    rng = state.rng
    wait = float(rng.uniform(*cfg.wait_range)) if cfg.wait_range[1] > cfg.wait_range[0] else cfg.wait_range[0]
    if cfg.model is MovementModel.MAP_ROUTE:
        route = cfg.route
        options = route.neighbours(state.stop)
        if len(options) > 1 and state.prev_stop in options:
            options = [o for o in options if o != state.prev_stop]
        nxt = options[int(rng.integers(len(options)))] if len(options) > 1 else options[0]
        state.prev_stop, state.stop = state.stop, nxt
        dest = route.stops[nxt]
    else:
        dest = int(rng.integers(g.n_nodes))
    speed = float(rng.uniform(*cfg.speed_range))
    state.wait_until = state.time + wait
    state.path = shortest_path(g, state.node, dest)[1:]
    state.speed = speed


def _advance(state: MobilityState, g: MapGraph, cfg: GroupMobilityConfig, t_target: float):
    knots = state.knots
    stuck = g.n_nodes == 1 and cfg.model is not MovementModel.MAP_ROUTE
    while state.time < t_target:
        if state.wait_until > state.time:
            if state.wait_until >= t_target:
                state.time = t_target
                return
            state.time = state.wait_until
            if knots is not None:
                knots.append((state.time, state.current_pos[0], state.current_pos[1]))
            continue
        if not state.path:
            if stuck:
                state.wait_until = math.inf
                continue
            _plan_next(state, g, cfg)
            continue
        v = state.path[0]
        target = g.coords[v]
        dx = target[0] - state.current_pos[0]
        dy = target[1] - state.current_pos[1]
        dist = math.hypot(dx, dy)
        need = dist / state.speed
        if state.time + need <= t_target:
            state.time += need
            state.current_pos = target.copy()
            state.node = v
            state.path.pop(0)
            if knots is not None:
                knots.append((state.time, target[0], target[1]))
        else:
            frac = (t_target - state.time) * state.speed / dist
            state.current_pos = state.current_pos + np.array([dx * frac, dy * frac])
            state.time = t_target


def step(state: MobilityState, g: MapGraph, cfg: GroupMobilityConfig, dt: float) -> MobilityState:
    """Advance ``state`` by ``dt`` seconds in place and return it."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    _advance(state, g, cfg, state.time + dt)
    return state


def trajectory(state: MobilityState, g: MapGraph, cfg: GroupMobilityConfig,
               t_end: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the host until ``t_end`` and return its piecewise-linear knots
    ``(times, xs, ys)``; sampling them with ``np.interp`` gives the position
    at any time."""
    state.knots = [(state.time, state.current_pos[0], state.current_pos[1])]
    _advance(state, g, cfg, t_end)
    state.knots.append((state.time, state.current_pos[0], state.current_pos[1]))
    arr = np.array(state.knots, dtype=float)
    state.knots = None
    return arr[:, 0], arr[:, 1], arr[:, 2]
