"""Road-network graphs: WKT loading, synthetic generators and shortest paths."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

__all__ = [
    "WKTSyntaxError",
    "MapGraph",
    "RouteType",
    "RouteDefinition",
    "load_wkt",
    "load_wkt_files",
    "dump_wkt",
    "generate_grid",
    "generate_random_planar",
    "shortest_path",
    "load_route",
]


class WKTSyntaxError(ValueError):
    """Raised for malformed WKT input; carries the 1-based line and column."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Point2D:
    x: float
    y: float


@dataclass(eq=False)
class MapGraph:
    """Undirected geometric graph. Node coordinates live in ``coords`` (n, 2).

    ``edge_layers`` records, per edge, the bit mask of the map files that
    contributed it, so movement can be restricted to a subset of layers.
    """

    coords: np.ndarray
    edges: np.ndarray
    world_size: tuple[float, float]
    edge_layers: np.ndarray | None = None
    offset: tuple[float, float] = (0.0, 0.0)
    _adj: list[list[int]] | None = field(default=None, repr=False)
    _pred: np.ndarray | None = field(default=None, repr=False)
    _dist: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.edge_layers is None:
            self.edge_layers = np.ones(len(self.edges), dtype=np.int64)

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def nodes(self) -> list[Point2D]:
        return [Point2D(float(x), float(y)) for x, y in self.coords]

    @property
    def edge_lengths(self) -> np.ndarray:
        d = self.coords[self.edges[:, 0]] - self.coords[self.edges[:, 1]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def adjacency(self) -> list[list[int]]:
        if self._adj is None:
            adj: list[list[int]] = [[] for _ in range(self.n_nodes)]
            for a, b in self.edges.tolist():
                adj[a].append(b)
                adj[b].append(a)
            self._adj = adj
        return self._adj

    def _csgraph(self) -> csr_matrix:
        n = self.n_nodes
        w = self.edge_lengths
        a, b = self.edges[:, 0], self.edges[:, 1]
        return csr_matrix((np.concatenate([w, w]), (np.concatenate([a, b]), np.concatenate([b, a]))), shape=(n, n))

    def _ensure_paths(self):
        if self._pred is None:
            dist, pred = dijkstra(self._csgraph(), directed=False, return_predecessors=True)
            self._dist, self._pred = dist, pred

    def distance(self, a: int, b: int) -> float:
        self._ensure_paths()
        return float(self._dist[a, b])

    def nearest_node(self, x: float, y: float) -> tuple[int, float]:
        d = np.hypot(self.coords[:, 0] - x, self.coords[:, 1] - y)
        i = int(np.argmin(d))
        return i, float(d[i])

    def subgraph(self, layer_mask: int) -> tuple["MapGraph", np.ndarray]:
        """Graph restricted to edges of the given layers, largest component only.

        Returns the subgraph and the array mapping its node indices back to
        this graph's indices.
        """
        keep = (self.edge_layers & layer_mask) != 0
        edges = self.edges[keep]
        used = np.unique(edges)
        if used.size == 0:
            raise ValueError(f"no edges in layer mask {layer_mask}")
        remap = -np.ones(self.n_nodes, dtype=np.int64)
        remap[used] = np.arange(used.size)
        sub = MapGraph(self.coords[used], remap[edges], self.world_size, self.edge_layers[keep], self.offset)
        sub, kept = _largest_component(sub)
        return sub, used[kept]


def _largest_component(g: MapGraph) -> tuple[MapGraph, np.ndarray]:
    n = g.n_nodes
    if n == 0:
        return g, np.arange(0)
    if g.n_edges == 0:
        return MapGraph(g.coords[:1], np.empty((0, 2)), g.world_size, offset=g.offset), np.arange(1)
    ncomp, labels = connected_components(g._csgraph(), directed=False)
    if ncomp == 1:
        return g, np.arange(n)
    counts = np.bincount(labels)
    # ties resolved by the lowest label, i.e. the component holding the lowest node index
    best = int(np.argmax(counts))
    kept = np.flatnonzero(labels == best)
    remap = -np.ones(n, dtype=np.int64)
    remap[kept] = np.arange(kept.size)
    emask = labels[g.edges[:, 0]] == best
    sub = MapGraph(g.coords[kept], remap[g.edges[emask]], g.world_size, g.edge_layers[emask], g.offset)
    return sub, kept


def _build(vertex_lists: Iterable[tuple[Sequence[tuple[float, float]], int]],
           points: Sequence[tuple[float, float]] = (), *, normalize: bool = True) -> MapGraph:
    index: dict[tuple[float, float], int] = {}
    coords: list[tuple[float, float]] = []
    edge_map: dict[tuple[int, int], int] = {}

    def node(p):
        i = index.get(p)
        if i is None:
            i = index[p] = len(coords)
            coords.append(p)
        return i

    for verts, layer in vertex_lists:
        prev = None
        for p in verts:
            i = node(p)
            if prev is not None and prev != i:
                key = (min(prev, i), max(prev, i))
                edge_map[key] = edge_map.get(key, 0) | layer
            prev = i
    for p in points:
        node(p)
    if not coords:
        raise ValueError("empty geometry set")
    xy = np.array(coords, dtype=float)
    offset = (0.0, 0.0)
    if normalize:
        lo = xy.min(axis=0)
        xy = xy - lo
        offset = (float(lo[0]), float(lo[1]))
    keys = sorted(edge_map)
    edges = np.array(keys, dtype=np.int64).reshape(-1, 2)
    layers = np.array([edge_map[k] for k in keys], dtype=np.int64)
    size = (float(xy[:, 0].max()), float(xy[:, 1].max()))
    g = MapGraph(xy, edges, size, layers, offset)
    g, _ = _largest_component(g)
    return g


_TOKEN = re.compile(r"\s*(?:(?P<word>[A-Za-z]+)|(?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)|(?P<punct>[(),]))")


class _Lexer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.tok_start = 0
        self._skip()

    def _skip(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def where(self, pos: int | None = None) -> tuple[int, int]:
        pos = self.pos if pos is None else pos
        line = self.text.count("\n", 0, pos) + 1
        col = pos - (self.text.rfind("\n", 0, pos) + 1) + 1
        return line, col

    def error(self, msg: str, pos: int | None = None):
        raise WKTSyntaxError(msg, *self.where(pos))

    def token_error(self, msg: str):
        """Error located at the start of the most recently read token."""
        self.error(msg, self.tok_start)

    def at_end(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self) -> tuple[str, str] | None:
        if self.at_end():
            return None
        m = _TOKEN.match(self.text, self.pos)
        if m is None:
            self.error(f"unexpected character {self.text[self.pos]!r}")
        kind = m.lastgroup
        return kind, m.group(kind)

    def next(self) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            self.error("unexpected end of input")
        m = _TOKEN.match(self.text, self.pos)
        self.tok_start = m.start(m.lastgroup)
        self.pos = m.end()
        self._skip()
        return tok

    def expect(self, value: str):
        tok = self.next()
        if tok[1] != value:
            self.token_error(f"expected {value!r}, got {tok[1]!r}")


def _parse_coords(lx: _Lexer) -> list[tuple[float, float]]:
    lx.expect("(")
    pts = []
    while True:
        x = lx.next()
        if x[0] != "num":
            lx.token_error("expected coordinate pair")
        y = lx.next()
        if y[0] != "num":
            lx.token_error("expected coordinate pair")
        pts.append((float(x[1]), float(y[1])))
        tok = lx.next()
        if tok[1] == ")":
            return pts
        if tok[1] != ",":
            lx.token_error(f"expected ',' or ')', got {tok[1]!r}")


def _parse_wkt(text: str) -> tuple[list[list[tuple[float, float]]], list[tuple[float, float]]]:
    lx = _Lexer(text)
    lines: list[list[tuple[float, float]]] = []
    points: list[tuple[float, float]] = []
    while not lx.at_end():
        kind, word = lx.next()
        if kind != "word":
            lx.token_error(f"expected geometry keyword, got {word!r}")
        word = word.upper()
        if word == "LINESTRING":
            lines.append(_parse_coords(lx))
        elif word == "MULTILINESTRING":
            lx.expect("(")
            while True:
                lines.append(_parse_coords(lx))
                tok = lx.next()
                if tok[1] == ")":
                    break
                if tok[1] != ",":
                    lx.token_error(f"expected ',' or ')', got {tok[1]!r}")
        elif word == "POINT":
            pts = _parse_coords(lx)
            if len(pts) != 1:
                lx.token_error("POINT takes exactly one coordinate pair")
            points.append(pts[0])
        else:
            lx.token_error(f"unsupported geometry {word}")
    return lines, points


def load_wkt(text: str, *, normalize: bool = True) -> MapGraph:
    """Parse LINESTRING / MULTILINESTRING / POINT geometries into a MapGraph.

    Vertices are deduplicated by exact coordinate match and consecutive
    vertices become edges. Coordinates are translated so the minimum corner
    is the origin, and components not connected to the largest one are
    pruned.
    """
    lines, points = _parse_wkt(text)
    if not lines and not points:
        raise ValueError("empty geometry set")
    return _build(((ln, 1) for ln in lines), points, normalize=normalize)


def load_wkt_files(texts: Sequence[str]) -> MapGraph:
    """Merge several map layers into one graph; layer i contributes bit ``1 << i``."""
    groups = []
    allpoints = []
    for i, text in enumerate(texts):
        lines, points = _parse_wkt(text)
        groups.extend((ln, 1 << i) for ln in lines)
        allpoints.extend(points)
    return _build(groups, allpoints)


def dump_wkt(g: MapGraph) -> str:
    """One LINESTRING per edge; ``load_wkt(dump_wkt(g))`` is isomorphic to ``g``."""
    out = []
    for a, b in g.edges.tolist():
        (x1, y1), (x2, y2) = g.coords[a].tolist(), g.coords[b].tolist()
        out.append(f"LINESTRING ({x1!r} {y1!r}, {x2!r} {y2!r})")
    return "\n".join(out) + "\n"


def generate_grid(rows: int, cols: int, spacing: float) -> MapGraph:
    """Manhattan-style lattice with 4-neighbour streets."""
    if rows < 2 or cols < 2 or not spacing > 0:
        raise ValueError("need rows >= 2, cols >= 2 and spacing > 0")
    r, c = np.divmod(np.arange(rows * cols), cols)
    coords = np.column_stack([c * spacing, r * spacing]).astype(float)
    idx = np.arange(rows * cols).reshape(rows, cols)
    horiz = np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()])
    vert = np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])
    edges = np.vstack([horiz, vert])
    return MapGraph(coords, edges, ((cols - 1) * spacing, (rows - 1) * spacing))


def generate_random_planar(n_nodes: int, width: float, height: float, seed: int,
                           keep_fraction: float = 0.6) -> MapGraph:
    """Sparse planar road network: a Delaunay triangulation of random points
    thinned to ``keep_fraction`` of its edges while staying connected.

    The minimum spanning tree is always kept, then the shortest remaining
    Delaunay edges are added until the target edge count is reached.
    """
    from scipy.sparse.csgraph import minimum_spanning_tree
    from scipy.spatial import Delaunay

    if n_nodes < 3:
        raise ValueError("need at least 3 nodes")
    rng = np.random.default_rng(seed)
    pts = np.round(rng.uniform([0, 0], [width, height], size=(n_nodes, 2)), 1)
    pts = np.unique(pts, axis=0)
    tri = Delaunay(pts)
    s = tri.simplices
    cand = np.vstack([s[:, [0, 1]], s[:, [1, 2]], s[:, [0, 2]]])
    cand = np.unique(np.sort(cand, axis=1), axis=0)
    d = pts[cand[:, 0]] - pts[cand[:, 1]]
    w = np.hypot(d[:, 0], d[:, 1])
    n = len(pts)
    m = csr_matrix((w, (cand[:, 0], cand[:, 1])), shape=(n, n))
    mst = minimum_spanning_tree(m).tocoo()
    chosen = {(min(a, b), max(a, b)) for a, b in zip(mst.row.tolist(), mst.col.tolist())}
    target = max(len(chosen), int(round(keep_fraction * len(cand))))
    for k in np.argsort(w, kind="stable"):
        if len(chosen) >= target:
            break
        chosen.add((int(cand[k, 0]), int(cand[k, 1])))
    edges = np.array(sorted(chosen), dtype=np.int64)
    pts = pts - pts.min(axis=0)
    return MapGraph(pts, edges, (float(pts[:, 0].max()), float(pts[:, 1].max())))


def shortest_path(g: MapGraph, src: int, dst: int) -> list[int]:
    """Node sequence of a minimum-length path from ``src`` to ``dst``."""
    n = g.n_nodes
    if not (0 <= src < n and 0 <= dst < n):
        raise IndexError("node index out of range")
    if src == dst:
        return [src]
    g._ensure_paths()
    pred = g._pred[src]
    if pred[dst] < 0:
        raise RuntimeError(f"nodes {src} and {dst} are disconnected")
    path = [dst]
    cur = dst
    while cur != src:
        cur = int(pred[cur])
        path.append(cur)
    path.reverse()
    return path


def path_length(g: MapGraph, path: Sequence[int]) -> float:
    return float(sum(math.dist(g.coords[a], g.coords[b]) for a, b in zip(path, path[1:])))


class RouteType(Enum):
    CIRCULAR = 1
    PING_PONG = 2


@dataclass(frozen=True)
class RouteDefinition:
    """Ordered stop sequence snapped onto graph nodes."""

    stops: tuple[int, ...]
    route_type: RouteType
    snap_distances: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.stops) < 2:
            raise ValueError("a route needs at least 2 stops")

    def neighbours(self, i: int) -> list[int]:
        """Indices (into ``stops``) adjacent to stop index ``i``."""
        n = len(self.stops)
        if self.route_type is RouteType.CIRCULAR:
            return sorted({(i - 1) % n, (i + 1) % n})
        return [j for j in (i - 1, i + 1) if 0 <= j < n]


def load_route(text: str, g: MapGraph, route_type: RouteType | int) -> RouteDefinition:
    """Snap the vertices of a WKT LINESTRING to the nearest graph nodes.

    Route coordinates are in the raw frame of the map files; the graph's
    normalization offset is removed before snapping.
    """
    origin = g.offset
    lines, points = _parse_wkt(text)
    verts = [p for ln in lines for p in ln] + list(points)
    stops, snaps = [], []
    for x, y in verts:
        i, d = g.nearest_node(x - origin[0], y - origin[1])
        if not stops or stops[-1] != i:
            stops.append(i)
            snaps.append(d)
    return RouteDefinition(tuple(stops), RouteType(route_type), tuple(snaps))
