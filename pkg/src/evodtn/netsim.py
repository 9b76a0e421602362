"""Time-stepped DTN engine.

A run has two phases. Mobility does not depend on routing, so host
trajectories and the resulting connection up/down schedule are computed
once per (scenario, seed) as a :class:`ContactTrace`. The routing phase then
replays that schedule tick by tick, moving messages between buffers.

Within a tick the order is: message creation, connection changes (aborting
transfers on links that went down), transfer completion, router updates in
ascending host order, TTL expiry.

Ticks in which nothing can change are skipped: when a tick produced no
event and altered no router state, the next tick would repeat it exactly,
so the engine jumps to the next scheduled happening (connection change,
message creation, transfer completion, TTL expiry or predictability aging
of a connected host). ``skip_idle=False`` visits every tick and runs every
host's router; both modes produce identical logs.
"""
from __future__ import annotations

import csv
import heapq
import io
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .mobility import GroupMobilityConfig, init_position, trajectory
from .worldmap import MapGraph

__all__ = [
    "RadioInterface",
    "HostGroup",
    "EventConfig",
    "ProphetParams",
    "ScenarioSpec",
    "Message",
    "Buffer",
    "Connection",
    "Transfer",
    "Host",
    "EventLog",
    "ContactTrace",
    "World",
    "compute_trajectories",
    "compute_contacts",
    "prepare_contacts",
    "EVENT_KINDS",
]

EVENT_KINDS = ("created", "started", "relayed", "aborted", "dropped", "removed", "delivered")


@dataclass(frozen=True)
class RadioInterface:
    name: str
    transmit_speed: float
    """bytes per second"""
    range: float
    """metres"""

    def __post_init__(self):
        if not (self.transmit_speed > 0 and self.range > 0):
            raise ValueError(f"interface {self.name}: speed and range must be positive")


@dataclass(frozen=True)
class HostGroup:
    group_id: str
    n_hosts: int
    mobility: GroupMobilityConfig
    interfaces: tuple[str, ...]
    buffer_size: int
    msg_ttl: float
    """seconds"""
    layer_mask: int | None = None


@dataclass(frozen=True)
class EventConfig:
    interval: tuple[float, float]
    size: tuple[int, int]
    hosts: tuple[int, int]
    """half-open address range [lo, hi)"""
    prefix: str = "M"


@dataclass(frozen=True)
class ProphetParams:
    p_init: float = 0.75
    beta: float = 0.25
    gamma: float = 0.98
    seconds_in_time_unit: float = 30.0

    def __post_init__(self):
        if not (0 <= self.p_init <= 1 and 0 <= self.beta <= 1 and 0 < self.gamma <= 1
                and self.seconds_in_time_unit > 0):
            raise ValueError(f"invalid PRoPHET parameters {self}")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    graph: MapGraph
    groups: tuple[HostGroup, ...]
    interfaces: dict[str, RadioInterface]
    events: EventConfig | None
    end_time: float = 43200.0
    warmup: float = 1000.0
    update_interval: float = 0.1
    seed: int = 1
    prophet: ProphetParams = ProphetParams()
    randomize_update_order: bool = False
    allow_send_while_receiving: bool = True

    @property
    def n_hosts(self) -> int:
        return sum(g.n_hosts for g in self.groups)

    @property
    def n_ticks(self) -> int:
        return int(round(self.end_time / self.update_interval))

    def host_groups(self) -> list[int]:
        out = []
        for gi, grp in enumerate(self.groups):
            out.extend([gi] * grp.n_hosts)
        return out


@dataclass(frozen=True)
class Message:
    id: str
    source: int
    destination: int
    size: int
    t_creation: float
    ttl: float
    hop_path: tuple[int, ...]

    @property
    def hop_count(self) -> int:
        return len(self.hop_path) - 1


class Buffer:
    """Drop-oldest message store; iteration order is receive order."""

    __slots__ = ("capacity", "entries", "used")

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: OrderedDict[str, tuple[Message, float]] = OrderedDict()
        self.used = 0

    def __len__(self):
        return len(self.entries)

    def __contains__(self, msg_id):
        return msg_id in self.entries

    def messages(self) -> list[Message]:
        return [m for m, _ in self.entries.values()]


class Transfer:
    __slots__ = ("msg", "sender", "receiver", "conn", "done_tick", "seq")

    def __init__(self, msg, sender, receiver, conn, done_tick, seq):
        self.msg = msg
        self.sender = sender
        self.receiver = receiver
        self.conn = conn
        self.done_tick = done_tick
        self.seq = seq


class Connection:
    __slots__ = ("a", "b", "iface", "transfer", "alive")

    def __init__(self, a: "Host", b: "Host", iface: RadioInterface):
        self.a = a
        self.b = b
        self.iface = iface
        self.transfer: Transfer | None = None
        self.alive = True

    def other(self, host: "Host") -> "Host":
        return self.b if host is self.a else self.a


class Host:
    __slots__ = ("id", "group", "interfaces", "buffer", "router", "connections", "sending",
                 "receiving", "delivered", "ttl", "expiry")

    def __init__(self, hid: int, group: int, interfaces: tuple[str, ...], capacity: int, ttl: float):
        self.id = hid
        self.group = group
        self.interfaces = interfaces
        self.buffer = Buffer(capacity)
        self.router = None
        self.connections: list[Connection] = []
        self.sending: Transfer | None = None
        self.receiving = 0
        self.delivered: set[str] = set()
        self.ttl = ttl
        self.expiry: list[tuple[int, str]] = []


@dataclass
class EventLog:
    """Append-only event record plus the per-copy data the report needs.

    ``hop_counts`` maps each delivered message id to the hop count of the
    delivered copy; ``buffer_residence`` holds ``T_deletion - T_receive`` for
    every buffer deletion, in deletion order.
    """

    events: list[tuple[float, str, str, int, int]] = field(default_factory=list)
    creation_times: dict[str, float] = field(default_factory=dict)
    delivery_times: dict[str, float] = field(default_factory=dict)
    hop_counts: dict[str, int] = field(default_factory=dict)
    buffer_residence: list[float] = field(default_factory=list)
    in_flight_at_end: int = 0

    def __len__(self):
        return len(self.events)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["time", "kind", "msg_id", "from", "to"])
        for t, kind, mid, a, b in self.events:
            w.writerow([repr(t), kind, mid, a, b])
        return out.getvalue()


@dataclass
class ContactTrace:
    """Connection schedule: ``events[i] = (tick, up, iface_index, a, b)`` sorted
    by tick, then downs before ups, then interface, then host pair."""

    n_hosts: int
    n_ticks: int
    dt: float
    iface_names: tuple[str, ...]
    events: list[tuple[int, bool, int, int, int]]


def compute_trajectories(spec: ScenarioSpec, seed: int | None = None) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Knots of every host's path from ``-warmup`` to ``end_time``.

    Each host draws from its own generator seeded by (scenario seed, host id).
    """
    seed = spec.seed if seed is None else seed
    out = []
    hid = 0
    for grp in spec.groups:
        graph = spec.graph
        if grp.layer_mask is not None:
            graph, _ = spec.graph.subgraph(grp.layer_mask)
        for _ in range(grp.n_hosts):
            rng = np.random.default_rng([seed, 1, hid])
            st = init_position(graph, grp.mobility, rng, t0=-spec.warmup)
            out.append(trajectory(st, graph, grp.mobility, spec.end_time + spec.update_interval))
            hid += 1
    return out


def compute_contacts(knots: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
                     host_ifaces: Sequence[Sequence[str]],
                     interfaces: dict[str, RadioInterface],
                     n_ticks: int, dt: float, chunk: int = 2048) -> ContactTrace:
    """Sample positions at ticks ``1..n_ticks`` and list connection changes.

    A pair is connected on an interface when both hosts carry it and their
    distance is within its range. Pairs are pruned per chunk of ticks with
    bounding boxes before the exact distance test.
    """
    n = len(knots)
    names = tuple(interfaces)
    events: list[tuple[int, bool, int, int, int]] = []
    iu, ju = np.triu_indices(n, 1)
    pair_sets = []
    for name in names:
        has = np.array([name in h for h in host_ifaces], dtype=bool)
        mask = has[iu] & has[ju]
        pair_sets.append((np.flatnonzero(mask), interfaces[name].range ** 2))
    state = [np.zeros(len(iu), dtype=bool) for _ in names]
    for start in range(1, n_ticks + 1, chunk):
        ticks = np.arange(start, min(start + chunk, n_ticks + 1))
        times = np.round(ticks * dt, 9)
        X = np.empty((len(ticks), n))
        Y = np.empty((len(ticks), n))
        for h, (kt, kx, ky) in enumerate(knots):
            X[:, h] = np.interp(times, kt, kx)
            Y[:, h] = np.interp(times, kt, ky)
        xmin, xmax = X.min(axis=0), X.max(axis=0)
        ymin, ymax = Y.min(axis=0), Y.max(axis=0)
        for fi, (pairs, r2) in enumerate(pair_sets):
            if pairs.size == 0:
                continue
            a, b = iu[pairs], ju[pairs]
            gx = np.maximum(0.0, np.maximum(xmin[a] - xmax[b], xmin[b] - xmax[a]))
            gy = np.maximum(0.0, np.maximum(ymin[a] - ymax[b], ymin[b] - ymax[a]))
            near = gx * gx + gy * gy <= r2
            prev = state[fi]
            # pairs that cannot meet in this chunk but were connected go down at its first tick
            far = pairs[~near & prev[pairs]]
            for p in far.tolist():
                events.append((int(ticks[0]), False, fi, int(iu[p]), int(ju[p])))
            prev[far] = False
            cand = pairs[near]
            if cand.size == 0:
                continue
            ca, cb = iu[cand], ju[cand]
            dx = X[:, ca] - X[:, cb]
            dy = Y[:, ca] - Y[:, cb]
            within = dx * dx + dy * dy <= r2
            before = np.vstack([prev[cand][None, :], within[:-1]])
            rows, cols = np.nonzero(within != before)
            for r, c in zip(rows.tolist(), cols.tolist()):
                p = cand[c]
                events.append((int(ticks[r]), bool(within[r, c]), fi, int(iu[p]), int(ju[p])))
            prev[cand] = within[-1]
    events.sort(key=lambda e: (e[0], e[1], e[2], e[3], e[4]))
    return ContactTrace(n, n_ticks, dt, names, events)


def prepare_contacts(spec: ScenarioSpec, seed: int | None = None) -> ContactTrace:
    knots = compute_trajectories(spec, seed)
    ifaces = []
    for grp in spec.groups:
        ifaces.extend([grp.interfaces] * grp.n_hosts)
    return compute_contacts(knots, ifaces, spec.interfaces, spec.n_ticks, spec.update_interval)


UpdateFn = Callable[["World", Host], None]


class World:
    """Routing-phase state of one simulation.

    ``update`` is the per-host router update (a native router or an
    interpreted tree); ``make_router`` builds each host's router state.
    """

    def __init__(self, spec: ScenarioSpec, contacts: ContactTrace, update: UpdateFn,
                 make_router: Callable[[Host], object] | None = None, seed: int | None = None):
        self.spec = spec
        self.contacts = contacts
        self.update = update
        self.dt = spec.update_interval
        self.n_ticks = contacts.n_ticks
        self.seed = spec.seed if seed is None else seed
        self.tick = 0
        self.now = 0.0
        self.log = EventLog()
        self.dirty = False
        self.hosts: list[Host] = []
        groups = spec.host_groups()
        if len(groups) != contacts.n_hosts:
            raise ValueError("contact trace host count does not match scenario")
        for hid, gi in enumerate(groups):
            grp = spec.groups[gi]
            h = Host(hid, gi, grp.interfaces, grp.buffer_size, grp.msg_ttl)
            self.hosts.append(h)
        for h in self.hosts:
            h.router = make_router(h) if make_router else None
        self._iface = [spec.interfaces[n] for n in contacts.iface_names]
        self._bpt = []
        for iface in self._iface:
            bpt = iface.transmit_speed * self.dt
            if abs(bpt - round(bpt)) < 1e-6:
                bpt = int(round(bpt))
            self._bpt.append(bpt)
        self._links: dict[tuple[int, int, int], Connection] = {}
        self._cptr = 0
        self._transfers: list[tuple[int, int, Transfer]] = []
        self._tseq = 0
        self._ttl_heap: list[tuple[int, int, str]] = []
        self._ttl_ticks: dict[float, int] = {}
        self.n_connections = 0
        self.event_rng = np.random.default_rng([self.seed, 2])
        self.order_rng = np.random.default_rng([self.seed, 3])
        self._msg_counter = 0
        self._next_creation = math.inf
        if spec.events is not None:
            self._next_creation = self._draw_interval()
        self.next_age_tick: Callable[[Host], int] | None = None

    # ------------------------------------------------------------------ events
    def emit(self, kind: str, msg_id: str, a: int, b: int):
        self.log.events.append((self.now, kind, msg_id, a, b))
        self.dirty = True

    def _draw_interval(self) -> float:
        lo, hi = self.spec.events.interval
        return float(self.event_rng.uniform(lo, hi)) if hi > lo else float(lo)

    def _creation_tick(self) -> int:
        if self._next_creation == math.inf:
            return self.n_ticks + 1
        return max(1, math.ceil(round(self._next_creation / self.dt, 6)))

    def create_message(self, src: int, dst: int, size: int, msg_id: str | None = None) -> Message:
        if src == dst:
            raise ValueError("source and destination must differ")
        if size <= 0:
            raise ValueError("message size must be positive")
        self._msg_counter += 1
        if msg_id is None:
            prefix = self.spec.events.prefix if self.spec.events else "M"
            msg_id = f"{prefix}{self._msg_counter}"
        host = self.hosts[src]
        msg = Message(msg_id, src, dst, int(size), self.now, host.ttl, (src,))
        self.log.creation_times[msg_id] = self.now
        self.emit("created", msg_id, src, dst)
        self.enqueue(host, msg)
        return msg

    def _generate(self):
        ev = self.spec.events
        rng = self.event_rng
        size = int(rng.integers(ev.size[0], ev.size[1] + 1))
        lo, hi = ev.hosts
        src = int(rng.integers(lo, hi))
        dst = int(rng.integers(lo, hi - 1))
        if dst >= src:
            dst += 1
        self.create_message(src, dst, size)
        self._next_creation += self._draw_interval()

    # ------------------------------------------------------------------ buffers
    def _ttl_tick(self, msg: Message) -> int:
        t = msg.t_creation + msg.ttl
        tk = self._ttl_ticks.get(t)
        if tk is None:
            tk = self._ttl_ticks[t] = math.ceil(round(t / self.dt, 6))
        return tk

    def enqueue(self, host: Host, msg: Message) -> bool:
        """Store ``msg`` at ``host``, evicting oldest entries to make room.

        Duplicates and messages larger than the whole buffer are rejected
        without an event.
        """
        buf = host.buffer
        if msg.id in buf.entries or msg.size > buf.capacity:
            return False
        while buf.capacity - buf.used < msg.size:
            old_id = next(iter(buf.entries))
            self._delete(host, old_id, "dropped")
        buf.entries[msg.id] = (msg, self.now)
        buf.used += msg.size
        tk = self._ttl_tick(msg)
        heapq.heappush(self._ttl_heap, (tk, host.id, msg.id))
        heapq.heappush(host.expiry, (tk, msg.id))
        return True

    def _delete(self, host: Host, msg_id: str, kind: str):
        msg, t_recv = host.buffer.entries.pop(msg_id)
        host.buffer.used -= msg.size
        self.log.buffer_residence.append(self.now - t_recv)
        self.emit(kind, msg_id, host.id, host.id)

    def drop_expired(self, host: Host):
        """Drop every entry of ``host`` whose TTL has run out, in buffer order."""
        tick = self.tick
        heap = host.expiry
        entries = host.buffer.entries
        while heap and heap[0][1] not in entries:
            heapq.heappop(heap)
        if not heap or heap[0][0] > tick:
            return
        expired = [mid for mid, (m, _) in host.buffer.entries.items() if self._ttl_tick(m) <= tick]
        for mid in expired:
            self._delete(host, mid, "dropped")

    def _ttl_due(self) -> int:
        heap = self._ttl_heap
        while heap:
            tk, hid, mid = heap[0]
            entry = self.hosts[hid].buffer.entries.get(mid)
            if entry is not None and self._ttl_tick(entry[0]) == tk:
                return tk
            heapq.heappop(heap)
        return self.n_ticks + 1

    # ---------------------------------------------------------------- transfers
    def start_transfer(self, conn: Connection, sender: Host, msg: Message) -> bool:
        """Begin sending ``msg`` over ``conn``; False if the link, the sender or
        the receiver cannot take it."""
        if conn.transfer is not None or sender.sending is not None:
            return False
        receiver = conn.other(sender)
        if msg.id in receiver.buffer.entries or msg.id in receiver.delivered:
            return False
        if msg.size > receiver.buffer.capacity and msg.destination != receiver.id:
            return False
        if not self.spec.allow_send_while_receiving and (sender.receiving or receiver.sending is not None):
            return False
        fi = self._iface.index(conn.iface) if len(self._iface) > 1 else 0
        bpt = self._bpt[fi]
        n = -(-msg.size // bpt) if isinstance(bpt, int) else math.ceil(msg.size / bpt)
        self._tseq += 1
        tr = Transfer(msg, sender, receiver, conn, self.tick + max(1, n), self._tseq)
        conn.transfer = tr
        sender.sending = tr
        receiver.receiving += 1
        heapq.heappush(self._transfers, (tr.done_tick, tr.seq, tr))
        self.emit("started", msg.id, sender.id, receiver.id)
        return True

    def _finish(self, tr: Transfer):
        tr.conn.transfer = None
        tr.sender.sending = None
        tr.receiver.receiving -= 1

    def _complete(self, tr: Transfer):
        self._finish(tr)
        msg, rcv = tr.msg, tr.receiver
        self.emit("relayed", msg.id, tr.sender.id, rcv.id)
        copy = Message(msg.id, msg.source, msg.destination, msg.size, msg.t_creation, msg.ttl,
                       msg.hop_path + (rcv.id,))
        if msg.destination == rcv.id:
            if msg.id not in rcv.delivered:
                rcv.delivered.add(msg.id)
                self.log.delivery_times[msg.id] = self.now
                self.log.hop_counts[msg.id] = copy.hop_count
                self.emit("delivered", msg.id, tr.sender.id, rcv.id)
        else:
            self.enqueue(rcv, copy)

    def _abort(self, tr: Transfer):
        self._finish(tr)
        self.emit("aborted", tr.msg.id, tr.sender.id, tr.receiver.id)

    # --------------------------------------------------------------- contacts
    def _apply_contacts(self, on_up: Callable[["World", Connection], None] | None):
        evs = self.contacts.events
        i = self._cptr
        tick = self.tick
        while i < len(evs) and evs[i][0] == tick:
            _, up, fi, a, b = evs[i]
            i += 1
            key = (fi, a, b)
            if up:
                ha, hb = self.hosts[a], self.hosts[b]
                conn = Connection(ha, hb, self._iface[fi])
                self._links[key] = conn
                ha.connections.append(conn)
                hb.connections.append(conn)
                self.n_connections += 1
                self.dirty = True
                if on_up is not None:
                    on_up(self, conn)
            else:
                conn = self._links.pop(key)
                conn.alive = False
                if conn.transfer is not None:
                    self._abort(conn.transfer)
                conn.a.connections.remove(conn)
                conn.b.connections.remove(conn)
                self.n_connections -= 1
                self.dirty = True
        self._cptr = i

    def _next_contact_tick(self) -> int:
        evs = self.contacts.events
        return evs[self._cptr][0] if self._cptr < len(evs) else self.n_ticks + 1

    # -------------------------------------------------------------------- tick
    on_connection_up: Callable[["World", Connection], None] | None = None

    def _process(self, all_hosts: bool):
        self.dirty = False
        tick = self.tick
        while self._creation_tick() == tick:
            self._generate()
        self._apply_contacts(self.on_connection_up)
        tr_heap = self._transfers
        while tr_heap and tr_heap[0][0] <= tick:
            _, _, tr = heapq.heappop(tr_heap)
            if tr.conn.transfer is tr:
                self._complete(tr)
        ttl_due = self._ttl_due() <= tick
        if all_hosts or ttl_due:
            hosts = self.hosts
        else:
            hosts = [h for h in self.hosts if h.connections] if self.n_connections else ()
        if self.spec.randomize_update_order and hosts:
            hosts = [hosts[i] for i in self.order_rng.permutation(len(hosts))]
        update = self.update
        for h in hosts:
            update(self, h)
        if self._ttl_due() <= tick:
            while True:
                due = self._ttl_due()
                if due > tick:
                    break
                self.drop_expired(self.hosts[self._ttl_heap[0][1]])

    def step(self) -> bool:
        """Advance one tick, running every host's router. False once past the end."""
        if self.tick >= self.n_ticks:
            return False
        self.tick += 1
        self.now = round(self.tick * self.dt, 9)
        self._process(all_hosts=True)
        return True

    def _wake_tick(self) -> int:
        nxt = min(self._next_contact_tick(), self._creation_tick(), self._ttl_due())
        if self._transfers:
            nxt = min(nxt, self._transfers[0][0])
        if self.next_age_tick is not None and self.n_connections:
            for h in self.hosts:
                if h.connections:
                    nxt = min(nxt, self.next_age_tick(h))
        return nxt

    def run(self, skip_idle: bool = True) -> EventLog:
        """Run to the end of the scenario and return the event log."""
        if not skip_idle or self.spec.randomize_update_order:
            while self.step():
                pass
        else:
            while self.tick < self.n_ticks:
                if self.dirty and self.n_connections:
                    nxt = self.tick + 1
                else:
                    nxt = max(self.tick + 1, self._wake_tick())
                if nxt > self.n_ticks:
                    self.tick = self.n_ticks
                    self.now = round(self.tick * self.dt, 9)
                    break
                self.tick = nxt
                self.now = round(nxt * self.dt, 9)
                self._process(all_hosts=False)
        self.log.in_flight_at_end = sum(1 for _, _, tr in self._transfers if tr.conn.transfer is tr)
        return self.log
