"""Router primitives, PRoPHET predictability tables and the native routers.

Every primitive takes ``(world, host)`` and acts through
:meth:`World.start_transfer`, so each call starts at most one transfer.
Predictability tables are aged lazily before every read; because aging
multiplies by ``gamma`` once per elapsed time unit, aging early or late
gives bit-identical tables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .netsim import Connection, ContactTrace, EventLog, Host, ProphetParams, ScenarioSpec, World, prepare_contacts

__all__ = [
    "RouterKind",
    "RouterState",
    "ProphetParams",
    "is_transferring",
    "can_start_transfer",
    "exchange_deliverable_messages",
    "try_all_messages_to_all_connections",
    "try_other_messages",
    "super_update",
    "prophet_age",
    "prophet_on_contact",
    "pred_for",
    "native_epidemic_update",
    "native_prophet_update",
    "run_simulation",
]


class RouterKind(Enum):
    EPIDEMIC = "Epidemic"
    PROPHET = "Prophet"
    EVOLVED_EPIDEMIC = "EvolvedEpidemic"
    EVOLVED_PROPHET = "EvolvedProphet"

    @property
    def uses_predictability(self) -> bool:
        return self in (RouterKind.PROPHET, RouterKind.EVOLVED_PROPHET)


@dataclass
class RouterState:
    kind: RouterKind
    params: ProphetParams = ProphetParams()
    preds: dict[int, float] = field(default_factory=dict)
    last_age_update: float = 0.0


# ---------------------------------------------------------------- PRoPHET math

def prophet_age(state: RouterState, now: float) -> None:
    """Multiply every predictability by gamma once per whole elapsed time unit."""
    unit = state.params.seconds_in_time_unit
    if now < state.last_age_update:
        raise ValueError("aging time moved backwards")
    k = math.floor(round((now - state.last_age_update) / unit, 9))
    if k <= 0:
        return
    state.last_age_update += k * unit
    gamma = state.params.gamma
    preds = state.preds
    for c in preds:
        p = preds[c]
        for _ in range(k):
            p *= gamma
        preds[c] = p


def pred_for(state: RouterState, dest: int, now: float) -> float:
    prophet_age(state, now)
    return state.preds.get(dest, 0.0)


def prophet_on_contact(a: RouterState, a_id: int, b: RouterState, b_id: int, now: float) -> None:
    """Direct then transitive update of ``a``'s table after meeting ``b``."""
    prophet_age(a, now)
    prophet_age(b, now)
    prm = a.params
    old = a.preds.get(b_id, 0.0)
    p_ab = old + (1.0 - old) * prm.p_init
    a.preds[b_id] = p_ab
    for c, p_bc in b.preds.items():
        if c == a_id:
            continue
        old = a.preds.get(c, 0.0)
        a.preds[c] = old + (1.0 - old) * p_ab * p_bc * prm.beta


def _on_connection_up(world: World, conn: Connection) -> None:
    ra, rb = conn.a.router, conn.b.router
    if ra.kind.uses_predictability and rb.kind.uses_predictability:
        prophet_on_contact(ra, conn.a.id, rb, conn.b.id, world.now)
        prophet_on_contact(rb, conn.b.id, ra, conn.a.id, world.now)


def _next_age_tick(world: World) -> Callable[[Host], int]:
    dt = world.dt

    def next_tick(host: Host) -> int:
        st = host.router
        unit = st.params.seconds_in_time_unit
        done = math.floor(round((world.now - st.last_age_update) / unit, 9))
        return math.ceil(round((st.last_age_update + (done + 1) * unit) / dt, 6))

    return next_tick


# ------------------------------------------------------------------ primitives

def is_transferring(world: World, host: Host) -> bool:
    """Sending, or any of the host's connections carries a transfer."""
    if host.sending is not None:
        return True
    for conn in host.connections:
        if conn.transfer is not None:
            return True
    return False


def can_start_transfer(world: World, host: Host) -> bool:
    if not host.buffer.entries:
        return False
    for conn in host.connections:
        if conn.transfer is None:
            return True
    return False


def _peer_offer_deliverable(world: World, peer: Host, conn: Connection, target: Host) -> bool:
    if is_transferring(world, peer):
        return False
    tid = target.id
    for msg, _ in list(peer.buffer.entries.values()):
        if msg.destination == tid and world.start_transfer(conn, peer, msg):
            return True
    return False


def exchange_deliverable_messages(world: World, host: Host) -> bool:
    """Send a buffered message to a neighbour that is its destination; failing
    that, let each idle neighbour send one message destined to ``host``."""
    conns = host.connections
    if not conns:
        return False
    for msg, _ in list(host.buffer.entries.values()):
        for conn in conns:
            if conn.other(host).id == msg.destination and world.start_transfer(conn, host, msg):
                return True
    for conn in list(conns):
        if _peer_offer_deliverable(world, conn.other(host), conn, host):
            return True
    return False


def try_all_messages_to_all_connections(world: World, host: Host) -> bool:
    """Offer every buffered message (oldest first) on every connection in
    creation order; stop at the first transfer that starts."""
    if host.sending is not None:
        return False
    msgs = [m for m, _ in host.buffer.entries.values()]
    for conn in host.connections:
        if conn.transfer is not None:
            continue
        for msg in msgs:
            if world.start_transfer(conn, host, msg):
                return True
    return False


def try_other_messages(world: World, host: Host) -> bool:
    """Forward a message to a neighbour with a strictly higher predictability
    for its destination; highest peer predictability first."""
    st = host.router
    if host.sending is not None or not st.kind.uses_predictability or not host.connections:
        return False
    now = world.now
    cands = []
    for ci, conn in enumerate(host.connections):
        peer = conn.other(host)
        pst = peer.router
        if not pst.kind.uses_predictability:
            continue
        for mi, (msg, _) in enumerate(host.buffer.entries.values()):
            if msg.id in peer.buffer.entries:
                continue
            p_peer = pred_for(pst, msg.destination, now)
            if p_peer > pred_for(st, msg.destination, now):
                cands.append((-p_peer, mi, ci, msg, conn))
    cands.sort(key=lambda c: c[:3])
    for _, _, _, msg, conn in cands:
        if world.start_transfer(conn, host, msg):
            return True
    return False


def super_update(world: World, host: Host) -> None:
    """Drop the host's expired messages and age its predictabilities."""
    world.drop_expired(host)
    st = host.router
    if st is not None and st.kind.uses_predictability:
        prophet_age(st, world.now)


# -------------------------------------------------------------- native routers

def native_epidemic_update(world: World, host: Host) -> None:
    super_update(world, host)
    if is_transferring(world, host) or not can_start_transfer(world, host):
        return
    if exchange_deliverable_messages(world, host):
        return
    try_all_messages_to_all_connections(world, host)


def native_prophet_update(world: World, host: Host) -> None:
    super_update(world, host)
    if not can_start_transfer(world, host) or is_transferring(world, host):
        return
    if exchange_deliverable_messages(world, host):
        return
    try_other_messages(world, host)


def build_world(spec: ScenarioSpec, update: Callable[[World, Host], None], kind: RouterKind,
                seed: int | None = None, contacts: ContactTrace | None = None) -> World:
    """Assemble a world whose hosts all run ``update`` with ``kind`` state."""
    seed = spec.seed if seed is None else seed
    if contacts is None:
        contacts = prepare_contacts(spec, seed)
    world = World(spec, contacts, update, lambda h: RouterState(kind, spec.prophet), seed=seed)
    if kind.uses_predictability:
        world.on_connection_up = _on_connection_up
        world.next_age_tick = _next_age_tick(world)
    return world


def run_simulation(spec: ScenarioSpec, router: str | RouterKind = "epidemic",
                   update: Callable[[World, Host], None] | None = None, seed: int | None = None,
                   contacts: ContactTrace | None = None, skip_idle: bool = True) -> EventLog:
    """Simulate ``spec`` with a native router (``"epidemic"``/``"prophet"``)
    or with a custom ``update`` function and router ``kind``."""
    if isinstance(router, str):
        kind = {"epidemic": RouterKind.EPIDEMIC, "prophet": RouterKind.PROPHET}[router.lower()]
    else:
        kind = router
    if update is None:
        if kind is RouterKind.EPIDEMIC:
            update = native_epidemic_update
        elif kind is RouterKind.PROPHET:
            update = native_prophet_update
        else:
            raise ValueError(f"no native update for {kind}")
    world = build_world(spec, update, kind, seed, contacts)
    return world.run(skip_idle=skip_idle)
