from collections import Counter, OrderedDict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import advance_to, scripted_world, tiny_spec
from evodtn import gp
from evodtn.netsim import EventConfig, Message, compute_contacts, prepare_contacts
from evodtn.routing import RouterKind, native_epidemic_update, run_simulation
from evodtn.netsim import RadioInterface


def kinds(world):
    return [e[1] for e in world.log.events]


def test_static_pair_in_range_connects_on_first_tick():
    knots = [(np.array([-1.0, 100.0]), np.array([0.0, 0.0]), np.array([0.0, 0.0])),
             (np.array([-1.0, 100.0]), np.array([5.0, 5.0]), np.array([0.0, 0.0])),
             (np.array([-1.0, 100.0]), np.array([50.0, 50.0]), np.array([0.0, 0.0]))]
    trace = compute_contacts(knots, [("bt",)] * 3, {"bt": RadioInterface("bt", 1.0, 10.0)}, 50, 0.1)
    assert trace.events == [(1, True, 0, 0, 1)]


def test_contacts_follow_distance_changes():
    # host 1 walks past host 0 at 1 m/s, within 10 m between t=40 and t=60
    t = np.array([0.0, 100.0])
    knots = [(t, np.array([50.0, 50.0]), np.array([0.0, 0.0])),
             (t, np.array([0.0, 100.0]), np.array([0.0, 0.0]))]
    trace = compute_contacts(knots, [("bt",)] * 2, {"bt": RadioInterface("bt", 1.0, 10.0)}, 900, 0.1,
                             chunk=128)
    assert trace.events == [(400, True, 0, 0, 1), (601, False, 0, 0, 1)]


def test_one_megabyte_takes_forty_ticks():
    spec = tiny_spec(2)
    w = scripted_world(spec, [(1, True, 0, 1)], native_epidemic_update)
    w.create_message(0, 1, 1_000_000)
    advance_to(w, 60)
    ev = [(t, k) for t, k, *_ in w.log.events]
    assert ev == [(0.0, "created"), (0.1, "started"), (4.1, "relayed"), (4.1, "delivered")]


def test_link_loss_aborts_transfer():
    spec = tiny_spec(3)
    w = scripted_world(spec, [(1, True, 0, 2), (20, False, 0, 2)], native_epidemic_update)
    w.create_message(0, 1, 1_000_000)
    advance_to(w, 100)
    assert kinds(w) == ["created", "started", "aborted"]
    assert "M1" not in w.hosts[2].buffer
    assert w.hosts[0].sending is None


def test_later_copies_at_destination_are_not_delivered_again():
    spec = tiny_spec(3)
    w = scripted_world(spec, [], native_epidemic_update)
    w.create_message(0, 2, 500_000)
    w.enqueue(w.hosts[1], w.hosts[0].buffer.entries["M1"][0])
    w._links.clear()
    trace = scripted_world(spec, [(1, True, 0, 2), (1, True, 1, 2)]).contacts
    w.contacts = trace
    advance_to(w, 50)
    c = Counter(kinds(w))
    # both copies travel in parallel on separate links; only the first counts
    assert c["relayed"] == 2 and c["delivered"] == 1
    # once delivered, the destination refuses further copies
    w.enqueue(w.hosts[0], w.hosts[1].buffer.entries["M1"][0])
    assert not w.start_transfer(w.hosts[0].connections[0], w.hosts[0], w.hosts[0].buffer.entries["M1"][0])


def test_ttl_expiry_drops_after_five_hours():
    spec = tiny_spec(2, ttl=18000.0, end_time=18010.0)
    w = scripted_world(spec, [])
    advance_to(w, 1)
    w.create_message(0, 1, 1000)
    w.run()
    drops = [(t, k) for t, k, *_ in w.log.events if k == "dropped"]
    assert drops == [(18000.1, "dropped")]


def test_sender_handles_one_transfer_at_a_time():
    spec = tiny_spec(3)
    w = scripted_world(spec, [(1, True, 0, 1), (1, True, 0, 2)], native_epidemic_update)
    w.create_message(0, 1, 600_000)
    w.create_message(0, 2, 600_000)
    advance_to(w, 2)
    assert Counter(kinds(w))["started"] == 1


def test_send_while_receiving_can_be_forbidden():
    def run(flag):
        spec = tiny_spec(3, allow_send_while_receiving=flag)
        w = scripted_world(spec, [(1, True, 0, 1), (1, True, 1, 2)])
        w.create_message(0, 2, 600_000)
        w.create_message(1, 0, 600_000)
        advance_to(w, 1)
        ok1 = w.start_transfer(w.hosts[0].connections[0], w.hosts[0], w.hosts[0].buffer.messages()[0])
        conn12 = [c for c in w.hosts[1].connections if c.other(w.hosts[1]).id == 2][0]
        ok2 = w.start_transfer(conn12, w.hosts[1], w.hosts[1].buffer.messages()[0])
        return ok1, ok2
    assert run(True) == (True, True)
    assert run(False) == (True, False)


# --------------------------------------------------------------- buffers

def test_buffer_fills_without_eviction():
    w = scripted_world(tiny_spec(2, buffer=5_000_000), [])
    w.create_message(0, 1, 1_000_000)
    assert kinds(w) == ["created"]
    assert w.hosts[0].buffer.used == 1_000_000


def test_full_buffer_evicts_exactly_the_oldest():
    w = scripted_world(tiny_spec(2, buffer=5_000_000), [])
    for _ in range(5):
        w.create_message(0, 1, 1_000_000)
    w.create_message(0, 1, 1_000_000)
    assert kinds(w)[-2:] == ["created", "dropped"]
    assert w.log.events[-1][2] == "M1"
    assert list(w.hosts[0].buffer.entries) == ["M2", "M3", "M4", "M5", "M6"]


def test_oversized_and_duplicate_messages_rejected():
    w = scripted_world(tiny_spec(2, buffer=1000), [])
    h = w.hosts[1]
    assert not w.enqueue(h, Message("X", 0, 1, 2000, 0.0, 10.0, (0,)))
    m = Message("Y", 0, 1, 500, 0.0, 10.0, (0,))
    assert w.enqueue(h, m)
    assert not w.enqueue(h, m)
    assert len(w.log) == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(1000, 5000), st.lists(st.tuples(st.integers(0, 11), st.integers(1, 2500)), max_size=60))
def test_buffer_matches_list_replay(capacity, ops):
    w = scripted_world(tiny_spec(2, buffer=capacity), [])
    h = w.hosts[1]
    model: OrderedDict[str, int] = OrderedDict()
    for i, (mid, size) in enumerate(ops):
        msg = Message(f"m{mid}", 0, 1, size, 0.0, 1e9, (0,))
        w.enqueue(h, msg)
        if msg.id not in model and size <= capacity:
            while sum(model.values()) + size > capacity:
                model.popitem(last=False)
            model[msg.id] = size
        assert list(h.buffer.entries) == list(model)
        assert h.buffer.used == sum(model.values()) <= capacity


# ----------------------------------------------------------- generation

def test_message_generation_bounds():
    ev = EventConfig((25.0, 35.0), (500_000, 1_000_000), (0, 3))
    spec = tiny_spec(3, end_time=43200.0, events=ev)
    w = scripted_world(spec, [])
    log = w.run()
    created = [e for e in log.events if e[1] == "created"]
    assert 43200 / 35 <= len(created) <= 43200 / 25
    for _, _, _, src, dst in created:
        assert src != dst and 0 <= src < 3 and 0 <= dst < 3
    sizes = [m.size for h in w.hosts for m in h.buffer.messages()]
    assert all(500_000 <= s <= 1_000_000 for s in sizes)
    gaps = np.diff([e[0] for e in created])
    assert gaps.min() >= 25 - 0.1 and gaps.max() <= 35 + 0.1


def test_generated_ids_are_sequential(short_spec):
    log = run_simulation(short_spec, "epidemic")
    ids = [e[2] for e in log.events if e[1] == "created"]
    assert ids == [f"M{i}" for i in range(1, len(ids) + 1)]


# ---------------------------------------------------- whole-run properties

@pytest.mark.parametrize("router", ["epidemic", "prophet"])
def test_idle_skipping_matches_full_stepping(short_spec, router):
    c = prepare_contacts(short_spec)
    fast = run_simulation(short_spec, router, contacts=c)
    full = run_simulation(short_spec, router, contacts=c, skip_idle=False)
    assert fast.events == full.events
    assert fast.buffer_residence == full.buffer_residence


def test_idle_skipping_matches_for_evolved_tree(short_spec):
    tree = gp.parse_tree("sequence(if(notEqual(isTransferring, canStartTransfer), tryOtherMessages), "
                         "sequence(tryAllMessagesToAllConnections, return))")
    c = prepare_contacts(short_spec)
    a = run_simulation(short_spec, RouterKind.EVOLVED_PROPHET, update=gp.compile_tree(tree), contacts=c)
    b = run_simulation(short_spec, RouterKind.EVOLVED_PROPHET, update=gp.compile_tree(tree), contacts=c,
                       skip_idle=False)
    assert a.events == b.events


def test_same_seed_same_log(short_spec):
    assert run_simulation(short_spec, "epidemic").to_csv() == run_simulation(short_spec, "epidemic").to_csv()


def test_different_seed_different_log(short_spec):
    assert run_simulation(short_spec, "epidemic", seed=1).events != run_simulation(short_spec, "epidemic", seed=2).events


def test_status_invariants_and_capacity(short_spec):
    from evodtn.routing import build_world
    w = build_world(short_spec, native_epidemic_update, RouterKind.EPIDEMIC)
    while w.step():
        if w.tick % 50 == 0:
            for h in w.hosts:
                assert h.buffer.used <= h.buffer.capacity
                assert h.buffer.used == sum(m.size for m in h.buffer.messages())
    log = w.log
    log.in_flight_at_end = sum(1 for h in w.hosts if h.sending is not None)
    c = Counter(e[1] for e in log.events)
    assert c["started"] == c["relayed"] + c["aborted"] + log.in_flight_at_end
    assert c["delivered"] <= c["relayed"] and c["delivered"] <= c["created"]
    assert c["removed"] == 0
    delivered = [e[2] for e in log.events if e[1] == "delivered"]
    assert len(delivered) == len(set(delivered))
    times = [e[0] for e in log.events]
    assert times == sorted(times)


def test_every_delivery_has_matching_start_and_relay(short_spec):
    log = run_simulation(short_spec, "prophet")
    started, relayed = set(), set()
    for t, k, m, a, b in log.events:
        if k == "started":
            started.add((m, a, b))
        elif k == "relayed":
            assert (m, a, b) in started
            relayed.add((m, a, b))
        elif k == "delivered":
            assert (m, a, b) in relayed
