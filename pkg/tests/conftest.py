import numpy as np
import pytest

from evodtn.mobility import GroupMobilityConfig
from evodtn.netsim import (ContactTrace, HostGroup, RadioInterface, ScenarioSpec, World,
                           prepare_contacts)
from evodtn.routing import RouterKind, RouterState
from evodtn.settings import build_scenario, bundled_scenario, load_settings
from evodtn.worldmap import generate_grid

BT = RadioInterface("bt", 250e3, 10.0)


def tiny_spec(n_hosts=3, buffer=5_000_000, ttl=18000.0, end_time=100.0, events=None, seed=1,
              allow_send_while_receiving=True):
    """Scenario shell for scripted worlds: hosts never move on their own."""
    g = generate_grid(2, 2, 1000.0)
    mob = GroupMobilityConfig((1.0, 1.0), (0.0, 0.0))
    group = HostGroup("h", n_hosts, mob, ("bt",), buffer, ttl)
    return ScenarioSpec("tiny", g, (group,), {"bt": BT}, events, end_time=end_time, warmup=0.0,
                        seed=seed, allow_send_while_receiving=allow_send_while_receiving)


def scripted_world(spec, contacts, update=lambda w, h: None, kind=RouterKind.EPIDEMIC):
    """World whose connection schedule is ``contacts``: (tick, up, a, b) tuples."""
    events = sorted((t, up, 0, min(a, b), max(a, b)) for t, up, a, b in contacts)
    trace = ContactTrace(spec.n_hosts, spec.n_ticks, spec.update_interval, ("bt",), events)
    world = World(spec, trace, update, lambda h: RouterState(kind, spec.prophet))
    return world


def advance_to(world, tick):
    while world.tick < tick:
        world.step()


@pytest.fixture(scope="session")
def desk_settings():
    return load_settings(bundled_scenario("desk_grid"))


@pytest.fixture(scope="session")
def desk_spec(desk_settings):
    return build_scenario(desk_settings)


@pytest.fixture(scope="session")
def desk_contacts(desk_spec):
    return prepare_contacts(desk_spec)


@pytest.fixture(scope="session")
def short_spec(desk_settings):
    """Desk scenario cut to 20 simulated minutes for quick end-to-end tests."""
    return build_scenario(desk_settings.updated(Scenario__endTime=1200, Group__msgTtl=10))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
