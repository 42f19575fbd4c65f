import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fakes import Probe
from gridloop.kernel.remote import HandshakeTimeout, serve
from gridloop.kernel.world import (
    CycleError,
    Entity,
    EntityId,
    DuplicateName,
    SimulationAborted,
    UnknownAttribute,
    UnknownEntity,
    World,
    WorldError,
)


def two_probes(world=None, **kw):
    world = world or World()
    a = world.register_simulator("a", Probe(**kw))
    b = world.register_simulator("b", Probe(scale=10))
    return world, a.create(1, "Node")[0], b.create(1, "Node", offset=5)[0]


def test_registration_and_ids():
    world, ea, eb = two_probes()
    assert ea.full_id == "a.n0" and eb.full_id == "b.n0"
    assert ea.inputs == ("in",) and ea.outputs == ("value",)
    with pytest.raises(DuplicateName):
        world.register_simulator("a", Probe())


def test_empty_world_steps():
    report = World().step(10)
    assert report.steps == 10 and report.exchanges == 0 and not report.aborted


def test_direct_connection_same_step():
    world, ea, eb = two_probes()
    world.connect(ea, eb, ("value", "in"))
    world.step(5)
    b = world.simulators["b"].backend.sim
    assert [(t, inp["n0"]["in"]["a.n0"]) for t, inp in b.seen] == [(t, t) for t in range(5)]
    assert world.step_order() == ["a", "b"]


@given(st.integers(1, 30), st.integers(-100, 100), st.integers(-5, 5))
def test_time_shifted_value_is_previous_step(steps, initial, scale):
    world = World()
    a = world.register_simulator("a", Probe(scale=scale)).create(1, "Node", offset=3)[0]
    b = world.register_simulator("b", Probe()).create(1, "Node")[0]
    world.connect(a, b, ("value", "in"), time_shifted=True, initial_data={"value": initial})
    world.step(steps)
    got = [inp["n0"]["in"]["a.n0"] for _, inp in world.simulators["b"].backend.sim.seen]
    assert got == [initial] + [scale * (t - 1) + 3 for t in range(1, steps)]


def test_shifted_cycle_allowed_direct_cycle_rejected():
    world, ea, eb = two_probes()
    world.connect(ea, eb, ("value", "in"))
    world.connect(eb, ea, ("value", "in"), time_shifted=True, initial_data={"value": 0})
    with pytest.raises(CycleError):
        world.connect(eb, ea, ("value", "in"))
    # the rejected edge leaves the world usable
    assert world.step(3).steps == 3


def test_three_simulator_cycle_rejected():
    world = World()
    ents = [world.register_simulator(n, Probe()).create(1, "Node")[0] for n in "xyz"]
    world.connect(ents[0], ents[1], ("value", "in"))
    world.connect(ents[1], ents[2], ("value", "in"))
    with pytest.raises(CycleError):
        world.connect(ents[2], ents[0], ("value", "in"))


def test_self_loop_needs_shift():
    world = World()
    sim = world.register_simulator("a", Probe())
    e0, e1 = sim.create(2, "Node")
    with pytest.raises(CycleError):
        world.connect(e0, e1, ("value", "in"))
    world.connect(e0, e1, ("value", "in"), time_shifted=True, initial_data={"value": -1})


def test_wiring_errors():
    world, ea, eb = two_probes()
    with pytest.raises(UnknownAttribute):
        world.connect(ea, eb, ("nope", "in"))
    with pytest.raises(UnknownAttribute):
        world.connect(ea, eb, ("value", "nope"))
    with pytest.raises(WorldError):
        world.connect(ea, eb, ("value", "in"), time_shifted=True)
    stranger = Entity(EntityId("a", "n9"), "Node", ("in",), ("value",))
    with pytest.raises(UnknownEntity):
        world.connect(stranger, eb, ("value", "in"))


def test_one_poll_per_simulator_per_step():
    world, ea, eb = two_probes()
    world.connect(ea, eb, ("value", "in"))
    report = world.step(17)
    assert report.polls == {"a": 17, "b": 17}
    assert world.simulators["a"].backend.sim.polls == 17


def test_crash_aborts_with_partial_report():
    world, ea, eb = two_probes(fail_at=4)
    world.connect(ea, eb, ("value", "in"))
    with pytest.raises(SimulationAborted) as info:
        world.step(10)
    report = info.value.report
    assert report.failed_simulator == "a" and "boom at 4" in report.error
    assert report.steps == 4
    with pytest.raises(WorldError):
        world.step(11)


def test_determinism():
    def run():
        world, ea, eb = two_probes()
        world.connect(ea, eb, ("value", "in"))
        world.connect(eb, ea, ("value", "in"), time_shifted=True, initial_data={"value": 0})
        world.step(20)
        return world.simulators["a"].backend.sim.seen, world.simulators["b"].backend.sim.seen

    assert run() == run()


def test_remote_simulator_over_tcp():
    world = World()
    addr = world.listen()
    remote = Probe(scale=2)
    thread = threading.Thread(target=serve, args=(remote, addr), daemon=True)
    thread.start()
    ha = world.accept_simulator("remote", timeout=5)
    assert ha.remote
    eb = world.register_simulator("local", Probe()).create(1, "Node")[0]
    ea = ha.create(1, "Node", offset=1)[0]
    world.connect(ea, eb, ("value", "in"))
    report = world.step(6)
    world.shutdown()
    thread.join(5)
    got = [inp["n0"]["in"]["remote.n0"] for _, inp in world.simulators["local"].backend.sim.seen]
    assert got == [2 * t + 1 for t in range(6)]
    assert report.polls["remote"] == 6


def test_remote_failure_reported():
    world = World()
    addr = world.listen()
    thread = threading.Thread(target=serve, args=(Probe(fail_at=2), addr), daemon=True)
    thread.start()
    world.accept_simulator("remote", timeout=5).create(1, "Node")
    with pytest.raises(SimulationAborted) as info:
        world.step(5)
    assert info.value.report.failed_simulator == "remote"
    world.shutdown()


def test_handshake_timeout():
    world = World()
    world.listen()
    with pytest.raises(HandshakeTimeout):
        world.accept_simulator("ghost", timeout=0.2)
    world.shutdown()
