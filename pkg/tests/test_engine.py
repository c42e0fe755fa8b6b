import pytest

from incsim.engine import LatencyModel, Simulator, packet_latency, serialization_ns
from incsim.errors import TimeTravel


def test_events_fire_in_time_then_insertion_order():
    sim = Simulator()
    seen = []
    sim.schedule(5, seen.append, "b")
    sim.schedule(3, seen.append, "a")
    sim.schedule(5, seen.append, "c")
    sim.schedule(5, seen.append, "d")
    sim.run_until()
    assert seen == ["a", "b", "c", "d"]
    assert sim.now() == 5


def test_time_travel_rejected():
    sim = Simulator()
    sim.schedule(10, lambda: None)
    sim.run_until()
    with pytest.raises(TimeTravel):
        sim.schedule(9, lambda: None)


def test_run_until_stops_at_horizon_and_advances_clock():
    sim = Simulator()
    fired = []
    sim.schedule(100, fired.append, 1)
    sim.schedule(200, fired.append, 2)
    sim.run_until(150)
    assert fired == [1] and sim.now() == 150 and sim.pending == 1
    sim.run_until()
    assert fired == [1, 2]


def test_events_scheduled_from_actions():
    sim = Simulator()
    log = []

    def tick(n):
        log.append(sim.now())
        if n:
            sim.after(7, tick, n - 1)

    sim.schedule(0, tick, 3)
    sim.run_until()
    assert log == [0, 7, 14, 21]


def test_run_while_and_max_events():
    sim = Simulator()
    count = []
    for t in range(10):
        sim.schedule(t, count.append, t)
    sim.run_while(lambda: len(count) < 4)
    assert count == [0, 1, 2, 3]
    sim.run_until(max_events=2)
    assert count == [0, 1, 2, 3, 4, 5]


def test_seeded_rng_is_reproducible():
    a, b = Simulator(seed=42), Simulator(seed=42)
    assert [a.rng.random() for _ in range(5)] == [b.rng.random() for _ in range(5)]


def test_serialization_rounds_up():
    assert serialization_ns(4) == 4
    assert serialization_ns(3, bandwidth=2 * 10**9) == 2


def test_latency_model_decomposition():
    model = LatencyModel()
    assert model.injection_ns + model.link_latency_ns == model.first_hop_ns
    assert packet_latency(0, 4) == 250
    assert packet_latency(1, 4) == 1104
    assert packet_latency(6, 4) == 4724
    # each extra hop adds the per-hop constant plus the payload serialization
    assert packet_latency(3, 4) - packet_latency(2, 4) == model.per_additional_hop_ns + 4
