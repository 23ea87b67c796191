"""Network model: latency shaping, partitions, epoch bumps."""

import random

import pytest

from bcounter.sim.kernel import Simulator
from bcounter.sim.net import DEFAULT_RTTS, Network, symmetric_rtts


def make_net(jitter=0.0, seed=1):
    sim = Simulator()
    net = Network(sim, 3, jitter_frac=jitter, rng=random.Random(seed))
    return sim, net


def test_one_way_is_half_rtt():
    sim, net = make_net(jitter=0.0)
    stamps = []
    net.send(0, 2, lambda: stamps.append(sim.now))
    sim.run()
    assert stamps == [DEFAULT_RTTS[(0, 2)] / 2]


def test_intra_dc_is_short_hop():
    sim, net = make_net(jitter=0.0)
    stamps = []
    net.send(1, 1, lambda: stamps.append(sim.now))
    sim.run()
    assert stamps == [1.0]


def test_jitter_stays_in_band():
    sim, net = make_net(jitter=0.1, seed=7)
    base = DEFAULT_RTTS[(0, 1)] / 2
    for _ in range(200):
        d = net.delay(0, 1)
        assert base * 0.9 <= d <= base * 1.1


def test_rtt_table_is_symmetric_by_default():
    _, net = make_net()
    for a in range(3):
        for b in range(3):
            if a != b:
                assert net.rtts[(a, b)] == net.rtts[(b, a)]


def test_symmetric_rtts_keeps_explicit_asymmetry():
    t = symmetric_rtts({(0, 1): 80.0, (1, 0): 83.0})
    assert t[(0, 1)] == 80.0
    assert t[(1, 0)] == 83.0


def test_missing_rtt_rejected():
    sim = Simulator()
    with pytest.raises(ValueError):
        Network(sim, 4)  # default table only covers 3 DCs


def test_partition_drops_at_send():
    sim, net = make_net()
    got = []
    net.partition([{0, 1}, {2}])
    net.send(0, 2, lambda: got.append("x"))
    net.send(2, 0, lambda: got.append("y"))
    sim.run()
    assert got == []
    assert net.dropped == 2


def test_partition_allows_same_side_traffic():
    sim, net = make_net()
    got = []
    net.partition([{0, 1}, {2}])
    net.send(0, 1, lambda: got.append("ok"))
    sim.run()
    assert got == ["ok"]


def test_partition_drops_in_flight_messages():
    sim, net = make_net(jitter=0.0)
    got = []
    net.send(0, 2, lambda: got.append("x"))  # lands at t=48
    sim.schedule(10, lambda: net.partition([{0, 1}, {2}]))
    sim.run()
    assert got == []
    assert net.dropped == 1


def test_heal_restores_delivery():
    sim, net = make_net()
    got = []
    net.partition([{0}, {1}, {2}])
    sim.schedule(5, net.heal)
    sim.schedule(6, lambda: net.send(0, 2, lambda: got.append("x")))
    sim.run()
    assert got == ["x"]


def test_epoch_bumps_on_every_change():
    _, net = make_net()
    assert net.partition_epoch == 0
    net.partition([{0}, {1, 2}])
    net.partition([{0, 1}, {2}])
    net.heal()
    assert net.partition_epoch == 3


def test_overlapping_groups_rejected():
    _, net = make_net()
    with pytest.raises(ValueError):
        net.partition([{0, 1}, {1, 2}])
