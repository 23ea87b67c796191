"""Exhaustive small-model checking of the counter's safety invariants.

Explores every reachable configuration of a small replica group
breadth-first. Each replica gets its own budget of increments, decrements,
and transfers; merges are pairwise full-state exchanges drawn from a shared
budget. At every reachable state the checker verifies:

* local safety: each replica's own view satisfies the bound;
* global safety: the join of all views satisfies the bound;
* non-negative rights: no replica's own view ever shows it with negative
  local rights;
* conservativeness: a replica never estimates its own rights higher than the
  join does, so acting on the local view is always safe;
* join insensitivity: folding the views in opposite orders agrees.

Worlds are deduplicated on the canonical byte encoding of all views plus the
remaining budgets, with Pareto subsumption: re-reaching a configuration with
component-wise fewer moves left cannot uncover anything new.

Transfer amounts default to 1: rights arithmetic is linear, so unit
transfers already exercise every precondition boundary.

A fault-injection flag applies decrements without the rights gate, planting
exactly the bug the gate exists to stop; exploration then returns the
shortest trace to a violation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from collections import deque
from dataclasses import dataclass
from functools import reduce

from .crdt import BoundedCounter, NotEnoughRights, Polarity

Action = tuple
# ("inc", i, d) | ("dec", i, d) | ("transfer", i, j, a) | ("merge", i, j)


class InvalidStep(Exception):
    """A trace action that cannot apply in its state."""


class BudgetTooLarge(Exception):
    """Exploration exceeded the configured state cap."""


@dataclass(frozen=True)
class ExploreSpec:
    n: int = 3
    polarity: Polarity = Polarity.LOWER
    bound: int = 0
    initial: int = 5
    incs: int = 0  # per replica
    decs: int = 0  # per replica
    transfers: int = 0  # per replica
    max_merges: int = 4
    max_updates: int | None = None  # optional cap on total updates, any replica
    max_depth: int | None = None  # optional cap on total events
    deltas: tuple[int, ...] = (1,)
    transfer_amounts: tuple[int, ...] = (1,)
    unchecked_decrement: bool = False  # fault injection: skip the rights gate
    max_states: int = 5_000_000

    def validate(self) -> None:
        if self.n < 1:
            raise ValueError("need at least one replica")
        for name in ("incs", "decs", "transfers", "max_merges"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.deltas or any(d < 1 for d in self.deltas):
            raise ValueError("deltas must be positive")
        if not self.transfer_amounts or any(a < 1 for a in self.transfer_amounts):
            raise ValueError("transfer amounts must be positive")


@dataclass(frozen=True)
class Trace:
    """A replayable schedule: the exploration spec plus ordered actions.

    ``state_hash`` is the canonical-encoding digest of the final world, so a
    replay can prove it reproduced the explorer's state exactly.
    """

    spec: ExploreSpec
    steps: tuple[Action, ...]
    state_hash: str

    def to_json(self) -> str:
        doc = {
            "spec": {
                **{
                    k: getattr(self.spec, k)
                    for k in (
                        "n",
                        "bound",
                        "initial",
                        "incs",
                        "decs",
                        "transfers",
                        "max_merges",
                        "max_updates",
                        "max_depth",
                        "unchecked_decrement",
                        "max_states",
                    )
                },
                "polarity": self.spec.polarity.value,
                "deltas": list(self.spec.deltas),
                "transfer_amounts": list(self.spec.transfer_amounts),
            },
            "steps": [list(s) for s in self.steps],
            "state_hash": self.state_hash,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Trace":
        doc = json.loads(text)
        raw = dict(doc["spec"])
        raw["polarity"] = Polarity(raw["polarity"])
        raw["deltas"] = tuple(raw["deltas"])
        raw["transfer_amounts"] = tuple(raw["transfer_amounts"])
        spec = ExploreSpec(**raw)
        steps = tuple(tuple(s) for s in doc["steps"])
        return cls(spec, steps, doc["state_hash"])


@dataclass(frozen=True)
class Verified:
    states: int
    transitions: int
    probe: Trace  # one stored schedule; replaying it must match its hash


@dataclass(frozen=True)
class Counterexample:
    invariant: str
    trace: Trace
    values: tuple[int, ...]  # per-replica view values at the violation

    def __str__(self) -> str:
        steps = ", ".join(repr(a) for a in self.trace.steps)
        return f"{self.invariant} after [{steps}] values={self.values}"


def initial_world(spec: ExploreSpec) -> tuple[BoundedCounter, ...]:
    """Everyone starts from the fully replicated freshly created counter."""
    state = BoundedCounter.new(spec.polarity, spec.bound, spec.n, 0, spec.initial)
    return (state,) * spec.n


def world_hash(world: tuple[BoundedCounter, ...]) -> str:
    return hashlib.sha256(b"".join(s.encode() for s in world)).hexdigest()


def _within_bound(state: BoundedCounter) -> bool:
    if state.polarity is Polarity.LOWER:
        return state.value() >= state.bound
    return state.value() <= state.bound


def check_invariants(world: tuple[BoundedCounter, ...]) -> str | None:
    """Returns the violated invariant's name, or None when all hold."""
    for i, view in enumerate(world):
        if not _within_bound(view):
            return f"view {i} breaks the bound"
        if view.local_rights(i) < 0:
            return f"replica {i} sees itself with negative rights"
    join = reduce(lambda a, b: a.merge(b), world)
    if not _within_bound(join):
        return "the join of all views breaks the bound"
    for i, view in enumerate(world):
        if view.local_rights(i) > join.local_rights(i):
            return f"replica {i} overestimates its rights"
    rejoin = reduce(lambda a, b: a.merge(b), reversed(world))
    if rejoin != join:
        return "join depends on fold order"
    return None


def _unchecked_decrement(state: BoundedCounter, i: int, delta: int) -> BoundedCounter:
    """The planted bug: consume without checking local rights."""
    used = dict(state.used)
    used[i] = used.get(i, 0) + delta
    return dataclasses.replace(state, used=used)


def apply_action(
    world: tuple[BoundedCounter, ...], action: Action, spec: ExploreSpec
) -> tuple[BoundedCounter, ...] | None:
    """New world, or None when the action is not enabled in this world."""
    kind = action[0]
    out = list(world)
    try:
        if kind == "inc":
            _, i, d = action
            out[i] = world[i].increment(i, d)
        elif kind == "dec":
            _, i, d = action
            if spec.unchecked_decrement:
                out[i] = _unchecked_decrement(world[i], i, d)
            else:
                out[i] = world[i].decrement(i, d)
        elif kind == "transfer":
            _, i, j, a = action
            out[i] = world[i].transfer(i, j, a)
        elif kind == "merge":
            _, i, j = action
            merged = world[i].merge(world[j])
            if merged == world[i]:
                return None  # no-op merge; skip to keep the frontier tight
            out[i] = merged
        else:
            raise InvalidStep(f"unknown action {action!r}")
    except NotEnoughRights:
        return None
    return tuple(out)


# budget vector layout: (incs..., decs..., transfers..., merges, updates, depth)
def _initial_budget(spec: ExploreSpec) -> tuple[int, ...]:
    big = 1 << 30  # effectively unlimited when no cap is configured
    return (
        (spec.incs,) * spec.n
        + (spec.decs,) * spec.n
        + (spec.transfers,) * spec.n
        + (
            spec.max_merges,
            spec.max_updates if spec.max_updates is not None else big,
            spec.max_depth if spec.max_depth is not None else big,
        )
    )


def _moves(spec: ExploreSpec, budget: tuple[int, ...]):
    """Yields (action, new_budget) for every budget-enabled action."""
    n = spec.n
    merges, updates, depth = budget[3 * n], budget[3 * n + 1], budget[3 * n + 2]
    if depth <= 0:
        return
    if updates > 0:
        for i in range(n):
            if budget[i] > 0:
                for d in spec.deltas:
                    b = list(budget)
                    b[i] -= 1
                    b[3 * n + 1] = updates - 1
                    b[3 * n + 2] = depth - 1
                    yield ("inc", i, d), tuple(b)
            if budget[n + i] > 0:
                for d in spec.deltas:
                    b = list(budget)
                    b[n + i] -= 1
                    b[3 * n + 1] = updates - 1
                    b[3 * n + 2] = depth - 1
                    yield ("dec", i, d), tuple(b)
            if budget[2 * n + i] > 0:
                for j in range(n):
                    if j != i:
                        for a in spec.transfer_amounts:
                            b = list(budget)
                            b[2 * n + i] -= 1
                            b[3 * n + 1] = updates - 1
                            b[3 * n + 2] = depth - 1
                            yield ("transfer", i, j, a), tuple(b)
    if merges > 0:
        for i in range(n):
            for j in range(n):
                if j != i:
                    b = list(budget)
                    b[3 * n] = merges - 1
                    b[3 * n + 2] = depth - 1
                    yield ("merge", i, j), tuple(b)


def explore(spec: ExploreSpec) -> Verified | Counterexample:
    """Breadth-first search over every reachable world within the budgets."""
    spec.validate()
    world0 = initial_world(spec)

    def make_trace(steps, world):
        return Trace(spec, tuple(steps), world_hash(world))

    bad = check_invariants(world0)
    if bad is not None:
        return Counterexample(bad, make_trace((), world0), tuple(v.value() for v in world0))

    def world_key(world):
        return b"\x00".join(s.encode() for s in world)

    # per world: Pareto frontier of budget vectors already explored
    seen: dict[bytes, list[tuple[int, ...]]] = {}

    def subsumed(key, budget) -> bool:
        for old in seen.get(key, ()):
            if all(o >= b for o, b in zip(old, budget)):
                return True
        return False

    def remember(key, budget) -> None:
        frontier = seen.setdefault(key, [])
        frontier[:] = [
            old for old in frontier if not all(b >= o for b, o in zip(budget, old))
        ]
        frontier.append(budget)

    budget0 = _initial_budget(spec)
    k0 = world_key(world0)
    remember(k0, budget0)
    # ancestry as shared cons cells: node trace = (action, parent_cons)
    queue = deque([(world0, budget0, None)])
    states = 1
    transitions = 0
    deepest = None  # (depth, cons, world) probe candidate

    def rebuild(cons) -> list[Action]:
        steps = []
        while cons is not None:
            action, cons = cons
            steps.append(action)
        steps.reverse()
        return steps

    depth0 = budget0[3 * spec.n + 2]
    while queue:
        world, budget, cons = queue.popleft()
        for action, nbudget in _moves(spec, budget):
            nxt = apply_action(world, action, spec)
            if nxt is None:
                continue
            transitions += 1
            key = world_key(nxt)
            if subsumed(key, nbudget):
                continue
            remember(key, nbudget)
            states += 1
            if states > spec.max_states:
                raise BudgetTooLarge(
                    f"more than {spec.max_states} states; shrink the budgets"
                )
            ncons = (action, cons)
            bad = check_invariants(nxt)
            if bad is not None:
                return Counterexample(
                    bad,
                    make_trace(rebuild(ncons), nxt),
                    tuple(v.value() for v in nxt),
                )
            depth_used = depth0 - nbudget[3 * spec.n + 2]
            if deepest is None or depth_used > deepest[0]:
                deepest = (depth_used, ncons, nxt)
            queue.append((nxt, nbudget, ncons))
    if deepest is None:
        probe = make_trace((), world0)
    else:
        probe = make_trace(rebuild(deepest[1]), deepest[2])
    return Verified(states, transitions, probe)


def replay(trace: Trace) -> tuple[BoundedCounter, ...]:
    """Re-run a trace from its initial world; raises InvalidStep if it cannot."""
    spec = trace.spec
    world = initial_world(spec)
    budget = _initial_budget(spec)
    for action in trace.steps:
        legal = dict()
        for a, nb in _moves(spec, budget):
            legal[a] = nb
        if action not in legal:
            raise InvalidStep(f"action {action!r} exceeds the budgets")
        nxt = apply_action(world, action, spec)
        if nxt is None:
            raise InvalidStep(f"action {action!r} not enabled")
        world = nxt
        budget = legal[action]
    return world
