"""Server-side middleware: per-DC owner nodes with caching and write batching.

Every DC runs a small cluster of nodes. A routing table maps each counter key
to exactly one owner node per epoch; the epoch increments whenever membership
changes (crash detected, node recovered, explicit reconfiguration), which
re-routes keys. All client operations for a key funnel through its owner, so
within one DC the counter's updates are serialized without store conflicts.

The owner keeps the counter cached: a durable base (the last state it wrote
successfully, with its version token) plus a working copy holding operations
accepted since. Operations apply to the working copy at arrival, where the
rights check happens immediately; acknowledgements are deferred until a
conditional write containing the operation lands durably. While one write is
in flight, newly arriving operations keep folding into the working copy and
ride the next write, so a busy owner writes batches, not single updates.

A conflicted write means another owner wrote first (an epoch race): the whole
working copy is discarded since none of it is durable, every affected client
is told to retry, and the cache is refreshed from the store. A crashed owner
loses its cache and its in-flight write; the durable base in the store is
what the next owner starts from, and unacknowledged clients time out.

In no-batching mode the owner instead processes one operation per conditional
write, FIFO, which serves as the baseline the batching design is measured
against.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

from .crdt import BoundedCounter, NotEnoughRights
from .sim.kernel import TIMEOUT, Future, Process, Simulator
from .sim.net import Network
from .store import CONFLICT, DCStore
from .transfer import (
    TransferMode,
    TransferRequest,
    TransferResponse,
    TransferStatus,
    handle_request,
    make_request,
    rebalance_tick,
    sync_candidates,
    visible_rights,
)

# a full (non-dirty-only) propagation round every this many ticks, so state
# lost to crashed receivers is re-delivered without waiting for a new write
FULL_RESYNC_TICKS = 10

# ops older than their deadline minus this margin are shed un-applied, so a
# timed-out client can be sure its operation did not land after the fact
DEADLINE_MARGIN_MS = 20.0


@dataclass(frozen=True)
class OwnerReply:
    status: str  # ok | failed | retry | stale
    reason: str
    used_sync: bool = False


def _route_hash(key: str, epoch: int) -> int:
    digest = hashlib.md5(f"{key}:{epoch}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class _OpItem:
    __slots__ = ("kind", "delta", "flag", "reply", "deadline_ms", "retried", "used_sync")

    def __init__(self, kind, delta, flag, reply, deadline_ms=None, retried=False):
        self.kind = kind
        self.delta = delta
        self.flag = flag
        self.reply = reply
        self.deadline_ms = deadline_ms
        self.retried = retried
        self.used_sync = False


class _OpWaiter:
    counts_as_op = True

    def __init__(self, item: _OpItem):
        self.item = item

    def on_ok(self, written: BoundedCounter) -> None:
        self.item.reply(OwnerReply("ok", "ok", self.item.used_sync))

    def on_conflict(self) -> None:
        self.item.reply(OwnerReply("retry", "conflict", self.item.used_sync))


class _MergeWaiter:
    counts_as_op = False

    def on_ok(self, written: BoundedCounter) -> None:
        pass

    def on_conflict(self) -> None:
        pass


class _GrantWaiter:
    """A granted transfer awaiting durability before the reply may leave."""

    counts_as_op = False

    def __init__(self, granted: int, respond: Callable[[TransferResponse], None]):
        self.granted = granted
        self.respond = respond

    def on_ok(self, written: BoundedCounter) -> None:
        self.respond(TransferResponse(TransferStatus.GRANTED, self.granted, written.encode()))

    def on_conflict(self) -> None:
        self.respond(TransferResponse(TransferStatus.DENIED))


class _Pipeline:
    COLD, LOADING, WARM = range(3)

    __slots__ = (
        "key",
        "state",
        "base_state",
        "base_version",
        "working",
        "batch",
        "queue",
        "arrivals",
        "writer_running",
        "acquire_queue",
        "acquiring",
        "dirty",
    )

    def __init__(self, key: str):
        self.key = key
        self.state = _Pipeline.COLD
        self.base_state: BoundedCounter | None = None
        self.base_version: int | None = None
        self.working: BoundedCounter | None = None
        self.batch: list = []  # waiters riding the next conditional write
        self.queue: list = []  # no-batching FIFO of pending work items
        self.arrivals: list = []  # anything that arrived while LOADING
        self.writer_running = False
        self.acquire_queue: list[_OpItem] = []
        self.acquiring = False
        self.dirty = False


class Node:
    """One owner node; holds pipelines for the keys routed to it."""

    def __init__(self, cluster: "ServerCluster", idx: int):
        self.cluster = cluster
        self.idx = idx
        self.dead = False
        self.pipelines: dict[str, _Pipeline] = {}
        self._procs: list[Process] = []
        self._pending: dict[int, Future] = {}
        self._writer_proc: dict[str, Process] = {}

    # shorthand accessors into the cluster's shared machinery
    @property
    def sim(self) -> Simulator:
        return self.cluster.sim

    @property
    def net(self) -> Network:
        return self.cluster.net

    @property
    def store(self) -> DCStore:
        return self.cluster.store

    @property
    def dc(self) -> int:
        return self.cluster.dc

    @property
    def metrics(self):
        return self.cluster.metrics

    def spawn(self, gen) -> Process:
        p = self.sim.spawn(gen)
        self._procs.append(p)
        return p

    def start(self) -> None:
        self.spawn(self._propagate_loop())
        self.spawn(self._rebalance_loop())

    def crash(self) -> None:
        self.dead = True
        for p in self._procs:
            p.kill()

    # -- admission ------------------------------------------------------------

    def _pipeline(self, key: str) -> _Pipeline:
        p = self.pipelines.get(key)
        if p is None:
            p = self.pipelines[key] = _Pipeline(key)
        return p

    def handle_op(self, key: str, item: _OpItem) -> None:
        if self.dead:
            return
        if self.cluster.route(key) is not self:
            item.reply(OwnerReply("stale", "stale"))
            return
        p = self._pipeline(key)
        if p.state != _Pipeline.WARM:
            p.arrivals.append(("op", item))
            self._ensure_loaded(p)
            return
        self._admit_op(p, item)

    def handle_merge(self, key: str, incoming: BoundedCounter) -> None:
        if self.dead:
            return
        p = self._pipeline(key)
        if p.state != _Pipeline.WARM:
            p.arrivals.append(("merge", incoming))
            self._ensure_loaded(p)
            return
        self._admit_merge(p, incoming)

    def handle_transfer(
        self, key: str, req: TransferRequest, respond: Callable[[TransferResponse], None] | None
    ) -> None:
        if self.dead:
            return
        p = self._pipeline(key)
        if p.state != _Pipeline.WARM:
            p.arrivals.append(("transfer", (req, respond)))
            self._ensure_loaded(p)
            return
        self._admit_transfer(p, req, respond)

    def _ensure_loaded(self, p: _Pipeline) -> None:
        if p.state == _Pipeline.COLD:
            p.state = _Pipeline.LOADING
            self.spawn(self._load(p))

    def _load(self, p: _Pipeline):
        yield self.net.intra_delay()
        rec = yield self.store.get(p.key)
        yield self.net.intra_delay()
        if rec is None:
            p.state = _Pipeline.COLD
            for tag, payload in p.arrivals:
                if tag == "op":
                    payload.reply(OwnerReply("failed", "notfound"))
            p.arrivals = []
            return
        p.base_state = BoundedCounter.decode(rec.siblings[0])
        p.base_version = rec.version
        p.working = p.base_state
        p.state = _Pipeline.WARM
        self._drain_arrivals(p)

    def _drain_arrivals(self, p: _Pipeline) -> None:
        pending, p.arrivals = p.arrivals, []
        for tag, payload in pending:
            if tag == "op":
                self._admit_op(p, payload)
            elif tag == "merge":
                self._admit_merge(p, payload)
            else:
                req, respond = payload
                self._admit_transfer(p, req, respond)

    # -- batching pipeline ------------------------------------------------------

    def _expired(self, item: _OpItem) -> bool:
        return (
            item.deadline_ms is not None
            and self.sim.now > item.deadline_ms - DEADLINE_MARGIN_MS
        )

    def _admit_op(self, p: _Pipeline, item: _OpItem) -> None:
        if self._expired(item):
            return  # the client timed out; never apply such an op
        if not self.cluster.batching:
            p.queue.append(("op", item))
            self._ensure_writer(p)
            return
        try:
            new_working = self._apply(p.working, item)
        except NotEnoughRights:
            self._rights_denied(p, item, p.working)
            return
        p.working = new_working
        p.batch.append(_OpWaiter(item))
        self._ensure_writer(p)

    def _admit_merge(self, p: _Pipeline, incoming: BoundedCounter) -> None:
        if not self.cluster.batching:
            p.queue.append(("merge", incoming))
            self._ensure_writer(p)
            return
        merged = p.working.merge(incoming)
        if merged == p.working:
            return
        p.working = merged
        p.batch.append(_MergeWaiter())
        self._ensure_writer(p)

    def _admit_transfer(self, p, req: TransferRequest, respond) -> None:
        if not self.cluster.batching:
            p.queue.append(("transfer", (req, respond)))
            self._ensure_writer(p)
            return
        new_working, resp = handle_request(p.working, req)
        if resp.status is not TransferStatus.GRANTED:
            if respond is not None:
                respond(resp)
            return
        p.working = new_working
        if respond is not None:
            p.batch.append(_GrantWaiter(resp.granted, respond))
        else:
            p.batch.append(_MergeWaiter())  # async grant: durability only
        self._ensure_writer(p)

    def _apply(self, state: BoundedCounter, item: _OpItem) -> BoundedCounter:
        if item.kind == "inc":
            return state.increment(self.dc, item.delta)
        return state.decrement(self.dc, item.delta)

    def _rights_denied(self, p: _Pipeline, item: _OpItem, view: BoundedCounter) -> None:
        deficit = item.delta - view.local_rights(self.dc)
        if item.flag == "local" or item.retried:
            hint = any(
                visible_rights(view, j) >= deficit for j in range(view.n) if j != self.dc
            )
            status = "retry" if (item.flag == "local" and hint) else "failed"
            item.reply(OwnerReply(status, "rights", item.used_sync))
            return
        p.acquire_queue.append(item)
        if not p.acquiring:
            p.acquiring = True
            self.spawn(self._acquire_loop(p))

    def _ensure_writer(self, p: _Pipeline) -> None:
        if p.writer_running:
            return
        p.writer_running = True
        gen = self._write_loop(p) if self.cluster.batching else self._serial_loop(p)
        self._writer_proc[p.key] = self.spawn(gen)

    def _write_loop(self, p: _Pipeline):
        """Batching writer: one in-flight conditional write, waiters ride it."""
        while p.batch or p.working != p.base_state:
            waiters, p.batch = p.batch, []
            snapshot = p.working
            if any(w.counts_as_op for w in waiters):
                self.metrics.op_write()
            yield self.net.intra_delay()
            res = yield self.store.put_conditional(
                p.key, snapshot.encode(), p.base_version, aborter=self._writer_proc[p.key]
            )
            yield self.net.intra_delay()
            if res is CONFLICT:
                # nothing in the working copy is durable; drop all of it
                for w in waiters:
                    w.on_conflict()
                for w in p.batch:
                    w.on_conflict()
                p.batch = []
                p.state = _Pipeline.LOADING
                yield self.net.intra_delay()
                rec = yield self.store.get(p.key)
                yield self.net.intra_delay()
                p.base_state = BoundedCounter.decode(rec.siblings[0])
                p.base_version = rec.version
                p.working = p.base_state
                p.state = _Pipeline.WARM
                self._drain_arrivals(p)
                continue
            p.base_version = res
            p.base_state = snapshot
            p.dirty = True
            for w in waiters:
                w.on_ok(snapshot)
        p.writer_running = False

    def _serial_loop(self, p: _Pipeline):
        """No-batching writer: strict FIFO, one operation per conditional write."""
        while p.queue:
            tag, payload = p.queue.pop(0)
            if tag == "op":
                item: _OpItem = payload
                if self._expired(item):
                    continue  # shed un-applied; the client timed out
                try:
                    new_state = self._apply(p.base_state, item)
                except NotEnoughRights:
                    self._rights_denied(p, item, p.base_state)
                    continue
                self.metrics.op_write()
                ok = yield from self._serial_write(p, new_state)
                item.reply(
                    OwnerReply("ok" if ok else "retry", "ok" if ok else "conflict", item.used_sync)
                )
            elif tag == "merge":
                merged = p.base_state.merge(payload)
                if merged != p.base_state:
                    yield from self._serial_write(p, merged)
            else:
                req, respond = payload
                new_state, resp = handle_request(p.base_state, req)
                if resp.status is not TransferStatus.GRANTED:
                    if respond is not None:
                        respond(resp)
                    continue
                ok = yield from self._serial_write(p, new_state)
                if respond is not None:
                    if ok:
                        respond(
                            TransferResponse(
                                TransferStatus.GRANTED, resp.granted, p.base_state.encode()
                            )
                        )
                    else:
                        respond(TransferResponse(TransferStatus.DENIED))
        p.writer_running = False
        p.working = p.base_state

    def _serial_write(self, p: _Pipeline, new_state: BoundedCounter):
        yield self.net.intra_delay()
        res = yield self.store.put_conditional(
            p.key, new_state.encode(), p.base_version, aborter=self._writer_proc[p.key]
        )
        yield self.net.intra_delay()
        if res is CONFLICT:
            yield self.net.intra_delay()
            rec = yield self.store.get(p.key)
            yield self.net.intra_delay()
            p.base_state = BoundedCounter.decode(rec.siblings[0])
            p.base_version = rec.version
            p.working = p.base_state
            return False
        p.base_version = res
        p.base_state = new_state
        p.working = new_state
        p.dirty = True
        return True

    # -- synchronous rights acquisition -----------------------------------------

    def _view(self, p: _Pipeline) -> BoundedCounter:
        return p.working if self.cluster.batching else p.base_state

    def _acquire_loop(self, p: _Pipeline):
        while p.acquire_queue:
            item = p.acquire_queue.pop(0)
            view = self._view(p)
            deficit = item.delta - view.local_rights(self.dc)
            obtained = True
            if deficit > 0:
                obtained, requested = yield from self._acquire_sync(p, deficit)
                item.used_sync = item.used_sync or requested
            item.retried = True
            if obtained:
                self._admit_op(p, item)  # may still fail; then replies failed
            else:
                item.reply(OwnerReply("failed", "rights", item.used_sync))
        p.acquiring = False

    def _acquire_sync(self, p: _Pipeline, deficit: int):
        """Pull at least ``deficit`` rights; asks for a threshold-sized chunk
        so one round trip covers a burst of deficient operations, not one."""
        chunk = max(deficit, self.cluster.threshold_for(p.key))
        remaining = deficit
        requested = False
        asked: set[int] = set()
        view = self._view(p)
        while remaining > 0:
            candidates = [j for j in sync_candidates(view, self.dc) if j not in asked]
            if not candidates:
                return False, requested
            target = candidates[0]
            asked.add(target)
            req = make_request(
                view, target, self.dc, max(remaining, chunk), TransferMode.SYNC
            )
            requested = True
            self.metrics.transfer_request(
                self.sim.now, self.dc, target, "sync", visible_rights(view, target)
            )
            reply = Future(self.sim)
            req_id = self.cluster.next_req_id()
            self._pending[req_id] = reply
            self.cluster.send_transfer_request(p.key, req, target, self.idx, req_id)
            resp = yield (reply, 2 * self.net.rtt(self.dc, target))
            self._pending.pop(req_id, None)
            if resp is TIMEOUT or resp.status is not TransferStatus.GRANTED:
                view = self._view(p)
                continue
            self.handle_merge(p.key, BoundedCounter.decode(resp.state))
            view = self._view(p)
            remaining -= resp.granted
        return True, requested

    def on_transfer_response(self, req_id: int, resp: TransferResponse) -> None:
        f = self._pending.get(req_id)
        if f is not None:
            f.resolve(resp)

    # -- periodic loops -----------------------------------------------------------

    def _propagate_loop(self):
        last_epoch = self.net.partition_epoch
        ticks = 0
        while True:
            yield self.cluster.sync_period_ms
            ticks += 1
            epoch = self.net.partition_epoch
            send_all = epoch != last_epoch or ticks % FULL_RESYNC_TICKS == 0
            last_epoch = epoch
            for key in sorted(self.pipelines):
                p = self.pipelines[key]
                if p.state != _Pipeline.WARM and not (
                    p.state == _Pipeline.LOADING and p.base_state is not None
                ):
                    continue
                if not (p.dirty or send_all):
                    continue
                p.dirty = False
                blob = p.base_state.encode()  # only durable state ever leaves
                for other in range(self.net.n_dcs):
                    if other == self.dc:
                        continue
                    self.metrics.sync_msg()
                    self.cluster.send_propagate(key, blob, other)

    def _rebalance_loop(self):
        while True:
            yield self.cluster.rebalance_period_ms
            for key in sorted(self.pipelines):
                p = self.pipelines[key]
                if p.state != _Pipeline.WARM:
                    continue
                view = self._view(p)
                threshold = self.cluster.threshold_for(key)
                for req in rebalance_tick(view, self.dc, threshold):
                    self.metrics.transfer_request(
                        self.sim.now,
                        self.dc,
                        req.grantor,
                        "async",
                        visible_rights(view, req.grantor),
                    )
                    self.cluster.send_transfer_request(key, req, req.grantor, self.idx, -1)


class ServerCluster:
    """One DC's owner nodes plus the routing table over them."""

    def __init__(
        self,
        sim: Simulator,
        net: Network,
        store: DCStore,
        dc: int,
        metrics,
        n_nodes: int = 3,
        batching: bool = True,
        sync_period_ms: float = 50.0,
        rebalance_period_ms: float = 100.0,
    ):
        self.sim = sim
        self.net = net
        self.store = store
        self.dc = dc
        self.metrics = metrics
        self.batching = batching
        self.sync_period_ms = sync_period_ms
        self.rebalance_period_ms = rebalance_period_ms
        self.epoch = 0
        self.nodes: list[Node] = [Node(self, i) for i in range(n_nodes)]
        self._alive: list[int] = list(range(n_nodes))
        self.peers: list["ServerCluster"] = []  # index = dc id, set by wiring
        self._thresholds: dict[str, int] = {}
        self._req_seq = 0

    # -- wiring --------------------------------------------------------------

    def register(self, key: str, threshold: int) -> None:
        self._thresholds[key] = threshold

    def threshold_for(self, key: str) -> int:
        return self._thresholds.get(key, 1)

    def start(self) -> None:
        for node in self.nodes:
            node.start()

    def next_req_id(self) -> int:
        self._req_seq += 1
        return self._req_seq

    # -- routing ----------------------------------------------------------------

    def route(self, key: str) -> Node:
        alive = self._alive
        idx = alive[_route_hash(key, self.epoch) % len(alive)]
        return self.nodes[idx]

    def reconfigure(self) -> None:
        """Membership-change marker: re-routes keys without touching nodes."""
        self.epoch += 1

    def crash_node(self, idx: int) -> None:
        self.nodes[idx].crash()

    def mark_failed(self, idx: int) -> None:
        """Failure detection: drop the node from routing, bump the epoch."""
        if self.nodes[idx].dead and idx in self._alive:
            self._alive.remove(idx)
            self.epoch += 1

    def recover_node(self, idx: int) -> None:
        node = Node(self, idx)
        self.nodes[idx] = node
        if idx not in self._alive:
            self._alive.append(idx)
            self._alive.sort()
        self.epoch += 1
        node.start()

    # -- message entry points -------------------------------------------------

    def client_request(
        self, key: str, kind: str, delta: int, flag: str, reply, deadline_ms: float | None = None
    ) -> None:
        self.route(key).handle_op(key, _OpItem(kind, delta, flag, reply, deadline_ms))

    def on_propagate(self, key: str, blob: bytes) -> None:
        self.route(key).handle_merge(key, BoundedCounter.decode(blob))

    def on_transfer_request(
        self, key: str, req: TransferRequest, reply_dc: int, reply_node: int, req_id: int
    ) -> None:
        respond = None
        if req.mode is TransferMode.SYNC:
            peer = self.peers[reply_dc]

            def respond(resp, peer=peer, reply_node=reply_node, req_id=req_id):
                self.metrics.transfer_response()
                self.net.send(
                    self.dc,
                    reply_dc,
                    lambda: peer.on_transfer_response(reply_node, req_id, resp),
                )

        self.route(key).handle_transfer(key, req, respond)

    def on_transfer_response(self, node_idx: int, req_id: int, resp) -> None:
        node = self.nodes[node_idx]
        if not node.dead:
            node.on_transfer_response(req_id, resp)

    def send_transfer_request(
        self, key: str, req: TransferRequest, target_dc: int, from_node: int, req_id: int
    ) -> None:
        peer = self.peers[target_dc]
        self.net.send(
            self.dc,
            target_dc,
            lambda: peer.on_transfer_request(key, req, self.dc, from_node, req_id),
        )

    def send_propagate(self, key: str, blob: bytes, target_dc: int) -> None:
        peer = self.peers[target_dc]
        self.net.send(self.dc, target_dc, lambda: peer.on_propagate(key, blob))
