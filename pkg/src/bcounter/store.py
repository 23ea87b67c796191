"""Per-data-center key-value store emulation.

Models the storage substrate the middleware runs against: opaque byte values,
a configurable service latency per operation, and two consistency modes fixed
per key by its first write:

* WEAK: puts always succeed. A put carries the version its writer read
  (its causal context): it replaces every sibling that existed by then,
  because the writer is assumed to have read and merged them, and it lands
  next to any sibling written concurrently. A put with no context dominates
  nothing and simply joins the sibling set. Readers see all siblings and are
  expected to merge them.
* STRONG: only conditional writes, which install iff the caller's expected
  version is still current. Exactly one sibling at all times. Strong keys are
  never replicated across DCs by the store; any cross-DC movement of their
  content is the middleware's job.

Behavior is linearizable per key within one DC: effects land atomically when
the operation's service latency elapses, so of two in-flight conditional
writes racing from the same version, exactly the first to complete wins.

Writes may carry an ``aborter`` process: if that process has died by the time
the write would land, the write is discarded. This models a node crashing
with the request still in its send buffer, and keeps "acknowledged" and
"durable" the same thing for crashed middleware nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .sim.kernel import Future, Process, Simulator


class Consistency(Enum):
    WEAK = "weak"
    STRONG = "strong"


class _AbsentType:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "ABSENT"


class _ConflictType:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "CONFLICT"


ABSENT = _AbsentType()  # expected-version token for "key does not exist yet"
CONFLICT = _ConflictType()  # conditional-write outcome when the version moved


class WrongMode(Exception):
    """Weak put on a strong key, or conditional write on a weak key."""


@dataclass(frozen=True)
class VersionedRecord:
    key: str
    siblings: tuple[bytes, ...]
    version: int
    consistency: Consistency


class _Entry:
    __slots__ = ("mode", "siblings", "births", "version")

    def __init__(self, mode: Consistency):
        self.mode = mode
        self.siblings: tuple[bytes, ...] = ()
        self.births: tuple[int, ...] = ()  # version at which each sibling landed
        self.version = 0


class DCStore:
    """One DC's store; all effects land via the simulator's event loop."""

    def __init__(self, sim: Simulator, dc: int, read_ms: float = 1.0, write_ms: float = 5.0):
        self.sim = sim
        self.dc = dc
        self.read_ms = read_ms
        self.write_ms = write_ms
        self._entries: dict[str, _Entry] = {}
        self.reads = 0
        self.weak_puts = 0
        self.cond_writes = 0
        self.conflicts = 0

    # -- modeled API -----------------------------------------------------------

    def get(self, key: str) -> Future:
        """Resolves to a VersionedRecord, or None when the key is absent."""
        self.reads += 1
        f = Future(self.sim)

        def complete():
            e = self._entries.get(key)
            if e is None or e.version == 0:
                f.resolve(None)
            else:
                f.resolve(VersionedRecord(key, e.siblings, e.version, e.mode))

        self.sim.schedule(self.read_ms, complete)
        return f

    def put(
        self,
        key: str,
        data: bytes,
        context: int | None = None,
        aborter: Process | None = None,
    ) -> Future:
        """Weak put; resolves to the new version token.

        ``context`` is the version the caller read before computing ``data``;
        the put replaces every sibling that existed by that version and lands
        next to any sibling written after it. No context means the writer saw
        nothing, so nothing is replaced.
        """
        e = self._entries.get(key)
        if e is not None and e.mode is Consistency.STRONG:
            raise WrongMode(f"weak put on strong key {key!r}")
        self.weak_puts += 1
        f = Future(self.sim)

        def complete():
            if aborter is not None and not aborter.alive:
                return
            entry = self._entries.setdefault(key, _Entry(Consistency.WEAK))
            if entry.mode is not Consistency.WEAK:
                raise WrongMode(f"weak put on strong key {key!r}")
            seen = entry.version if context is None else min(context, entry.version)
            survivors = [
                (b, s)
                for b, s in zip(entry.births, entry.siblings)
                if (context is None or b > seen) and s != data
            ]
            entry.version += 1
            survivors.append((entry.version, data))
            entry.births = tuple(b for b, _ in survivors)
            entry.siblings = tuple(s for _, s in survivors)
            f.resolve(entry.version)

        self.sim.schedule(self.write_ms, complete)
        return f

    def put_conditional(self, key, data, expected, aborter: Process | None = None) -> Future:
        """Conditional write; resolves to the new version token, or CONFLICT.

        ``expected`` is a version token, or ABSENT to create the key. The
        version comparison happens when the write lands, so of concurrent
        writers from one version exactly the first to land succeeds.
        """
        e = self._entries.get(key)
        if e is not None and e.mode is Consistency.WEAK:
            raise WrongMode(f"conditional write on weak key {key!r}")
        self.cond_writes += 1
        f = Future(self.sim)

        def complete():
            if aborter is not None and not aborter.alive:
                return
            entry = self._entries.get(key)
            current = 0 if entry is None else entry.version
            want = 0 if expected is ABSENT else expected
            if want != current:
                self.conflicts += 1
                f.resolve(CONFLICT)
                return
            if entry is None:
                entry = self._entries[key] = _Entry(Consistency.STRONG)
            elif entry.mode is not Consistency.STRONG:
                raise WrongMode(f"conditional write on weak key {key!r}")
            entry.version += 1
            entry.siblings = (data,)
            entry.births = (entry.version,)
            f.resolve(entry.version)

        self.sim.schedule(self.write_ms, complete)
        return f

    # -- instrumentation (no latency, not part of the modeled API) -------------

    def peek(self, key: str) -> VersionedRecord | None:
        e = self._entries.get(key)
        if e is None or e.version == 0:
            return None
        return VersionedRecord(key, e.siblings, e.version, e.mode)

    def seed(self, key: str, data: bytes, mode: Consistency) -> None:
        """Install a key instantly at version 1, as experiment setup."""
        if key in self._entries:
            raise ValueError(f"seed would clobber existing key {key!r}")
        entry = _Entry(mode)
        entry.siblings = (data,)
        entry.births = (1,)
        entry.version = 1
        self._entries[key] = entry
