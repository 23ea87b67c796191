"""Store semantics: siblings, conditional writes, races, crash-abort."""

import pytest

from bcounter.sim.kernel import Simulator
from bcounter.store import ABSENT, CONFLICT, Consistency, DCStore, WrongMode


def run_ops(sim, gen):
    """Drive a script coroutine to completion and return its value."""
    p = sim.spawn(gen)
    sim.run()
    assert p.done.done, "script did not finish"
    return p.done.value


def test_put_get_round_trip():
    sim = Simulator()
    store = DCStore(sim, 0)

    def script():
        v = yield store.put("k", b"hello")
        rec = yield store.get("k")
        return v, rec

    v, rec = run_ops(sim, script())
    assert v == 1
    assert rec.siblings == (b"hello",)
    assert rec.version == 1
    assert rec.consistency is Consistency.WEAK


def test_get_absent_key():
    sim = Simulator()
    store = DCStore(sim, 0)
    assert run_ops(sim, iter_get(store)) is None


def iter_get(store):
    rec = yield store.get("nothing")
    return rec


def test_latencies_model_service_time():
    sim = Simulator()
    store = DCStore(sim, 0, read_ms=1.0, write_ms=5.0)
    stamps = {}

    def script():
        yield store.put("k", b"x")
        stamps["write"] = sim.now
        yield store.get("k")
        stamps["read"] = sim.now

    run_ops(sim, script())
    assert stamps["write"] == 5.0
    assert stamps["read"] == 6.0


class TestWeakSiblings:
    def test_current_context_replaces(self):
        sim = Simulator()
        store = DCStore(sim, 0)

        def script():
            yield store.put("k", b"a")
            rec = yield store.get("k")
            yield store.put("k", b"b", context=rec.version)
            return (yield store.get("k"))

        rec = run_ops(sim, script())
        assert rec.siblings == (b"b",)

    def test_stale_context_adds_sibling(self):
        sim = Simulator()
        store = DCStore(sim, 0)

        def script():
            yield store.put("k", b"a")
            rec = yield store.get("k")
            yield store.put("k", b"b", context=rec.version)
            yield store.put("k", b"c", context=rec.version)  # now stale
            return (yield store.get("k"))

        rec = run_ops(sim, script())
        assert set(rec.siblings) == {b"b", b"c"}

    def test_concurrent_puts_accumulate(self):
        sim = Simulator()
        store = DCStore(sim, 0)

        def writer(data, ctx):
            yield store.put("k", data, context=ctx)

        def script():
            yield store.put("k", b"base")
            rec = yield store.get("k")
            p1 = sim.spawn(writer(b"one", rec.version))
            p2 = sim.spawn(writer(b"two", rec.version))
            yield p1.done
            yield p2.done
            return (yield store.get("k"))

        rec = run_ops(sim, script())
        assert set(rec.siblings) == {b"one", b"two"}

    def test_no_context_adds_sibling(self):
        sim = Simulator()
        store = DCStore(sim, 0)

        def script():
            yield store.put("k", b"a")
            yield store.put("k", b"b")
            return (yield store.get("k"))

        rec = run_ops(sim, script())
        assert set(rec.siblings) == {b"a", b"b"}

    def test_duplicate_bytes_not_duplicated(self):
        sim = Simulator()
        store = DCStore(sim, 0)

        def script():
            yield store.put("k", b"a")
            yield store.put("k", b"a")
            return (yield store.get("k"))

        rec = run_ops(sim, script())
        assert rec.siblings == (b"a",)


class TestConditionalWrites:
    def test_create_with_absent(self):
        sim = Simulator()
        store = DCStore(sim, 0)

        def script():
            v = yield store.put_conditional("k", b"x", ABSENT)
            rec = yield store.get("k")
            return v, rec

        v, rec = run_ops(sim, script())
        assert v == 1
        assert rec.consistency is Consistency.STRONG
        assert rec.siblings == (b"x",)

    def test_create_race_has_one_winner(self):
        sim = Simulator()
        store = DCStore(sim, 0)
        results = []

        def writer(data):
            r = yield store.put_conditional("k", data, ABSENT)
            results.append(r)

        sim.spawn(writer(b"a"))
        sim.spawn(writer(b"b"))
        sim.run()
        assert sorted(x is CONFLICT for x in results) == [False, True]

    def test_chain_of_expected_versions(self):
        sim = Simulator()
        store = DCStore(sim, 0)

        def script():
            v1 = yield store.put_conditional("k", b"a", ABSENT)
            v2 = yield store.put_conditional("k", b"b", v1)
            v3 = yield store.put_conditional("k", b"c", v2)
            return [v1, v2, v3]

        assert run_ops(sim, script()) == [1, 2, 3]

    def test_stale_expected_conflicts(self):
        sim = Simulator()
        store = DCStore(sim, 0)

        def script():
            v1 = yield store.put_conditional("k", b"a", ABSENT)
            yield store.put_conditional("k", b"b", v1)
            r = yield store.put_conditional("k", b"c", v1)
            rec = yield store.get("k")
            return r, rec

        r, rec = run_ops(sim, script())
        assert r is CONFLICT
        assert rec.siblings == (b"b",)  # loser installed nothing

    def test_same_version_racers_one_wins(self):
        sim = Simulator()
        store = DCStore(sim, 0)
        results = []

        def writer(data, expected):
            r = yield store.put_conditional("k", data, expected)
            results.append((data, r))

        def script():
            v = yield store.put_conditional("k", b"base", ABSENT)
            sim.spawn(writer(b"x", v))
            sim.spawn(writer(b"y", v))

        sim.spawn(script())
        sim.run()
        outcomes = dict(results)
        assert (outcomes[b"x"] is CONFLICT) != (outcomes[b"y"] is CONFLICT)
        assert store.conflicts == 1

    def test_strong_key_always_single_sibling(self):
        sim = Simulator()
        store = DCStore(sim, 0)

        def script():
            v = yield store.put_conditional("k", b"a", ABSENT)
            yield store.put_conditional("k", b"b", v)
            return (yield store.get("k"))

        rec = run_ops(sim, script())
        assert len(rec.siblings) == 1

    def test_retry_loop_succeeds_after_conflict(self):
        sim = Simulator()
        store = DCStore(sim, 0)

        def script():
            yield store.put_conditional("k", b"a", ABSENT)
            r = yield store.put_conditional("k", b"b", ABSENT)
            assert r is CONFLICT
            rec = yield store.get("k")
            r2 = yield store.put_conditional("k", b"b", rec.version)
            return r2

        assert run_ops(sim, script()) == 2


class TestModeSeparation:
    def test_weak_put_on_strong_key(self):
        sim = Simulator()
        store = DCStore(sim, 0)

        def script():
            yield store.put_conditional("k", b"a", ABSENT)

        run_ops(sim, script())
        with pytest.raises(WrongMode):
            store.put("k", b"b")

    def test_conditional_on_weak_key(self):
        sim = Simulator()
        store = DCStore(sim, 0)

        def script():
            yield store.put("k", b"a")

        run_ops(sim, script())
        with pytest.raises(WrongMode):
            store.put_conditional("k", b"b", ABSENT)


def test_crashed_writer_installs_nothing():
    sim = Simulator()
    store = DCStore(sim, 0)

    def doomed():
        yield store.put_conditional("k", b"ghost", ABSENT, aborter=p_holder[0])

    p_holder = [None]
    p = sim.spawn(doomed())
    p_holder[0] = p
    sim.schedule(2, p.kill)  # write lands at t=5, after the crash
    sim.run()
    assert store.peek("k") is None


def test_surviving_writer_installs():
    sim = Simulator()
    store = DCStore(sim, 0)

    def writer():
        yield store.put_conditional("k", b"v", ABSENT, aborter=p_holder[0])

    p_holder = [None]
    p_holder[0] = sim.spawn(writer())
    sim.run()
    assert store.peek("k").siblings == (b"v",)


def test_stats_counted():
    sim = Simulator()
    store = DCStore(sim, 0)

    def script():
        yield store.put("w", b"a")
        yield store.get("w")
        v = yield store.put_conditional("s", b"a", ABSENT)
        yield store.put_conditional("s", b"b", v)
        yield store.put_conditional("s", b"c", v)  # conflict

    run_ops(sim, script())
    assert store.weak_puts == 1
    assert store.reads == 1
    assert store.cond_writes == 3
    assert store.conflicts == 1
