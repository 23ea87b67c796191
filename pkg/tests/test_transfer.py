"""Transfer policy: grant rules, witness dedup, rebalance and candidate ranking."""

import random

import pytest

from bcounter import BoundedCounter, Polarity
from bcounter.transfer import (
    TransferMode,
    TransferRequest,
    TransferStatus,
    default_threshold,
    handle_request,
    make_request,
    rebalance_tick,
    sync_candidates,
    visible_rights,
)


def counter_with(rights, used=None, bound=0, n=3):
    return BoundedCounter(
        polarity=Polarity.LOWER, bound=bound, n=n, rights=rights, used=used or {}
    )


class TestHandleRequest:
    def test_async_grants_at_most_half(self):
        state = counter_with({(0, 0): 10})
        req = TransferRequest(0, 1, 8, witness=0, mode=TransferMode.ASYNC)
        new, resp = handle_request(state, req)
        assert resp.status is TransferStatus.GRANTED
        assert resp.granted == 5
        assert new.local_rights(0) == 5
        assert new.local_rights(1) == 5
        assert resp.state is None

    def test_async_small_request_granted_fully(self):
        state = counter_with({(0, 0): 10})
        req = TransferRequest(0, 1, 3, witness=0, mode=TransferMode.ASYNC)
        _, resp = handle_request(state, req)
        assert resp.granted == 3

    def test_sync_can_grant_everything(self):
        state = counter_with({(0, 0): 3})
        req = TransferRequest(0, 1, 3, witness=0, mode=TransferMode.SYNC)
        new, resp = handle_request(state, req)
        assert resp.status is TransferStatus.GRANTED
        assert resp.granted == 3
        assert new.local_rights(0) == 0
        assert BoundedCounter.decode(resp.state) == new

    def test_sync_grant_capped_by_available(self):
        state = counter_with({(0, 0): 2})
        req = TransferRequest(0, 1, 9, witness=0, mode=TransferMode.SYNC)
        _, resp = handle_request(state, req)
        assert resp.granted == 2

    def test_denied_when_nothing_available(self):
        state = counter_with({(0, 0): 4}, used={0: 4})
        for mode in TransferMode:
            new, resp = handle_request(
                state, TransferRequest(0, 1, 1, witness=0, mode=mode)
            )
            assert resp.status is TransferStatus.DENIED
            assert new == state

    def test_async_single_right_denied(self):
        # floor(1/2) == 0: a lone right is never split
        state = counter_with({(0, 0): 1})
        _, resp = handle_request(state, TransferRequest(0, 1, 1, 0, TransferMode.ASYNC))
        assert resp.status is TransferStatus.DENIED

    def test_stale_witness_ignored(self):
        state = counter_with({(0, 0): 10, (0, 1): 4})
        req = TransferRequest(0, 1, 2, witness=0, mode=TransferMode.ASYNC)
        new, resp = handle_request(state, req)
        assert resp.status is TransferStatus.IGNORED
        assert new == state

    def test_current_witness_accepted(self):
        state = counter_with({(0, 0): 10, (0, 1): 4})
        req = TransferRequest(0, 1, 2, witness=4, mode=TransferMode.ASYNC)
        _, resp = handle_request(state, req)
        assert resp.status is TransferStatus.GRANTED

    def test_grantor_never_goes_negative(self):
        rng = random.Random(13)
        for _ in range(300):
            held = rng.randint(0, 20)
            state = counter_with({(0, 0): held} if held else {})
            req = TransferRequest(
                0, 1, rng.randint(1, 30), witness=0, mode=rng.choice(list(TransferMode))
            )
            new, resp = handle_request(state, req)
            assert new.local_rights(0) >= 0
            if resp.status is TransferStatus.GRANTED:
                assert resp.granted <= held

    def test_duplicated_reordered_stream_equals_deduplicated(self):
        """Replayed and shuffled requests must land on the same final state."""
        rng = random.Random(7)
        for _ in range(100):
            base = counter_with({(0, 0): rng.randint(5, 40)})
            reqs = []
            probe = base
            for _ in range(rng.randint(1, 4)):
                r = make_request(probe, 0, 1, rng.randint(1, 6), TransferMode.SYNC)
                probe, _ = handle_request(probe, r)
                reqs.append(r)

            # clean in-order, deduplicated delivery
            clean = base
            for r in reqs:
                clean, _ = handle_request(clean, r)

            # duplicated and reordered delivery of the same stream
            noisy_stream = reqs + [rng.choice(reqs) for _ in range(4)]
            rng.shuffle(noisy_stream)
            noisy = base
            for r in noisy_stream:
                noisy, _ = handle_request(noisy, r)

            # every request that was IGNORED in the noisy run was either a
            # duplicate or overtaken; the grantor never over-grants
            assert noisy.local_rights(0) >= clean.local_rights(0)
            assert noisy.rights.get((0, 1), 0) <= clean.rights.get((0, 1), 0)
            # a duplicate of an already-applied request changes nothing
            settled, _ = handle_request(clean, reqs[-1])
            assert settled == clean

    def test_transfer_preserves_value(self):
        state = counter_with({(0, 0): 10}, used={0: 2})
        new, _ = handle_request(state, TransferRequest(0, 2, 4, 0, TransferMode.SYNC))
        assert new.value() == state.value()


class TestRebalance:
    def test_quiet_above_threshold(self):
        state = counter_with({(0, 0): 10, (1, 1): 50})
        assert rebalance_tick(state, 0, threshold=10) == []

    def test_asks_half_the_difference(self):
        state = counter_with({(0, 0): 2, (1, 1): 10})
        reqs = rebalance_tick(state, 0, threshold=5)
        assert len(reqs) == 1
        (r,) = reqs
        assert r.grantor == 1 and r.requester == 0
        assert r.amount == 4  # (10 - 2) / 2
        assert r.mode is TransferMode.ASYNC

    def test_skips_poorer_replicas(self):
        state = counter_with({(0, 0): 3, (1, 1): 2, (2, 2): 9})
        reqs = rebalance_tick(state, 0, threshold=5)
        assert [r.grantor for r in reqs] == [2]
        assert reqs[0].amount == 3

    def test_silent_when_everyone_is_exhausted(self):
        state = counter_with({(0, 0): 4, (1, 1): 4}, used={0: 4, 1: 4})
        assert rebalance_tick(state, 0, threshold=5) == []

    def test_witness_carried_from_state(self):
        state = counter_with({(1, 1): 20, (1, 0): 6})
        reqs = rebalance_tick(state, 0, threshold=7)
        (r,) = reqs
        assert r.witness == 6


class TestSyncCandidates:
    def test_descending_by_visible_rights(self):
        state = counter_with({(0, 0): 1, (1, 1): 9, (2, 2): 4})
        assert sync_candidates(state, 0) == [1, 2]

    def test_exhausted_excluded(self):
        state = counter_with({(1, 1): 5}, used={1: 5})
        assert sync_candidates(state, 0) == []

    def test_ties_by_id(self):
        state = counter_with({(1, 1): 5, (2, 2): 5})
        assert sync_candidates(state, 0) == [1, 2]

    def test_self_excluded(self):
        state = counter_with({(0, 0): 50, (1, 1): 1})
        assert 0 not in sync_candidates(state, 0)


def test_visible_rights_is_local_view():
    state = counter_with({(1, 1): 8}, used={1: 3})
    assert visible_rights(state, 1) == 5


@pytest.mark.parametrize(
    "slack,n,expected", [(6000, 3, 200), (30, 3, 1), (0, 3, 1), (100, 2, 5)]
)
def test_default_threshold(slack, n, expected):
    assert default_threshold(slack, n) == expected
