"""Windowed operator core: window lifecycle, both per-tuple entry points."""

import math
import random

import pytest

from vsnstream.core import Kind, Tuple, WindowSpec, WT, window_left_boundaries
from vsnstream.operator import (
    InstanceLocal,
    OperatorDef,
    OperatorInstance,
    SharedState,
    Slot,
    WriterGuard,
    default_f_O,
    default_f_S,
    default_f_U,
    forward_sn,
    forward_vsn,
    prepare_out_tuples,
    state_is_empty,
)

MIN = 60_000
H9, H9_30, H9_58 = 540 * MIN, 570 * MIN, 598 * MIN
H10, H10_05 = 600 * MIN, 605 * MIN


def tag_keys(t):
    return {w[1:].lower() for w in t.payload[1].split() if w.startswith("#")}


def maxlen_def(wa=30 * MIN, ws=60 * MIN):
    """Per-hashtag running maximum of text lengths (overlapping windows)."""

    def f_U(windows, t):
        cur = windows[0].zeta
        n = len(t.payload[1])
        return [n if cur is None else max(cur, n)], ()

    def f_O(windows):
        return ((windows[0].k, windows[0].zeta),)

    return OperatorDef(
        name="maxlen",
        spec=WindowSpec(wa, ws, WT.MULTI),
        f_MK=tag_keys,
        f_U=f_U,
        f_O=f_O,
    )


def make_instance(op, j=0, members=(0,), guard=None, f_mu=None):
    local = InstanceLocal(j=j, members=tuple(members))
    local.f_mu = f_mu or (lambda k: j)
    sigma = SharedState(op, guard=guard)
    out = []
    inst = OperatorInstance(op, local, sigma, out.append)
    return inst, sigma, out


def seed_slot(inst, key, l, zeta):
    slot = inst.sigma.check_create(key, l)
    slot.set_states([zeta])
    inst._index_add(slot.l, key)
    return slot


def snapshot(sigma):
    return {
        (key, slot.l, slot.windows[0].zeta)
        for key in sigma.keys()
        for slot in sigma.slots(key)
    }


class TestGoldenTrace:
    def test_single_step_updates_every_overlapping_window(self):
        inst, sigma, out = make_instance(maxlen_def())
        seed_slot(inst, "pink", H9, 11)
        seed_slot(inst, "pink", H9_30, 11)
        inst.local.W.advance(H9)
        inst.local.rho = H9

        inst.process_sn(Tuple(H9_58, ("C", "hi #red #pink")))

        assert out == []
        assert inst.local.W.value == H9_58
        assert snapshot(sigma) == {
            ("pink", H9, 13),
            ("red", H9, 13),
            ("pink", H9_30, 13),
            ("red", H9_30, 13),
        }

    def test_followup_tuple_expires_the_first_boundary(self):
        inst, sigma, out = make_instance(maxlen_def())
        seed_slot(inst, "pink", H9, 11)
        seed_slot(inst, "pink", H9_30, 11)
        inst.local.W.advance(H9)
        inst.local.rho = H9
        inst.process_sn(Tuple(H9_58, ("C", "hi #red #pink")))

        inst.process_sn(Tuple(H10_05, ("C", "x")))

        assert {(t.tau, t.payload) for t in out} == {
            (H10, ("red", 13)),
            (H10, ("pink", 13)),
        }
        assert snapshot(sigma) == {("pink", H9_30, 13), ("red", H9_30, 13)}

    def test_expiry_is_strict_at_the_boundary(self):
        inst, _, out = make_instance(maxlen_def(wa=10, ws=10))
        inst.process_sn(Tuple(5, ("C", "#a")))
        inst.process_sn(Tuple(10, ("C", "x")))
        assert out == []  # l=0: 0+10 < 10 is false
        inst.process_sn(Tuple(11, ("C", "y")))
        assert [(t.tau, t.payload) for t in out] == [(10, ("a", 2))]


class TestDefaults:
    def test_default_update_appends_to_senders_window(self):
        op = OperatorDef(
            name="keep", spec=WindowSpec(10, 20, WT.SINGLE), I=2,
            f_MK=lambda t: {0},
        )
        slot = Slot(0, 0, 2)
        t = Tuple(5, ("x",), stream=1)
        states, payloads = default_f_U(slot.windows, t)
        assert payloads == ()
        assert states[0] is None and [u.tau for u in states[1]] == [5]
        assert default_f_O(slot.windows) == ()

    def test_default_shift_purges_stale_tuples(self):
        slot = Slot(10, 0, 1)
        slot.set_states([[Tuple(5), Tuple(12), Tuple(19)]])
        states = default_f_S(slot.windows)  # f_S sees the advanced boundary
        assert [u.tau for u in states[0]] == [Tuple(12).tau, Tuple(19).tau]

    def test_state_emptiness_protocol(self):
        assert state_is_empty(None) and state_is_empty([]) and state_is_empty(())
        assert not state_is_empty([1]) and not state_is_empty(7)


class TestForwarding:
    def _op(self):
        return OperatorDef(
            name="fwd", spec=WindowSpec(10, 20, WT.MULTI), f_MK=tag_keys
        )

    def test_same_owner_collapses_duplicates(self):
        class Counter:
            def __init__(self):
                self.n = 0

            def add(self, t, i):
                self.n += 1

        q = [Counter()]
        n = forward_sn(
            Tuple(1, ("C", "#red #pink")), self._op(), lambda k: 0, q, 0
        )
        assert n == 1 and q[0].n == 1

    def test_split_owners_duplicate_once_per_instance(self):
        class Counter:
            def __init__(self):
                self.n = 0

            def add(self, t, i):
                self.n += 1

        q = [Counter(), Counter()]
        owner = {"red": 0, "pink": 1}
        n = forward_sn(
            Tuple(1, ("C", "#red #pink")), self._op(), owner.get, q, 0
        )
        assert n == 2 and q[0].n == 1 and q[1].n == 1

    def test_empty_key_set_forwards_nothing(self):
        q = []
        assert forward_sn(Tuple(1, ("C", "no tags")), self._op(), None, q, 0) == 0

    def test_shared_path_inserts_exactly_once(self):
        class Counter:
            def __init__(self):
                self.n = 0

            def add(self, t, i):
                self.n += 1

        tb = Counter()
        many_keys = Tuple(1, ("C", " ".join(f"#k{i}" for i in range(50))))
        assert forward_vsn(many_keys, tb, 3) == 1
        assert tb.n == 1


class TestPrepareOutTuples:
    def test_right_boundary_becomes_event_time(self):
        slot = Slot(H9, "red", 1)
        (t,) = prepare_out_tuples([("red", 13)], slot, ws=60 * MIN)
        assert t.tau == H10 and t.payload == ("red", 13) and t.kind is Kind.REGULAR

    def test_empty_payloads_make_no_tuples(self):
        assert prepare_out_tuples([], Slot(0, "k", 1), ws=10) == []

    def test_two_payloads_share_the_boundary(self):
        a, b = prepare_out_tuples([(1,), (2,)], Slot(20, "k", 1), ws=10)
        assert a.tau == b.tau == 30


class TestSingleSlidingWindows:
    def _op(self):
        return OperatorDef(
            name="slide",
            spec=WindowSpec(10, 20, WT.SINGLE),
            f_MK=lambda t: {t.payload[0]},
        )

    def test_slot_shifts_while_content_remains(self):
        inst, sigma, _ = make_instance(self._op())
        inst.process_sn(Tuple(5, ("k",)))
        inst.process_sn(Tuple(12, ("k",)))
        inst.process_sn(Tuple(35, ("k",)))
        (slot,) = sigma.slots("k")
        assert slot.l == 20
        assert [u.tau for u in slot.windows[0].zeta] == [35]
        assert inst.local.rho == 20

    def test_slot_removed_once_all_windows_drain(self):
        inst, sigma, _ = make_instance(self._op())
        inst.process_sn(Tuple(5, ("k",)))
        # jump far ahead with a different key: k's slot shifts to empty, dies
        inst.process_sn(Tuple(200, ("other",)))
        assert sigma.slots("k") == ()
        assert [s.l for s in sigma.slots("other")] == [190]

    def test_at_most_one_slot_per_key(self):
        inst, sigma, _ = make_instance(self._op())
        for tau in (3, 9, 17, 24):
            inst.process_sn(Tuple(tau, ("k",)))
        assert len(sigma.slots("k")) == 1


class TestOwnership:
    def test_unowned_keys_only_move_the_watermark(self):
        op = maxlen_def(wa=10, ws=20)
        inst, sigma, out = make_instance(op, j=0, f_mu=lambda k: 1)
        inst.process_sn(Tuple(15, ("C", "#red")))
        assert sigma.keys() == [] and out == []
        assert inst.local.W.value == 15

    def test_writer_guard_flags_concurrent_key_sharing(self):
        guard = WriterGuard()
        guard.enter("k", 0)
        guard.enter("k", 1)
        assert guard.violations == [("k", 0, 1)]
        guard.exit("k", 1)
        guard.enter("q", 0)
        guard.enter("r", 1)
        assert len(guard.violations) == 1


class TestReconfigArming:
    def _control(self, tau, epoch, members=(0, 1), f_mu=None):
        return Tuple(tau, (epoch, members, f_mu or (lambda k: 0)), kind=Kind.CONTROL)

    def test_control_arms_pending_epoch_without_advancing_watermark(self):
        inst, _, _ = make_instance(maxlen_def(wa=10, ws=20))
        inst.process_vsn(Tuple(50, ("C", "#a")))
        inst.process_vsn(self._control(60, epoch=1))
        assert inst.local.W.value == 50
        assert inst.local.gamma == 60
        assert inst.local.epoch_star == 1

    def test_stale_and_duplicate_epochs_are_ignored(self):
        inst, _, _ = make_instance(maxlen_def(wa=10, ws=20))
        inst.process_vsn(self._control(60, epoch=2, members=(0, 1, 2)))
        inst.process_vsn(self._control(70, epoch=2))
        inst.process_vsn(self._control(80, epoch=1))
        assert inst.local.gamma == 60 and inst.local.members_star == (0, 1, 2)

    def test_later_epoch_supersedes_pending_one(self):
        inst, _, _ = make_instance(maxlen_def(wa=10, ws=20))
        inst.process_vsn(self._control(60, epoch=1))
        inst.process_vsn(self._control(65, epoch=3, members=(0, 1, 2, 3)))
        assert inst.local.epoch_star == 3 and inst.local.gamma == 65

    def test_trigger_fires_once_watermark_passes_gamma(self):
        inst, _, _ = make_instance(maxlen_def(wa=10, ws=20))
        fired = []

        def on_trigger(instance, trigger):
            fired.append((instance.local.W.value, trigger.tau))
            return 1, (0,), inst.local.f_mu

        inst.process_vsn(self._control(60, epoch=1))
        inst.process_vsn(Tuple(60, ("C", "x")), on_trigger)  # W == gamma: no
        assert fired == []
        inst.process_vsn(Tuple(61, ("C", "x")), on_trigger)
        assert fired == [(61, 61)]
        assert inst.local.epoch == 1 and inst.local.gamma == math.inf
        inst.process_vsn(Tuple(99, ("C", "x")), on_trigger)  # armed once only
        assert fired == [(61, 61)]

    def test_adoption_rebuilds_ownership_and_rho(self):
        op = maxlen_def(wa=10, ws=1000)
        mapping0 = {"a": 0, "b": 1}
        inst, sigma, _ = make_instance(op, j=0, f_mu=mapping0.get)
        other = OperatorInstance(
            op, InstanceLocal(j=1, f_mu=mapping0.get), sigma, lambda t: None
        )
        inst.process_vsn(Tuple(50, ("C", "#a")))
        other.process_vsn(Tuple(120, ("C", "#b")))
        assert set(inst._by_boundary) == set(window_left_boundaries(50, op.spec))
        # epoch 1 moves everything to instance 0
        inst.adopt_epoch(1, (0,), lambda k: 0)
        assert inst.local.rho == sigma.min_l() == 0
        expected = set(window_left_boundaries(50, op.spec)) | set(
            window_left_boundaries(120, op.spec)
        )
        assert set(inst._by_boundary) == expected


class TestCloseSweep:
    def test_close_flushes_every_remaining_window_once(self):
        inst, sigma, out = make_instance(maxlen_def(wa=10, ws=20))
        inst.process_sn(Tuple(5, ("C", "#a")))
        inst.process_sn(Tuple(15, ("C", "#b")))
        inst.close()
        assert sigma.keys() == []
        taus = [t.tau for t in out]
        assert taus == sorted(taus)
        # tau=5 lives in [0,20) only (negative boundaries are clamped);
        # tau=15 lives in [0,20) and [10,30)
        assert {(t.tau, t.payload) for t in out} == {
            (20, ("a", 2)),
            (20, ("b", 2)),
            (30, ("b", 2)),
        }
        before = len(out)
        inst.close()
        assert len(out) == before

    def test_close_is_a_no_op_when_disabled(self):
        op = maxlen_def(wa=10, ws=20)
        op.flush_on_close = False
        inst, sigma, out = make_instance(op)
        inst.process_sn(Tuple(5, ("C", "#a")))
        inst.close()
        assert out == [] and len(sigma.slots("a")) == 1


class BruteForceAggregate:
    """Independent restatement: dict of (key, boundary) -> max length, expired
    by direct scan, no slots/rho bookkeeping."""

    def __init__(self, wa, ws):
        self.wa, self.ws = wa, ws
        self.live = {}
        self.W = 0
        self.out = []

    def feed(self, tau, text):
        self.W = max(self.W, tau)
        for (k, l) in sorted(self.live, key=repr):
            if l + self.ws < self.W:
                self.out.append((l + self.ws, (k, self.live.pop((k, l)))))
        keys = {w[1:].lower() for w in text.split() if w.startswith("#")}
        n = len(text)
        l = (tau // self.wa) * self.wa
        while l >= 0 and l + self.ws > tau:
            for k in keys:
                cur = self.live.get((k, l))
                self.live[(k, l)] = n if cur is None else max(cur, n)
            l -= self.wa

    def final_state(self):
        return {(k, l, v) for (k, l), v in self.live.items()}


class TestAgainstBruteForce:
    @pytest.mark.parametrize("seed", [5, 6, 7])
    def test_random_streams_match_reference(self, seed):
        rng = random.Random(seed)
        wa, ws = 10, 40
        op = maxlen_def(wa=wa, ws=ws)
        inst, sigma, out = make_instance(op)
        ref = BruteForceAggregate(wa, ws)
        vocab = ["#a", "#b", "#c", "#d", "plain"]
        tau = 0
        for _ in range(500):
            tau += rng.randrange(0, 12)
            words = rng.sample(vocab, rng.randrange(1, 4))
            text = "x" * rng.randrange(0, 9) + " " + " ".join(words)
            inst.process_sn(Tuple(tau, ("C", text)))
            ref.feed(tau, text)
        assert snapshot(sigma) == ref.final_state()
        got = sorted((t.tau, t.payload) for t in out)
        assert got == sorted(ref.out)
        taus = [t.tau for t in out]
        assert taus == sorted(taus)  # per-instance emissions never regress
