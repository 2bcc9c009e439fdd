"""End-to-end acceptance suite.

Nine checks covering the package's externally stated guarantees, one test
per guarantee so `pytest -v` yields a one-line pass/fail roster:

 1. the documented single-step window trace reaches the exact final state
    under both execution styles;
 2. shared-nothing and shared-state runs produce identical output multisets
    (and match a single-threaded oracle) across operators and instance counts;
 3. the timestamp-merging buffer delivers identical, tau-sorted,
    exactly-once transcripts to every reader under randomized interleavings;
 4. scripted elastic reconfigurations (2 -> 4 -> 1) preserve outputs, writer
    exclusivity, per-worker epoch adoption, and trigger-ordered first outputs;
 5. shared-buffer ingress inserts each tuple once while shared-nothing
    forwarding duplicates multi-key tuples;
 6. the default band predicate's empirical selectivity matches its closed form;
 7. provisioning completes fast while the operator is under load;
 8. window boundary arithmetic matches brute-force enumeration, and every
    emission observed in this module postdates the inputs folded into it;
 9. the threshold controller's decisions match hand-derived closed forms.

Tests that can be slow assert their own wall-clock envelope.
"""

import heapq
import random
import statistics
import threading
import time
from collections import Counter, deque

import pytest

import vsnstream.operator as operator_mod
from vsnstream.bench import (
    RatePhase,
    band_selectivity_exact,
    canonical_digest,
    empirical_band_selectivity,
    gen_join_stream,
    gen_text_stream,
)
from vsnstream.core import Tuple, WindowSpec, WT, window_left_boundaries
from vsnstream.operator import (
    InstanceLocal,
    OperatorInstance,
    SharedState,
    WriterGuard,
)
from vsnstream.operators import (
    band_predicate,
    hashtag_maxlen_op,
    paircount_op,
    passthrough_op,
    scalejoin_op,
    wordcount_op,
)
from vsnstream.runtime import SNExecutor, setup, threshold_controller_step
from vsnstream.scalegate import ScaleGate

MIN_MS = 60_000
H9, H9_30, H9_58 = 540 * MIN_MS, 570 * MIN_MS, 598 * MIN_MS


# ---- emission-order probe (active for the whole module) ---------------------


class EmissionProbe:
    """Records every emission batch's (output tau, max folded input tau) and
    keeps the pairs where the output does not postdate its inputs."""

    def __init__(self):
        self.violations = deque()
        self.batches = 0  # racy under concurrency; only ever tested for > 0

    def __call__(self, out_tau, max_folded_tau):
        self.batches += 1
        if out_tau <= max_folded_tau:
            self.violations.append((out_tau, max_folded_tau))


@pytest.fixture(scope="module", autouse=True)
def emission_probe():
    probe = EmissionProbe()
    operator_mod.emission_check = probe
    yield probe
    operator_mod.emission_check = None


# ---- shared helpers ----------------------------------------------------------


def clone(stream):
    """Fresh tuple objects so each run stamps its own arrival/key caches."""
    return [Tuple(t.tau, t.payload, stream=t.stream) for t in stream]


def merged(streams):
    """(tuple, source) pairs over per-source lists, in global tau order."""

    def pairs(src, ts):
        for t in ts:
            yield t, src

    return heapq.merge(
        *(pairs(i, ts) for i, ts in enumerate(streams)),
        key=lambda p: (p[0].tau, p[1]),
    )


def run_reference(op, streams):
    """Single-threaded oracle: one instance owning every key, no buffers."""
    out = []
    inst = OperatorInstance(
        op, InstanceLocal(j=0, f_mu=lambda k: 0), SharedState(op), out.append
    )
    for t, _src in merged(streams):
        inst.process_sn(t)
    inst.close()
    return out


def run_sn(op, m, streams):
    return SNExecutor(op, m).run(merged(streams))


def run_vsn(op, m, streams):
    eng = setup(op, m, m)
    for t, src in merged(streams):
        eng.add(t, src)
    eng.close()
    return eng.drain_outputs()


def wait_until(cond, timeout_s, msg):
    deadline = time.monotonic() + timeout_s
    while not cond():
        if time.monotonic() >= deadline:
            raise AssertionError(msg)
        time.sleep(1e-3)


# ---- 1. documented trace ------------------------------------------------------


def test_01_documented_trace_exact_final_state():
    """One tagged message at 09:58 against two seeded 'pink' windows must
    leave exactly four windows at length 13 and the watermark at 09:58,
    identically for the shared-nothing and shared-state entry points."""
    t0 = time.monotonic()
    expected = {
        ("pink", H9, 13),
        ("red", H9, 13),
        ("pink", H9_30, 13),
        ("red", H9_30, 13),
    }
    for entry in ("sn", "vsn"):
        op = hashtag_maxlen_op()  # 30 min advance, 60 min size
        local = InstanceLocal(j=0, f_mu=lambda k: 0)
        sigma = SharedState(op)
        out = []
        inst = OperatorInstance(op, local, sigma, out.append)
        for l in (H9, H9_30):
            slot = sigma.check_create("pink", l)
            slot.set_states([11])
            inst._index_add(slot.l, "pink")
        local.W.advance(H9)
        local.rho = H9
        t = Tuple(H9_58, ("C", "hi #red #pink"))
        if entry == "sn":
            inst.process_sn(t)
        else:
            inst.process_vsn(t)
        state = {
            (key, slot.l, slot.windows[0].zeta)
            for key in sigma.keys()
            for slot in sigma.slots(key)
        }
        assert state == expected, f"{entry}: final window state diverged"
        assert local.W.value == H9_58
        assert out == []  # nothing expires before 10:00
    assert time.monotonic() - t0 < 1


# ---- 2. cross-mode output equivalence -----------------------------------------


def test_02_output_equivalence_across_modes_and_counts():
    """Every bundled operator, fed 10^4 seeded tuples, must produce the same
    output multiset under shared-nothing and shared-state execution with
    1, 2, and 4 instances, all equal to the single-threaded oracle."""
    t0 = time.monotonic()
    text = list(
        gen_text_stream(202, vocab=80, words_per_tuple=12, phases=(RatePhase(10, 1000),))
    )
    left = list(gen_join_stream(202, 0, (RatePhase(20, 250),)))
    right = list(gen_join_stream(202, 1, (RatePhase(20, 250),)))
    assert len(text) == 10_000
    assert len(left) + len(right) == 10_000
    wide = band_predicate(400)

    cases = [
        ("hashtag-maxlen", lambda: hashtag_maxlen_op(wa=1000, ws=2000), [text]),
        ("wordcount", lambda: wordcount_op(wa=1000, ws=2000), [text]),
        ("paircount-near", lambda: paircount_op(3, wa=2000, ws=4000), [text]),
        ("paircount-mid", lambda: paircount_op(10, wa=2000, ws=2000), [text]),
        ("paircount-all", lambda: paircount_op(None, wa=2000, ws=2000), [text]),
        (
            "scalejoin",
            lambda: scalejoin_op(keys=32, predicate=wide, ws=200),
            [left, right],
        ),
        ("passthrough", lambda: passthrough_op(n=4, delta=1), [left, right]),
    ]

    digests = {}
    for name, factory, streams in cases:
        ref_out = run_reference(factory(), [clone(s) for s in streams])
        assert ref_out, f"{name}: oracle produced no output"
        ref = canonical_digest(ref_out)
        digests[name] = ref
        for m in (1, 2, 4):
            d_sn = canonical_digest(run_sn(factory(), m, [clone(s) for s in streams]))
            assert d_sn == ref, f"{name}: shared-nothing m={m} diverged from oracle"
            d_vsn = canonical_digest(run_vsn(factory(), m, [clone(s) for s in streams]))
            assert d_vsn == ref, f"{name}: shared-state m={m} diverged from oracle"

    # the three pair-distance bounds must be genuinely different workloads
    assert len({digests[k] for k in ("paircount-near", "paircount-mid", "paircount-all")}) == 3
    assert time.monotonic() - t0 < 120


# ---- 3. merge-buffer stress ----------------------------------------------------


def test_03_merge_buffer_ordering_under_stress():
    """4 sources x 4 readers x 10^5 tuples x 20 seeds: every reader sees the
    identical transcript, globally tau-sorted, exactly once, and no tuple is
    released while a slower source could still insert an earlier one."""
    t0 = time.monotonic()
    N_SOURCES = N_READERS = 4
    N_TUPLES = 100_000
    SENTINEL = 10**15

    def check_transcripts(added, transcripts):
        base = transcripts[0]
        assert len(base) == len(added)
        base_payloads = [t.payload for t in base]
        for tr in transcripts[1:]:
            assert [t.payload for t in tr] == base_payloads  # identical order
        assert [t.tau for t in base] == sorted(t.tau for t in added)  # sorted
        assert {t.payload for t in base} == {t.payload for t in added}  # once

    def interleaved_seed(seed):
        rng = random.Random(1000 + seed)
        gate = ScaleGate(range(N_SOURCES), range(N_READERS), seed=seed)
        taus = [0] * N_SOURCES
        added = []
        transcripts = [[] for _ in range(N_READERS)]

        def feed(src):
            taus[src] += rng.randint(0, 3)
            t = Tuple(taus[src], (src, len(added)))
            gate.add(t, src)
            added.append(t)

        # until every source has inserted, nothing may be ready
        for src in range(N_SOURCES - 1):
            feed(src)
            assert all(gate.get(r) is None for r in range(N_READERS))

        drain_p = rng.uniform(0.3, 0.7)
        get = gate.get
        while len(added) < N_TUPLES:
            if rng.random() < drain_p:
                for r in range(N_READERS):
                    for _ in range(rng.randrange(1, 8)):
                        t = get(r)
                        if t is None:
                            break
                        transcripts[r].append(t)
                        if (len(transcripts[r]) & 63) == 0:
                            # a reader never outruns the slowest source
                            assert t.tau <= min(taus)
            else:
                feed(rng.randrange(N_SOURCES))

        for src in range(N_SOURCES):
            gate.add(Tuple(SENTINEL, ("end", src)), src)
        for r in range(N_READERS):
            while True:
                t = get(r)
                if t is None:
                    break
                if t.tau < SENTINEL:
                    transcripts[r].append(t)
        check_transcripts(added, transcripts)

    def threaded_seed(seed):
        rng = random.Random(2000 + seed)
        gate = ScaleGate(range(N_SOURCES), range(N_READERS), seed=seed)
        per_source = []
        for src in range(N_SOURCES):
            tau, ts = 0, []
            for i in range(N_TUPLES // N_SOURCES):
                tau += rng.randint(0, 3)
                ts.append(Tuple(tau, (src, src * N_TUPLES + i)))
            per_source.append(ts)
        added = [t for ts in per_source for t in ts]
        transcripts = [[] for _ in range(N_READERS)]
        deadline = time.monotonic() + 30

        def adder(src):
            for t in per_source[src]:
                gate.add(t, src)
            gate.add(Tuple(SENTINEL, ("end", src)), src)

        def reader(r):
            sink = transcripts[r]
            while len(sink) < len(added) and time.monotonic() < deadline:
                t = gate.get(r)
                if t is None:
                    time.sleep(1e-5)
                elif t.tau < SENTINEL:
                    sink.append(t)

        threads = [
            threading.Thread(target=adder, args=(s,)) for s in range(N_SOURCES)
        ] + [threading.Thread(target=reader, args=(r,)) for r in range(N_READERS)]
        for th in threads:
            th.start()
        for th in threads:
            th.join(timeout=35)
        check_transcripts(added, transcripts)

    for seed in range(18):
        interleaved_seed(seed)
    for seed in (18, 19):
        threaded_seed(seed)
    assert time.monotonic() - t0 < 60


# ---- 4. elastic reconfiguration -----------------------------------------------


def test_04_elastic_reconfiguration_preserves_outputs():
    """Scripted 2 -> 4 -> 1 resizes mid-stream on the sliding join (5 s
    windows in event time) must match a static single-instance run, with
    zero writer-exclusivity violations, each pool worker adopting each epoch
    exactly once, and newly provisioned workers' first outputs strictly
    after the shared trigger point."""
    t0 = time.monotonic()
    WS = 5_000
    SECONDS = 24
    phases = (RatePhase(SECONDS, 100),)

    def factory():
        return scalejoin_op(keys=24, predicate=band_predicate(500), ws=WS)

    left = list(gen_join_stream(404, 0, phases))
    right = list(gen_join_stream(404, 1, phases))

    ref = canonical_digest(SNExecutor(factory(), 1).run(merged([clone(left), clone(right)])))

    guard = WriterGuard()
    eng = setup(factory(), 2, 4, guard=guard)
    first_out = {}
    inner_add = eng.tb_out.add

    def spy_add(t, src):
        if src not in first_out:
            first_out[src] = t.tau
        return inner_add(t, src)

    eng.tb_out.add = spy_add

    by_second = {}
    for t, src in merged([clone(left), clone(right)]):
        by_second.setdefault(t.tau // 1000, []).append((t, src))

    trigger_tau = None
    for sec in range(SECONDS):
        if sec == 8:
            eng.resize(4)
        if sec == 16:
            wait_until(
                lambda: not eng.reconfig_in_flight, 30, "first resize never settled"
            )
            assert eng.epoch == 1 and eng.active_instances == 4
            trigger_tau = eng.trigger_tau
            assert trigger_tau is not None
            eng.resize(1)
        for t, src in by_second.get(sec, ()):
            eng.add(t, src)
    eng.close()
    outs = eng.drain_outputs()

    assert outs, "elastic run produced no output"
    assert canonical_digest(outs) == ref, "elastic run diverged from static reference"
    assert guard.violations == [], f"writer exclusivity violated: {guard.violations[:3]}"
    assert eng.epoch == 2 and eng.active_instances == 1
    # every pool worker adopts both switches exactly once
    assert Counter(eng.epoch_log) == Counter(
        {(j, e): 1 for j in range(4) for e in (1, 2)}
    )
    # workers provisioned at the first switch emit only past the trigger point
    for j in (2, 3):
        assert j in first_out, f"worker {j} never emitted"
        assert first_out[j] > trigger_tau
    assert time.monotonic() - t0 < 120


# ---- 5. ingress insertion economy ----------------------------------------------


def test_05_shared_ingress_inserts_each_tuple_once():
    """On the unbounded pair-counting workload with 4 instances, the shared
    buffer receives exactly one insertion per input tuple, while
    shared-nothing forwarding enqueues at least twice per tuple."""
    t0 = time.monotonic()
    stream = list(
        gen_text_stream(55, vocab=100, words_per_tuple=12, phases=(RatePhase(6, 500),))
    )
    n = len(stream)
    assert n == 3000

    eng = setup(paircount_op(None, wa=1000, ws=2000), 4, 4)
    inserts = [0]
    inner_add = eng.tb_in.add

    def spy_add(t, src):
        inserts[0] += 1
        return inner_add(t, src)

    eng.tb_in.add = spy_add
    for t in clone(stream):
        eng.add(t, 0)
    eng.close()
    assert eng.drain_outputs()
    assert inserts[0] == n, "shared ingress must insert exactly once per tuple"
    assert eng.metrics()["input_tuples"] == n

    sn = SNExecutor(paircount_op(None, wa=1000, ws=2000), 4)
    sn.run((t, 0) for t in clone(stream))
    assert sn.duplicated >= 2 * n, (
        f"multi-key forwarding should duplicate: {sn.duplicated} < {2 * n}"
    )
    assert time.monotonic() - t0 < 30


# ---- 6. band selectivity ---------------------------------------------------------


def test_06_band_predicate_selectivity():
    """10^7 uniform random evaluations of the +/-10 band predicate land
    within 20% of the exact closed form (~4.41e-6)."""
    t0 = time.monotonic()
    exact = band_selectivity_exact()
    assert abs(exact - 4.41e-6) <= 0.005e-6  # closed form rounds to 4.41e-6
    emp = empirical_band_selectivity(seed=2, n=10**7)
    assert abs(emp - exact) <= 0.20 * exact, f"empirical {emp:.3e} vs exact {exact:.3e}"
    assert time.monotonic() - t0 < 30


# ---- 7. provisioning latency ------------------------------------------------------


def test_07_provisioning_completes_quickly_under_load():
    """Growing 2 -> 4 while the sliding join is busy: the span from the
    first worker entering the switch to the last adopting it stays under
    500 ms median across 10 trials."""
    durations = []
    for trial in range(10):
        op = scalejoin_op(keys=16, predicate=band_predicate(500), ws=1500)
        eng = setup(op, 2, 4, seed=trial)
        left = list(gen_join_stream(700 + trial, 0, (RatePhase(8, 150),)))
        right = list(gen_join_stream(700 + trial, 1, (RatePhase(8, 150),)))
        fed = 0
        for t, src in merged([left, right]):
            if fed == 600:  # two virtual seconds in: grow while loaded
                eng.resize(4)
            eng.add(t, src)
            fed += 1
        wait_until(
            lambda: eng.reconfig_history, 30, f"trial {trial}: switch never completed"
        )
        eng.close()
        eng.drain_outputs()
        (epoch, duration_ms), = eng.reconfig_history
        assert epoch == 1
        durations.append(duration_ms)
    med = statistics.median(durations)
    assert med < 500, f"median switch took {med:.1f} ms (trials: {durations})"


# ---- 8. window arithmetic + emission order ----------------------------------------


def test_08_window_arithmetic_and_emission_order(emission_probe):
    """Boundary enumeration equals brute force on 10^4 random window shapes,
    and every emission recorded by the module-wide probe postdates all
    inputs folded into its window."""
    t0 = time.monotonic()

    def brute(tau, wa, ws):
        start = max(0, tau - ws - 2 * wa)
        start -= start % wa
        return [l for l in range(start, tau + 1, wa) if l <= tau < l + ws]

    rng = random.Random(808)
    for _ in range(10_000):
        wa = rng.randint(1, 1000)
        ws = rng.randint(wa, wa * 64)
        tau = rng.randint(0, 2 * ws) if rng.random() < 0.5 else rng.randint(0, 10**9)
        spec = WindowSpec(wa, ws, WT.MULTI)
        assert window_left_boundaries(tau, spec) == brute(tau, wa, ws), (tau, wa, ws)
    for tau, wa, ws in [
        (0, 1, 1),
        (0, 5, 5),
        (4, 5, 5),
        (5, 5, 5),
        (999, 1000, 1000),
        (1000, 1000, 4000),
        (10**9, 7, 7),
        (3, 2, 9),
    ]:
        spec = WindowSpec(wa, ws, WT.MULTI)
        assert window_left_boundaries(tau, spec) == brute(tau, wa, ws), (tau, wa, ws)

    # drive one small run so the probe has data even when this test runs alone
    outs = SNExecutor(wordcount_op(wa=500, ws=1000), 2).run(
        (t, 0)
        for t in clone(
            list(gen_text_stream(9, vocab=50, words_per_tuple=6, phases=(RatePhase(2, 200),)))
        )
    )
    assert outs
    assert emission_probe.batches > 0
    assert not emission_probe.violations, (
        f"emissions at or before their inputs: {list(emission_probe.violations)[:3]}"
    )
    assert time.monotonic() - t0 < 10


# ---- 9. controller closed forms ------------------------------------------------------


def test_09_threshold_controller_closed_forms():
    """Resize decisions match hand-derived values: grow to
    ceil(current * average / target) when the average exceeds the upper
    bound (at least one more, capped), shrink to the same projection when it
    falls below the lower bound (floor one), hold inside the band."""
    t0 = time.monotonic()
    step = threshold_controller_step

    # overload: ceil(2 * 0.95 / 0.7) = ceil(2.714) = 3
    assert step([0.95, 0.95], 8).members == (0, 1, 2)
    # ceil(6 * 1.0 / 0.7) = 9, capped at 8
    assert step([1.0] * 6, 8).members == tuple(range(8))
    # ceil(2 * 1.0 / 0.7) = ceil(2.857) = 3
    assert step([1.0, 1.0], 8).members == (0, 1, 2)
    # ceil(4 * 0.91 / 0.7) = ceil(5.2) = 6
    assert step([0.91] * 4, 8).members == tuple(range(6))
    # overloaded but already at the cap: hold
    assert step([0.95, 0.95], 2) is None

    # underload: ceil(4 * 0.2 / 0.7) = ceil(1.143) = 2
    assert step([0.2] * 4, 8).members == (0, 1)
    # ceil(1 * 0.01 / 0.7) = 1 == current: hold
    assert step([0.01], 8) is None
    # avg 0.2: ceil(2 * 0.2 / 0.7) = 1
    assert step([0.3, 0.1], 8).members == (0,)

    # inside the band, and exactly on the strict thresholds: hold
    assert step([0.7, 0.7], 8) is None
    assert step([0.9, 0.9], 8) is None
    assert step([0.45], 8) is None
    assert step([], 8) is None

    # custom band: ceil(2 * 0.5 / 0.4) = 3
    assert step([0.5, 0.5], 8, lower=0.2, target=0.4, upper=0.45).members == (0, 1, 2)
    assert time.monotonic() - t0 < 1
