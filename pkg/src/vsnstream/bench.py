"""Benchmark harness and CLI.

Synthetic workload generators (text, numeric join sides, trades), phased
rate control with a per-second token bucket, engine-vs-isolated comparison
runs, per-second metrics rows, and an order-insensitive output digest for
equivalence checks.

Time handling: event time always advances per the phase schedule.  In real
time mode ingress threads pace tuples against the wall clock and a sampler
thread emits one metrics row per second; with ``virtual_time`` the same
schedule is fed as fast as the engine accepts it and rows are built per
*virtual* second, so window-relative behavior reproduces exactly, faster
than real time.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import heapq
import itertools
import random
import re
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .core import Schema, Tuple
from .operators import (
    REGISTRY,
    hedge_predicate,
    make_operator,
    passthrough_op,
    scalejoin_op,
)
from .runtime import (
    Engine,
    EngineBusyError,
    SNExecutor,
    ThresholdController,
    setup,
)

# ---- rate schedule ---------------------------------------------------------------


@dataclass(frozen=True)
class RatePhase:
    """A constant-rate segment of the input schedule."""

    duration_s: int
    rate_tps: int

    def __post_init__(self):
        if self.duration_s < 1:
            raise ValueError("phase duration must be at least 1s")
        if self.rate_tps < 0:
            raise ValueError("phase rate must be >= 0")


DEFAULT_PHASES = (RatePhase(10, 1000),)


def schedule_taus(phases: Iterable[RatePhase]) -> Iterator[int]:
    """Event times (ms) for the phase schedule: each second carries its
    phase's rate in tuples, spread evenly across the second."""
    base = 0
    for ph in phases:
        for _ in range(ph.duration_s):
            r = ph.rate_tps
            for i in range(r):
                yield base + (i * 1000) // r
            base += 1000
    return


def total_seconds(phases: Iterable[RatePhase]) -> int:
    return sum(ph.duration_s for ph in phases)


# ---- payload schemas -------------------------------------------------------------

TWEET_SCHEMA = Schema("tweet", (("user", "str"), ("text", "str")))
JOIN_LEFT_SCHEMA = Schema("join-left", (("x", "int"), ("y", "float")))
JOIN_RIGHT_SCHEMA = Schema(
    "join-right",
    (("a", "int"), ("b", "float"), ("c", "float"), ("d", "bool")),
)
TRADE_SCHEMA = Schema("trade", (("id", "str"), ("price", "float"), ("avg", "float")))


def schemas_for(op_name: str) -> tuple:
    """Input schema per source for a bundled workload."""
    if op_name in ("hashtag-maxlen", "wordcount", "paircount"):
        return (TWEET_SCHEMA,)
    if op_name == "hedge":
        return (TRADE_SCHEMA, TRADE_SCHEMA)
    if op_name in ("scalejoin", "passthrough"):
        return (JOIN_LEFT_SCHEMA, JOIN_RIGHT_SCHEMA)
    raise ValueError(f"no schema for workload {op_name!r}")


# ---- generators ----------------------------------------------------------------


def gen_join_stream(
    seed: int, side: int, phases: Iterable[RatePhase] = DEFAULT_PHASES
) -> Iterator[Tuple]:
    """Numeric join-side stream; the first two fields are uniform over
    [1, 10000] on both sides, so band-join selectivity has a closed form."""
    rng = random.Random(f"join:{seed}:{side}")
    for tau in schedule_taus(phases):
        if side == 0:
            payload = (rng.randint(1, 10000), float(rng.randint(1, 10000)))
        else:
            payload = (
                rng.randint(1, 10000),
                float(rng.randint(1, 10000)),
                rng.uniform(1.0, 10000.0),
                rng.random() < 0.5,
            )
        yield Tuple(tau, payload, stream=side)


def gen_text_stream(
    seed: int,
    vocab: int = 1000,
    words_per_tuple: int = 10,
    phases: Iterable[RatePhase] = DEFAULT_PHASES,
    hashtag_fraction: float = 0.2,
) -> Iterator[Tuple]:
    """Synthetic message stream: each tuple carries words_per_tuple distinct
    words drawn rank-weighted (weight 1/rank) from the vocabulary, a fraction
    of them marked as hashtags."""
    if not 0 < words_per_tuple <= vocab:
        raise ValueError("need 0 < words_per_tuple <= vocab")
    rng = random.Random(f"text:{seed}")
    words = [f"w{i:04d}" for i in range(vocab)]
    cum = list(itertools.accumulate(1.0 / (r + 1) for r in range(vocab)))
    for tau in schedule_taus(phases):
        chosen = []
        seen = set()
        while len(chosen) < words_per_tuple:
            for w in rng.choices(words, cum_weights=cum, k=words_per_tuple):
                if w not in seen:
                    seen.add(w)
                    chosen.append(w)
                    if len(chosen) == words_per_tuple:
                        break
        toks = [
            f"#{w}" if rng.random() < hashtag_fraction else w for w in chosen
        ]
        yield Tuple(tau, (f"user{rng.randrange(100)}", " ".join(toks)), stream=0)


def gen_trades_stream(
    seed: int,
    companies: int = 10,
    side: int = 0,
    phases: Optional[Iterable[RatePhase]] = None,
) -> Iterator[Tuple]:
    """Synthetic trade stream: (id, price, average) with prices wandering
    around a slowly drifting per-company average.  Without an explicit phase
    schedule the rate is bursty — redrawn uniformly from [0, 8000] t/s each
    second, indefinitely."""
    rng = random.Random(f"trades:{seed}:{side}")
    avgs = [rng.uniform(50.0, 500.0) for _ in range(companies)]

    def taus():
        if phases is not None:
            yield from schedule_taus(phases)
            return
        for s in itertools.count():
            r = rng.randint(0, 8000)
            for i in range(r):
                yield s * 1000 + (i * 1000) // r

    for tau in taus():
        cid = rng.randrange(companies)
        avgs[cid] *= 1.0 + rng.uniform(-0.001, 0.001)
        price = avgs[cid] * (1.0 + rng.uniform(-0.05, 0.05))
        yield Tuple(tau, (f"C{cid}", price, avgs[cid]), stream=side)


# ---- selectivity ------------------------------------------------------------------


def band_selectivity_exact(width: int = 10, lo: int = 1, hi: int = 10000) -> float:
    """Closed-form probability that two uniform integer points on
    [lo, hi]^2 fall within the +/-width band on both axes."""
    n = hi - lo + 1
    per_axis = (n * (2 * width + 1) - width * (width + 1)) / (n * n)
    return per_axis * per_axis


def empirical_band_selectivity(
    seed: int = 0,
    n: int = 10_000_000,
    width: int = 10,
    lo: int = 1,
    hi: int = 10000,
    chunk: int = 2_000_000,
) -> float:
    """Monte Carlo estimate of the band-join match probability over n random
    cross-stream comparisons (vectorized, chunked)."""
    rng = np.random.default_rng(seed)
    hits = 0
    left = n
    while left > 0:
        c = min(chunk, left)
        left -= c
        x1 = rng.integers(lo, hi + 1, c)
        y1 = rng.integers(lo, hi + 1, c)
        x2 = rng.integers(lo, hi + 1, c)
        y2 = rng.integers(lo, hi + 1, c)
        hits += int(
            np.count_nonzero(
                (np.abs(x1 - x2) <= width) & (np.abs(y1 - y2) <= width)
            )
        )
    return hits / n


# ---- digest ----------------------------------------------------------------------


def canonical_digest(tuples: Iterable[Tuple]) -> str:
    """Order-insensitive digest of an output multiset: sort the canonical
    text of every tuple, hash the concatenation."""
    lines = sorted(f"{t.tau}\t{t.payload!r}" for t in tuples)
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode())
        h.update(b"\n")
    return h.hexdigest()


# ---- metrics ----------------------------------------------------------------------

CSV_HEADER = (
    "wallclock_s",
    "input_rate",
    "throughput",
    "latency_avg_ms",
    "latency_p99_ms",
    "active_instances",
    "epoch",
    "event",
)


@dataclass
class MetricsRow:
    wallclock_s: int
    input_rate: int
    throughput: int
    latency_avg_ms: Optional[float]
    latency_p99_ms: Optional[float]
    active_instances: int
    epoch: int
    event: str = ""

    def csv_row(self) -> list:
        def num(v):
            return "" if v is None else f"{v:.3f}"

        return [
            self.wallclock_s,
            self.input_rate,
            self.throughput,
            num(self.latency_avg_ms),
            num(self.latency_p99_ms),
            self.active_instances,
            self.epoch,
            self.event,
        ]


def write_csv(path: str, rows: Sequence[MetricsRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow(row.csv_row())


def percentile(values: Sequence[float], q: float) -> Optional[float]:
    if not values:
        return None
    ordered = sorted(values)
    idx = min(len(ordered) - 1, max(0, int(len(ordered) * q) - 1))
    return ordered[idx]


# ---- configuration ---------------------------------------------------------------

KNOWN_OPS = tuple(sorted(REGISTRY)) + ("hedge",)


@dataclass
class BenchConfig:
    op: str = "wordcount"
    mode: str = "vsn"
    instances: int = 2
    max_instances: Optional[int] = None
    wa_ms: Optional[int] = None
    ws_ms: Optional[int] = None
    wt: Optional[str] = None
    phases: tuple = DEFAULT_PHASES
    reconfig: tuple = ()  # ((at_s, count), ...)
    controller: str = "none"
    thresholds: tuple = (0.45, 0.70, 0.90)
    seed: int = 0
    csv_path: Optional[str] = None
    virtual_time: bool = False
    replay: Optional[str] = None


def validate_config(cfg: BenchConfig) -> None:
    if cfg.op not in KNOWN_OPS:
        raise ValueError(f"unknown workload {cfg.op!r}; available: {', '.join(KNOWN_OPS)}")
    if cfg.mode not in ("sn", "vsn"):
        raise ValueError(f"unknown mode {cfg.mode!r}; available: sn, vsn")
    if cfg.instances < 1:
        raise ValueError("need at least one instance")
    if not cfg.phases and not cfg.replay:
        raise ValueError("empty phase schedule")
    for at_s, count in cfg.reconfig:
        if at_s < 0 or count < 1:
            raise ValueError(f"bad reconfiguration step {at_s}:{count}")
    seconds = [at_s for at_s, _ in cfg.reconfig]
    if len(set(seconds)) != len(seconds):
        raise ValueError("reconfiguration steps must use distinct seconds")
    if cfg.mode == "sn" and (cfg.reconfig or cfg.controller != "none"):
        raise ValueError("reconfiguration requires vsn mode")
    if cfg.controller not in ("none", "threshold"):
        raise ValueError(f"unknown controller {cfg.controller!r}")
    lo, target, hi = cfg.thresholds
    if not 0 <= lo < target < hi:
        raise ValueError("thresholds must satisfy 0 <= lower < target < upper")
    pool = _pool_size(cfg)
    if cfg.instances > pool:
        raise ValueError("instances exceeds the worker pool (--max)")
    for _, count in cfg.reconfig:
        if count > pool:
            raise ValueError("reconfiguration target exceeds the worker pool (--max)")


def _pool_size(cfg: BenchConfig) -> int:
    if cfg.max_instances is not None:
        return cfg.max_instances
    return max([cfg.instances, *(count for _, count in cfg.reconfig)], default=cfg.instances)


def build_operator(cfg: BenchConfig):
    # The joins evict stored tuples at millisecond granularity regardless of
    # --wa, and the pass-through forwards at its own delta; for those, only
    # --ws (the matching horizon / forwarding delay) is meaningful.
    if cfg.op == "hedge":
        op = scalejoin_op(
            keys=1000,
            predicate=hedge_predicate(),
            ws=cfg.ws_ms or 600_000,
            name="hedge",
        )
    elif cfg.op == "scalejoin":
        op = scalejoin_op(ws=cfg.ws_ms) if cfg.ws_ms else scalejoin_op()
    elif cfg.op == "passthrough":
        op = passthrough_op(n=cfg.instances, delta=cfg.ws_ms or 1)
    else:
        kw = {}
        if cfg.wa_ms is not None:
            kw["wa"] = cfg.wa_ms
        if cfg.ws_ms is not None:
            kw["ws"] = cfg.ws_ms
        op = make_operator(cfg.op, **kw)
    if cfg.wt is not None and cfg.wt != op.spec.wt.name.lower():
        raise ValueError(
            f"workload {cfg.op!r} pins --wt {op.spec.wt.name.lower()}"
        )
    return op


def build_streams(cfg: BenchConfig) -> list:
    """One tau-ordered tuple iterator per input source."""
    if cfg.replay is not None:
        return read_replay(cfg.replay, cfg.op)
    if cfg.op in ("hashtag-maxlen", "wordcount", "paircount"):
        return [gen_text_stream(cfg.seed, phases=cfg.phases)]
    if cfg.op == "hedge":
        return [gen_trades_stream(cfg.seed, side=i, phases=cfg.phases) for i in (0, 1)]
    return [gen_join_stream(cfg.seed, side=i, phases=cfg.phases) for i in (0, 1)]


# ---- replay files -----------------------------------------------------------------
# Line format: source index, then the schema line (tau,field1,...).


def write_replay(path: str, op_name: str, stream: Iterable) -> int:
    """Record (tuple, source) pairs to a replay file; returns the line count."""
    schemas = schemas_for(op_name)
    n = 0
    with open(path, "w") as fh:
        for t, src in stream:
            fh.write(f"{src},{schemas[src].format_line(t)}\n")
            n += 1
    return n


def read_replay(path: str, op_name: str) -> list:
    """Load a replay file into one tuple list per source."""
    schemas = schemas_for(op_name)
    streams: list = [[] for _ in schemas]
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            src_text, _, rest = line.partition(",")
            try:
                src = int(src_text)
                t = schemas[src].parse_line(rest, stream=src)
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: bad replay line: {exc}") from exc
            if streams[src] and t.tau < streams[src][-1].tau:
                raise ValueError(f"{path}:{lineno}: event time goes backwards")
            streams[src].append(t)
    return streams


# ---- the run ---------------------------------------------------------------------


def _per_second_batches(stream: Iterable[Tuple], total_s: int) -> list:
    batches: list = [[] for _ in range(total_s)]
    for t in stream:
        s = t.tau // 1000
        if s >= total_s:
            break
        batches[s].append(t)
    return batches


class _Sampler:
    """Builds one MetricsRow per second from counter deltas."""

    def __init__(self, run):
        self.run = run
        self.prev_fed = 0
        self.prev_out = 0
        self.prev_lat = (0, 0)
        self.pending: deque = deque()

    def row(self, second: int) -> MetricsRow:
        run = self.run
        fed = sum(run.fed_counts)
        out = run.output_count()
        lat_avg = lat_p99 = None
        if run.engine is not None:
            lat_sum, lat_n = run.engine.latency_totals()
            d_sum = lat_sum - self.prev_lat[0]
            d_n = lat_n - self.prev_lat[1]
            if d_n > 0:
                lat_avg = d_sum / d_n / 1e6
            self.prev_lat = (lat_sum, lat_n)
            lat_p99 = percentile(run.engine.latency_recent_ms(), 0.99)
            run.poll_reconfig_edges()
            active = run.engine.active_instances
            epoch = run.engine.epoch
        else:
            active = run.cfg.instances
            epoch = 0
        row = MetricsRow(
            wallclock_s=second,
            input_rate=fed - self.prev_fed,
            throughput=out - self.prev_out,
            latency_avg_ms=lat_avg,
            latency_p99_ms=lat_p99,
            active_instances=active,
            epoch=epoch,
            event=run.take_event(),
        )
        self.prev_fed, self.prev_out = fed, out
        return row


class _BenchRun:
    def __init__(self, cfg: BenchConfig):
        self.cfg = cfg
        self.op = build_operator(cfg)
        streams = build_streams(cfg)
        if cfg.replay is not None:
            last = max((s[-1].tau for s in streams if s), default=0)
            self.total_s = last // 1000 + 1
        else:
            self.total_s = total_seconds(cfg.phases)
        self.batches = [_per_second_batches(s, self.total_s) for s in streams]
        self.fed_counts = [0] * len(self.batches)
        self.outputs: list = []
        self.rows: list = []
        self.events: deque = deque()
        self.engine: Optional[Engine] = None
        self.sn: Optional[SNExecutor] = None
        self.controller: Optional[ThresholdController] = None
        self.skipped_reconfigs = 0
        self._seen_reconfigs = 0
        self._started_epochs: set = set()

    # -- counters shared with the sampler ------------------------------------

    def output_count(self) -> int:
        if self.sn is not None:
            return sum(len(si.outputs) for si in self.sn.instances)
        return len(self.outputs)

    def take_event(self) -> str:
        return self.events.popleft() if self.events else ""

    def _note_start(self):
        epoch = self.engine._in_flight
        if epoch is not None and epoch not in self._started_epochs:
            self._started_epochs.add(epoch)
            self.events.append("reconfig_start")

    def poll_reconfig_edges(self):
        self._note_start()
        done = len(self.engine.reconfig_history)
        for _ in range(done - self._seen_reconfigs):
            self.events.append("reconfig_done")
        self._seen_reconfigs = done

    def drain(self):
        if self.engine is not None:
            self.outputs.extend(self.engine.drain_outputs())

    # -- scripted scaling ---------------------------------------------------------

    def apply_scripted(self, second: int, wait_s: float = 0.0):
        for at_s, count in self.cfg.reconfig:
            if at_s == second:
                deadline = time.perf_counter() + wait_s
                while (
                    self.engine.reconfig_in_flight
                    and time.perf_counter() < deadline
                ):
                    time.sleep(0.001)
                try:
                    self.engine.resize(count)
                    self._note_start()
                except EngineBusyError:
                    # the previous switch has not completed yet
                    self.skipped_reconfigs += 1

    # -- execution ----------------------------------------------------------------

    def execute(self) -> dict:
        cfg = self.cfg
        start = time.perf_counter()
        if cfg.mode == "vsn":
            self.engine = setup(
                self.op, cfg.instances, _pool_size(cfg), seed=cfg.seed
            )
            if cfg.controller == "threshold":
                lo, target, hi = cfg.thresholds
                self.controller = ThresholdController(
                    self.engine, 1.0, lo, target, hi
                ).start()
        else:
            self.sn = SNExecutor(
                self.op, cfg.instances, seed=cfg.seed, threads=not cfg.virtual_time
            )
        try:
            if cfg.virtual_time:
                self._run_virtual()
            else:
                self._run_real(start)
        finally:
            if self.controller is not None:
                self.controller.stop()
        self._finish()
        wall = time.perf_counter() - start
        return self._summary(wall)

    def _feed(self, t: Tuple, src: int):
        if self.engine is not None:
            self.engine.add(t, src)
        else:
            self.sn.add(t, src)
        self.fed_counts[src] += 1

    def _run_virtual(self):
        sampler = _Sampler(self)
        for s in range(self.total_s):
            if self.engine is not None:
                self.apply_scripted(s)
            for src, per_second in enumerate(self.batches):
                for t in per_second[s]:
                    self._feed(t, src)
            self._settle()
            self.drain()
            self.rows.append(sampler.row(s))

    def _settle(self, quiet_s: float = 0.004, stall_s: float = 60.0):
        """Let the workers catch up with the virtual second just fed: return
        once processing counters have been still for quiet_s.  (The merge
        buffer legitimately holds back each source's newest tuples, so
        emptiness is not the right condition.)"""
        eng = self.engine
        if eng is None:
            return  # the isolated executor processes synchronously
        last = None
        quiet_since = time.perf_counter()
        stall_deadline = quiet_since + stall_s
        while True:
            eng._raise_worker_error()
            m = eng.metrics()
            snap = (m["processed"], m["emitted"], m["work_units"], eng.tb_in.pending())
            now = time.perf_counter()
            if snap != last:
                last = snap
                quiet_since = now
                stall_deadline = now + stall_s
            elif now - quiet_since >= quiet_s:
                return
            elif now >= stall_deadline:
                raise RuntimeError("engine stalled mid-run")
            time.sleep(2e-4)

    def _run_real(self, start: float):
        sampler = _Sampler(self)
        stop = threading.Event()

        def pace(offset_s: float):
            delay = start + offset_s - time.perf_counter()
            if delay > 0:
                time.sleep(delay)

        def feed_source(src: int):
            for s in range(self.total_s):
                batch = self.batches[src][s]
                for sl in range(10):  # 100ms token-bucket slices
                    pace(s + sl / 10)
                    lo = (len(batch) * sl) // 10
                    hi = (len(batch) * (sl + 1)) // 10
                    for t in batch[lo:hi]:
                        self._feed(t, src)

        def source_pairs(src: int, per_second: list):
            for s in range(self.total_s):
                for t in per_second[s]:
                    yield (t, src)

        def feed_merged():
            # the isolated executor is single-caller; merge sources by tau
            merged = heapq.merge(
                *(source_pairs(src, ps) for src, ps in enumerate(self.batches)),
                key=lambda pair: pair[0].tau,
            )
            for t, src in merged:
                pace(t.tau / 1000.0)
                self._feed(t, src)

        if self.engine is not None:
            feeders = [
                threading.Thread(target=feed_source, args=(src,), daemon=True)
                for src in range(len(self.batches))
            ]
        else:
            feeders = [threading.Thread(target=feed_merged, daemon=True)]
        for th in feeders:
            th.start()

        def sample_loop():
            second = 0
            while not stop.wait(start + second + 1.0 - time.perf_counter()):
                self.drain()
                self.rows.append(sampler.row(second))
                second += 1

        sampler_thread = threading.Thread(target=sample_loop, daemon=True)
        sampler_thread.start()
        for at_s, _count in sorted(self.cfg.reconfig):
            pace(float(at_s))
            self.apply_scripted(at_s, wait_s=10.0)
        for th in feeders:
            th.join()
        stop.set()
        sampler_thread.join()
        while len(self.rows) < self.total_s:
            self.drain()
            self.rows.append(sampler.row(len(self.rows)))

    def _finish(self):
        if self.engine is not None:
            self.engine.close()
            self.drain()
            self.poll_reconfig_edges()
            while self.events:  # trailing event rows keep the 1/s cadence
                sampler = _Sampler(self)
                sampler.prev_fed = sum(self.fed_counts)
                sampler.prev_out = self.output_count()
                self.rows.append(sampler.row(len(self.rows)))
        else:
            self.sn.close()
            self.outputs = list(self.sn.outputs)

    def _summary(self, wall_s: float) -> dict:
        cfg = self.cfg
        durations = (
            [d for _, d in self.engine.reconfig_history] if self.engine else []
        )
        return {
            "op": cfg.op,
            "mode": cfg.mode,
            "input": sum(self.fed_counts),
            "emitted": len(self.outputs),
            "digest": canonical_digest(self.outputs),
            "rows": self.rows,
            "reconfig_durations_ms": durations,
            "skipped_reconfigs": self.skipped_reconfigs,
            "controller_decisions": (
                list(self.controller.decisions) if self.controller else []
            ),
            "wall_s": wall_s,
        }


def run_benchmark(cfg: BenchConfig) -> dict:
    """Execute one configured run; returns the summary dict and writes the
    CSV when configured."""
    validate_config(cfg)
    summary = _BenchRun(cfg).execute()
    if cfg.csv_path:
        write_csv(cfg.csv_path, summary["rows"])
    return summary


# ---- CLI -------------------------------------------------------------------------

_DURATION_RE = re.compile(r"^(\d+)(ms|s|m|h)?$")
_UNIT_MS = {None: 1, "ms": 1, "s": 1_000, "m": 60_000, "h": 3_600_000}


def parse_duration_ms(text: str) -> int:
    m = _DURATION_RE.match(text.strip())
    if not m:
        raise ValueError(f"bad duration {text!r} (e.g. 500ms, 5s, 2m)")
    return int(m.group(1)) * _UNIT_MS[m.group(2)]


def parse_phases(text: str) -> tuple:
    phases = []
    for part in text.split(","):
        dur_text, sep, rate_text = part.partition("@")
        if not sep:
            raise ValueError(f"bad phase {part!r} (want dur@rate, e.g. 30s@2000)")
        dur_ms = parse_duration_ms(dur_text)
        if dur_ms % 1000:
            raise ValueError(f"phase duration {dur_text!r} must be whole seconds")
        phases.append(RatePhase(dur_ms // 1000, int(rate_text)))
    return tuple(phases)


def parse_reconfig(text: str) -> tuple:
    if not text:
        return ()
    steps = []
    for part in text.split(","):
        at_text, sep, count_text = part.partition(":")
        if not sep:
            raise ValueError(f"bad reconfiguration step {part!r} (want t:count)")
        if at_text.strip().isdigit():  # bare numbers are seconds here
            at_s = int(at_text)
        else:
            at_ms = parse_duration_ms(at_text)
            if at_ms % 1000:
                raise ValueError(
                    f"reconfiguration time {at_text!r} must be whole seconds"
                )
            at_s = at_ms // 1000
        steps.append((at_s, int(count_text)))
    return tuple(steps)


def parse_thresholds(text: str) -> tuple:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError("thresholds want three values: lower,target,upper")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="vsnstream-bench",
        description="Run a stream-processing workload and report per-second metrics.",
    )
    p.add_argument("--op", default="wordcount", choices=KNOWN_OPS, help="workload")
    p.add_argument("--mode", default="vsn", choices=("sn", "vsn"))
    p.add_argument("--instances", type=int, default=2, help="initial instance count")
    p.add_argument("--max", dest="max_instances", type=int, default=None,
                   help="worker pool size (vsn); defaults to the largest target")
    p.add_argument("--wa", default=None, help="window advance (e.g. 1s, 500ms)")
    p.add_argument("--ws", default=None, help="window size (e.g. 5s, 10m)")
    p.add_argument("--wt", default=None, choices=("single", "multi"),
                   help="window type; informational, each workload pins its own")
    p.add_argument("--phases", default="10s@1000", help="dur@rate[,dur@rate...]")
    p.add_argument("--reconfig", default="", help="t:count[,t:count...] (vsn only)")
    p.add_argument("--controller", default="none", choices=("none", "threshold"))
    p.add_argument("--thresholds", default="0.45,0.70,0.90", help="lower,target,upper")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", dest="csv_path", default=None, help="metrics CSV path")
    p.add_argument("--virtual-time", action="store_true",
                   help="advance event time per the schedule without pacing")
    p.add_argument("--replay", default=None, help="replay file instead of generators")
    return p


def config_from_args(args: argparse.Namespace) -> BenchConfig:
    return BenchConfig(
        op=args.op,
        mode=args.mode,
        instances=args.instances,
        max_instances=args.max_instances,
        wa_ms=parse_duration_ms(args.wa) if args.wa else None,
        ws_ms=parse_duration_ms(args.ws) if args.ws else None,
        wt=args.wt,
        phases=parse_phases(args.phases),
        reconfig=parse_reconfig(args.reconfig),
        controller=args.controller,
        thresholds=parse_thresholds(args.thresholds),
        seed=args.seed,
        csv_path=args.csv_path,
        virtual_time=args.virtual_time,
        replay=args.replay,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        summary = run_benchmark(cfg)
    except (ValueError, OSError) as exc:
        print(f"vsnstream-bench: {exc}", file=sys.stderr)
        return 2
    print(
        f"op={summary['op']} mode={summary['mode']} "
        f"input={summary['input']} emitted={summary['emitted']}"
    )
    print(f"digest={summary['digest']}")
    if summary["reconfig_durations_ms"]:
        stamps = ", ".join(f"{d:.1f}" for d in summary["reconfig_durations_ms"])
        print(f"reconfig_ms=[{stamps}]")
    if summary["skipped_reconfigs"]:
        print(f"skipped_reconfigs={summary['skipped_reconfigs']}")
    if summary["controller_decisions"]:
        print(f"controller_decisions={len(summary['controller_decisions'])}")
    if cfg.csv_path:
        print(f"csv={cfg.csv_path} rows={len(summary['rows'])}")
    print(f"wall_s={summary['wall_s']:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
