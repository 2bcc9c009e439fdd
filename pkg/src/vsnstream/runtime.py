"""Engine lifecycle: worker pool over shared buffers, live reconfiguration.

Topology: ingress sources feed one ElasticScaleGate (tb_in); m of n workers
read it, fold tuples into the shared window state, and emit into a second
gate (tb_out) that downstream readers consume.  The remaining n - m workers
idle in a pool with exponential backoff.

Reconfiguration never moves state.  A spec is queued per ingress source and
enters the stream as a Control tuple stamped with that source's last event
time, so it sorts like any other tuple.  Workers arm the pending epoch when
they read it; the first Regular tuple that pushes the watermark past the
trigger point rendezvouses every current member at a barrier, one winner
applies the membership calls, and everyone adopts the new mapping — pooled
and newly added workers pick it up from the published epoch record.
"""

from __future__ import annotations

import itertools
import math
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

from .core import Kind, Tuple, control_tuple, stable_hash64
from .elastic_scalegate import ElasticScaleGate
from .operator import (
    InstanceLocal,
    OperatorDef,
    OperatorInstance,
    SharedState,
    WriterGuard,
    forward_sn,
)
from .scalegate import DEFAULT_BOUND, Backoff


class EngineBusyError(RuntimeError):
    """A reconfiguration is already in flight."""


# ---- key -> instance mapping descriptors ------------------------------------


@dataclass(frozen=True)
class KeyMapping:
    """Serializable ownership function carried inside Control tuples.

    hash: owner = members[h64(key) mod |members|]
    identity: owner = members[key mod |members|] (integer key spaces)
    table: explicit key -> owner, hash fallback for unlisted keys
    """

    mode: str
    members: tuple
    seed: int = 0
    table: Optional[dict] = None

    def __post_init__(self):
        if self.mode not in ("hash", "identity", "table"):
            raise ValueError(f"unknown mapping mode {self.mode!r}")
        if not self.members:
            raise ValueError("mapping needs at least one member")

    def __call__(self, key):
        if self.mode == "identity":
            return self.members[key % len(self.members)]
        if self.mode == "table":
            owner = self.table.get(key)
            if owner is not None:
                return owner
        return self.members[stable_hash64(key, self.seed) % len(self.members)]

    @classmethod
    def for_op(cls, op: OperatorDef, members: Sequence[int], seed: int = 0):
        members = tuple(members)
        if callable(op.f_mu):
            fn = op.f_mu
            return _WrappedMapping(fn, members)
        mode = op.f_mu if isinstance(op.f_mu, str) else "hash"
        return cls(mode=mode, members=members, seed=seed)


class _WrappedMapping:
    """Adapter for operator-supplied (key, member_count) callables."""

    def __init__(self, fn: Callable, members: tuple):
        self.fn = fn
        self.members = members

    def __call__(self, key):
        return self.members[self.fn(key, len(self.members)) % len(self.members)]


@dataclass(frozen=True)
class ReconfigSpec:
    """Target of one epoch switch; epoch/mapping may be left for the engine."""

    members: tuple
    mapping: Optional[Callable] = None
    epoch: Optional[int] = None


class _EpochRecord:
    __slots__ = ("epoch", "members", "f_mu", "trigger")

    def __init__(
        self, epoch: int, members: tuple, f_mu: Callable, trigger: Optional[Tuple] = None
    ):
        self.epoch = epoch
        self.members = members
        self.f_mu = f_mu
        # the Regular tuple whose watermark advance fired the switch; handled
        # under the new epoch, so workers joining at this epoch fold it first
        self.trigger = trigger


# ---- per-worker metering -----------------------------------------------------


class WorkMeter:
    """Loop/throughput counters, written by exactly one worker thread."""

    __slots__ = ("iters", "hits", "units", "emitted", "lat_sum_ns", "lat_n", "lat_recent")

    def __init__(self):
        self.iters = 0
        self.hits = 0
        self.units = 0
        self.emitted = 0
        self.lat_sum_ns = 0
        self.lat_n = 0
        # bounded reservoir of recent per-emission latencies, for percentiles
        self.lat_recent = deque(maxlen=4096)


_meter_cell = threading.local()


def set_current_meter(meter: Optional[WorkMeter]):
    _meter_cell.meter = meter


def add_work(units: int):
    """Credit operator-defined work units (e.g. join comparisons) to the
    worker running the current thread; no-op outside a metered worker."""
    meter = getattr(_meter_cell, "meter", None)
    if meter is not None:
        meter.units += units


# ---- the engine ---------------------------------------------------------------


class Engine:
    """n workers sharing one window state; m connected at a time."""

    def __init__(
        self,
        op: OperatorDef,
        m: int,
        n: int,
        *,
        seed: int = 0,
        guard: Optional[WriterGuard] = None,
        egress_readers: Iterable[int] = (0,),
        tb_in: Optional[ElasticScaleGate] = None,
        bound: int = DEFAULT_BOUND,
    ):
        if not 1 <= m <= n:
            raise ValueError(f"need 1 <= m <= n, got m={m} n={n}")
        self.op = op
        self.n = n
        self.seed = seed
        members = tuple(range(m))
        self._sources = tuple(range(op.I))
        if tb_in is None:
            tb_in = ElasticScaleGate(self._sources, members, bound=bound, seed=seed)
        self.tb_in = tb_in
        self.tb_out = ElasticScaleGate(
            members, tuple(egress_readers), bound=bound, seed=seed + 1
        )
        self.sigma = SharedState(op, guard=guard)
        self._record = _EpochRecord(0, members, KeyMapping.for_op(op, members, seed))

        self._meters = [WorkMeter() for _ in range(n)]
        self._worker_epochs = [0] * n
        self.epoch_log: list = []  # (worker, epoch) per adoption, adoption order
        self._instances: list = [None] * n
        self._done = [False] * n
        self._barriers: dict = {}
        self._epoch_ids = itertools.count(1)
        self._in_flight: Optional[int] = None
        self._reconfig_meta: dict = {}
        self.last_reconfig_duration_ms: Optional[float] = None
        self.reconfig_history: list = []  # (epoch, duration_ms) per completed switch

        self._control_q = {i: deque() for i in self._sources}
        self._last_tau = {i: 0 for i in self._sources}
        self._input_count = 0
        self._stop = False
        self._drain = False
        self._closed = False
        self._worker_errors: list = [None] * n
        # a rendezvous stalled this long means a member is gone; fail loudly
        self.barrier_timeout_s = 60.0
        self._threads = [
            threading.Thread(target=self._worker_loop, args=(j,), daemon=True)
            for j in range(n)
        ]

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> "Engine":
        for th in self._threads:
            th.start()
        return self

    @property
    def epoch(self) -> int:
        return self._record.epoch

    @property
    def members(self) -> tuple:
        return self._record.members

    @property
    def active_instances(self) -> int:
        return len(self._record.members)

    @property
    def reconfig_in_flight(self) -> bool:
        return self._in_flight is not None

    @property
    def trigger_tau(self) -> Optional[int]:
        """Event time of the tuple whose processing switched to the current
        epoch; None for the initial epoch."""
        t = self._record.trigger
        return None if t is None else t.tau

    # -- ingress ---------------------------------------------------------------

    def add(self, t: Tuple, stream: int = 0):
        """Ingress wrapper: release queued reconfiguration specs as Control
        tuples stamped with this source's latest event time, then add t."""
        self._last_tau[stream] = t.tau
        q = self._control_q[stream]
        while q:
            spec = q.popleft()
            self.tb_in.add(control_tuple(self._last_tau[stream], spec), stream)
        t.arrival_ns = time.perf_counter_ns()
        self.tb_in.add(t, stream)
        self._input_count += 1

    # -- reconfiguration --------------------------------------------------------

    def reconfigure(self, spec: ReconfigSpec) -> int:
        """Queue an epoch switch; returns the assigned epoch id.  Rejects a
        call while the previous switch has not been adopted by every target
        member."""
        if self._in_flight is not None:
            raise EngineBusyError(
                f"epoch {self._in_flight} still switching"
            )
        members = tuple(sorted(set(spec.members)))
        if not members:
            raise ValueError("need at least one member")
        if members[-1] >= self.n or members[0] < 0:
            raise ValueError(f"members {members} outside worker range 0..{self.n - 1}")
        epoch = spec.epoch if spec.epoch is not None else next(self._epoch_ids)
        if epoch <= self._record.epoch:
            raise ValueError("epoch ids must increase")
        mapping = spec.mapping or KeyMapping.for_op(self.op, members, self.seed)
        resolved = ReconfigSpec(members=members, mapping=mapping, epoch=epoch)
        self._reconfig_meta[epoch] = {"started": None}
        self._in_flight = epoch
        for i in self._sources:
            self._control_q[i].append(resolved)
        return epoch

    def resize(self, count: int) -> int:
        """Convenience: switch to workers 0..count-1."""
        return self.reconfigure(ReconfigSpec(members=tuple(range(count))))

    def _on_trigger(self, instance: OperatorInstance, t: Tuple):
        """Rendezvous of all current members; barrier index 0 applies the
        membership change and publishes the epoch record.  Runs inside the
        worker's processing of the trigger tuple t."""
        local = instance.local
        e_star = local.epoch_star
        meta = self._reconfig_meta.get(e_star)
        if meta is not None and meta["started"] is None:
            meta["started"] = time.perf_counter()
        barrier = self._barriers.setdefault(
            e_star, threading.Barrier(len(local.members))
        )
        idx = barrier.wait(timeout=self.barrier_timeout_s)
        if idx == 0:
            target = tuple(sorted(local.members_star))
            new = tuple(sorted(set(target) - set(local.members)))
            gone = tuple(sorted(set(local.members) - set(target)))
            if new:
                # new readers resume just past t, so t travels in the record
                if not self.tb_out.add_sources(new, caller=local.j):
                    raise RuntimeError("egress source provisioning failed")
                if not self.tb_in.add_readers(new, local.j):
                    raise RuntimeError("ingress reader provisioning failed")
            if gone:
                if not self.tb_in.remove_readers(gone):
                    raise RuntimeError("ingress reader decommission failed")
                if not self.tb_out.remove_sources(gone):
                    raise RuntimeError("egress source decommission failed")
            self._record = _EpochRecord(e_star, target, local.f_mu_star, t)
        # everyone leaves only after membership + record exist
        barrier.wait(timeout=self.barrier_timeout_s)
        rec = self._record
        return rec.epoch, rec.members, rec.f_mu

    def _publish_epoch(self, j: int, epoch: int):
        self.epoch_log.append((j, epoch))
        self._worker_epochs[j] = epoch
        if self._in_flight == epoch:
            rec = self._record
            if all(self._worker_epochs[k] >= epoch for k in rec.members):
                meta = self._reconfig_meta.get(epoch)
                if meta is not None and meta["started"] is not None:
                    self.last_reconfig_duration_ms = (
                        time.perf_counter() - meta["started"]
                    ) * 1000.0
                    self.reconfig_history.append(
                        (epoch, self.last_reconfig_duration_ms)
                    )
                self._in_flight = None

    # -- worker loop --------------------------------------------------------------

    def _worker_loop(self, j: int):
        try:
            self._worker_body(j)
        except BaseException as exc:  # surfaced by close()
            self._worker_errors[j] = exc
        finally:
            self._done[j] = True
            set_current_meter(None)

    def _worker_body(self, j: int):
        rec = self._record
        local = InstanceLocal(j=j, members=rec.members, f_mu=rec.f_mu)
        meter = self._meters[j]

        def emit(t: Tuple):
            if t.arrival_ns is not None:
                lat = time.perf_counter_ns() - t.arrival_ns
                meter.lat_sum_ns += lat
                meter.lat_n += 1
                meter.lat_recent.append(lat)
            self.tb_out.add(t, j)
            meter.emitted += 1

        inst = OperatorInstance(self.op, local, self.sigma, emit)
        self._instances[j] = inst
        set_current_meter(meter)
        backoff = Backoff()
        get = self.tb_in.get
        on_trigger = self._on_trigger

        while not self._stop:
            meter.iters += 1
            if j not in local.members:
                # pooled (or decommissioned): resync from the epoch record
                rec = self._record
                if rec.epoch > local.epoch:
                    inst.adopt_epoch(rec.epoch, rec.members, rec.f_mu)
                    if j in rec.members and rec.trigger is not None:
                        # fold our share of the switch-triggering tuple; our
                        # gate cursor starts on the tuple after it
                        meter.hits += 1
                        inst.process_vsn(rec.trigger)
                    self._publish_epoch(j, rec.epoch)
                    continue
                if self._drain:
                    break
                backoff.wait()
                continue
            t = get(j)
            if t is not None:
                backoff.reset()
                meter.hits += 1
                before = local.epoch
                inst.process_vsn(t, on_trigger)
                if local.epoch != before:
                    self._publish_epoch(j, local.epoch)
                continue
            if self._drain:
                inst.close()
                break
            backoff.wait()

    # -- shutdown -----------------------------------------------------------------

    def close(self, timeout: float = 60.0):
        """Flush ingress, let workers drain and sweep their windows, then
        flush egress so the downstream reader can consume everything.

        The timeout bounds time WITHOUT PROGRESS, not total drain time: a
        large backlog is given however long it needs as long as workers keep
        folding, while a genuine stall still raises after `timeout`."""
        if self._closed:
            return
        self._closed = True

        def progress() -> tuple:
            meters = self._meters
            return (
                sum(m.hits for m in meters),
                sum(m.emitted for m in meters),
                sum(m.units for m in meters),
            )

        last = progress()
        deadline = time.monotonic() + timeout

        def wait_for(cond) -> bool:
            nonlocal last, deadline
            while not cond():
                self._raise_worker_error()
                now = progress()
                if now != last:
                    last = now
                    deadline = time.monotonic() + timeout
                elif time.monotonic() >= deadline:
                    return False
                time.sleep(1e-4)
            return True

        def in_flight_settled() -> bool:
            if self._in_flight is None:
                return True
            meta = self._reconfig_meta.get(self._in_flight)
            # queued but never triggered; nothing will finish it
            return meta is not None and meta["started"] is None

        wait_for(in_flight_settled)
        for i in self._sources:
            self.tb_in._flush_source(i)
        wait_for(lambda: self.tb_in.pending() == 0)
        self._drain = True
        wait_for(lambda: all(self._done))
        self._raise_worker_error()
        for s in sorted(self.tb_out.source_ids):
            self.tb_out._flush_source(s)
        self._stop = True
        for th in self._threads:
            th.join(timeout=max(0.0, deadline - time.monotonic()))
        if not all(self._done):
            raise RuntimeError("engine close timed out with busy workers")

    def _raise_worker_error(self):
        for j, exc in enumerate(self._worker_errors):
            if exc is not None:
                raise RuntimeError(f"worker {j} failed") from exc

    def drain_outputs(self, reader: int = 0) -> list:
        out = []
        while True:
            t = self.tb_out.get(reader)
            if t is None:
                return out
            out.append(t)

    # -- observability ---------------------------------------------------------------

    def metrics(self) -> dict:
        meters = self._meters
        lat_n = sum(m.lat_n for m in meters)
        lat_sum = sum(m.lat_sum_ns for m in meters)
        return {
            "input_tuples": self._input_count,
            "processed": sum(m.hits for m in meters),
            "emitted": sum(m.emitted for m in meters),
            "work_units": sum(m.units for m in meters),
            "latency_ms_avg": (lat_sum / lat_n) / 1e6 if lat_n else None,
            "active_instances": self.active_instances,
            "epoch": self.epoch,
            "last_reconfig_duration_ms": self.last_reconfig_duration_ms,
        }

    def meter_snapshot(self) -> list:
        """(iters, hits) per worker, for load computation by a controller."""
        return [(m.iters, m.hits) for m in self._meters]

    def latency_totals(self) -> tuple:
        """(total_ns, count) of per-emission latency across all workers."""
        meters = self._meters
        return sum(m.lat_sum_ns for m in meters), sum(m.lat_n for m in meters)

    def latency_recent_ms(self) -> list:
        """Recent per-emission latencies in ms, pooled across workers
        (bounded reservoir; for percentile estimates)."""
        vals = []
        for m in self._meters:
            for _ in range(3):  # appends may race the iteration; retry
                try:
                    vals.extend(m.lat_recent)
                    break
                except RuntimeError:
                    continue
        return [v / 1e6 for v in vals]


def setup(op: OperatorDef, m: int, n: int, **kwargs) -> Engine:
    """Create and start an engine: n workers, m initially connected."""
    return Engine(op, m, n, **kwargs).start()


# ---- shared-nothing executor ---------------------------------------------------


class SNInstance:
    """One isolated instance: private merge gate, private state."""

    def __init__(self, op: OperatorDef, j: int, f_mu, seed: int = 0):
        self.j = j
        self.gate = ElasticScaleGate(tuple(range(op.I)), (0,), seed=seed)
        local = InstanceLocal(j=j, f_mu=f_mu)
        self.outputs: list = []
        self.inst = OperatorInstance(
            op, local, SharedState(op), self.outputs.append
        )

    def pump(self):
        while True:
            t = self.gate.get(0)
            if t is None:
                return
            self.inst.process_sn(t)


class SNExecutor:
    """Shared-nothing run of m instances.

    Sequential by default (deterministic; drives each instance in id order
    after every add); threads=True runs one poller thread per instance for
    throughput baselines.
    """

    def __init__(self, op: OperatorDef, m: int, *, seed: int = 0, threads: bool = False):
        self.op = op
        self.f_mu = KeyMapping.for_op(op, tuple(range(m)), seed)
        self.instances = [SNInstance(op, j, self.f_mu, seed=seed) for j in range(m)]
        self._queues = [si.gate for si in self.instances]
        self.duplicated = 0
        self._threads = []
        self._stop = False
        if threads:
            self._threads = [
                threading.Thread(target=self._poll, args=(si,), daemon=True)
                for si in self.instances
            ]
            for th in self._threads:
                th.start()

    def _poll(self, si: SNInstance):
        backoff = Backoff()
        while not self._stop:
            t = si.gate.get(0)
            if t is None:
                backoff.wait()
            else:
                backoff.reset()
                si.inst.process_sn(t)

    def add(self, t: Tuple, stream: int = 0):
        self.duplicated += forward_sn(t, self.op, self.f_mu, self._queues, stream)
        if not self._threads:
            for si in self.instances:
                si.pump()

    def close(self):
        self._stop = True
        for th in self._threads:
            th.join(timeout=30)
        for si in self.instances:
            for src in sorted(si.gate.source_ids):
                si.gate._flush_source(src)
            si.pump()
            si.inst.close()

    @property
    def outputs(self):
        out = []
        for si in self.instances:
            out.extend(si.outputs)
        return out

    def run(self, stream) -> list:
        """Feed (tuple, stream_index) pairs, drain, return all outputs."""
        for t, idx in stream:
            self.add(t, idx)
        self.close()
        return self.outputs


# ---- controller -----------------------------------------------------------------


def threshold_controller_step(
    loads: Sequence[float],
    n_cap: int,
    lower: float = 0.45,
    target: float = 0.70,
    upper: float = 0.90,
) -> Optional[ReconfigSpec]:
    """Band controller: resize so the projected average load returns to the
    target when the observed average leaves [lower, upper]."""
    if not loads:
        return None
    cur = len(loads)
    avg = sum(loads) / cur
    if avg > upper:
        want = min(n_cap, max(cur + 1, math.ceil(cur * avg / target)))
    elif avg < lower:
        want = max(1, math.ceil(cur * avg / target))
    else:
        return None
    if want == cur:
        return None
    return ReconfigSpec(members=tuple(range(want)))


class ThresholdController:
    """Cadence thread sampling per-member loads and resizing the engine."""

    def __init__(
        self,
        engine: Engine,
        interval_s: float = 1.0,
        lower: float = 0.45,
        target: float = 0.70,
        upper: float = 0.90,
    ):
        self.engine = engine
        self.interval_s = interval_s
        self.lower, self.target, self.upper = lower, target, upper
        self._prev = engine.meter_snapshot()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self.decisions: list = []

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._stop.set()
        self._thread.join(timeout=5)

    def sample_loads(self) -> list:
        snap = self.engine.meter_snapshot()
        members = self.engine.members
        loads = []
        for j in members:
            di = snap[j][0] - self._prev[j][0]
            dh = snap[j][1] - self._prev[j][1]
            loads.append(dh / di if di > 0 else 0.0)
        self._prev = snap
        return loads

    def _loop(self):
        while not self._stop.wait(self.interval_s):
            loads = self.sample_loads()
            spec = threshold_controller_step(
                loads, self.engine.n, self.lower, self.target, self.upper
            )
            if spec is None:
                continue
            try:
                epoch = self.engine.reconfigure(spec)
                self.decisions.append((epoch, len(spec.members), tuple(loads)))
            except EngineBusyError:
                continue
