"""Generalized windowed stateful operator.

One operator definition runs under two execution styles:

* shared-nothing: each instance owns a private state map and a private merge
  gate; upstream tuples are duplicated per owning instance (forward_sn).
* shared-buffer: all instances read one merge gate and mutate one shared
  state map, partitioned by key ownership; tuples are never duplicated
  (forward_vsn), and membership changes move ownership instead of state.

State layout: per key, an ordered list of slots; each slot carries one left
boundary l and one window instance per input stream.  Output tuples take the
right boundary l+WS as their event time, which always exceeds the event time
of every contributing input tuple.
"""

from __future__ import annotations

import math
import threading
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .core import (
    Kind,
    Schema,
    Tuple,
    Watermark,
    WindowInstance,
    WT,
    earliest_left_boundary,
    latest_left_boundary,
)

INF = math.inf


def state_is_empty(zeta) -> bool:
    """A window state is empty when it is None or has zero length;
    objects without a length (counters, scalars) count as non-empty."""
    if zeta is None:
        return True
    try:
        return len(zeta) == 0
    except TypeError:
        return False


# ---- default window functions ---------------------------------------------


def default_f_U(windows, t):
    """Append t to the sender's window buffer; no output."""
    w = windows[t.stream]
    zeta = list(w.zeta) if w.zeta is not None else []
    zeta.append(t)
    states = [wi.zeta for wi in windows]
    states[t.stream] = zeta
    return states, ()


def default_f_O(windows):
    """No output on expiry."""
    return ()


def default_f_S(windows):
    """Purge tuples that fall before the advanced left boundary."""
    new_l = windows[0].l  # shift() advances l before applying the new states
    states = []
    for w in windows:
        zeta = w.zeta
        if zeta is None or state_is_empty(zeta):
            states.append(zeta)
        else:
            states.append([u for u in zeta if u.tau >= new_l])
    return states


@dataclass
class OperatorDef:
    """Bundle of window geometry and user functions defining one operator.

    f_MK: t -> iterable of keys (pure).
    f_mu: initial ownership: None for hashed, "identity" for modular integer
          routing, or a (key, member_count) -> index callable.
    f_U:  (windows, t) -> (new_states, payloads).  May mutate the passed
          window states in place and return them; must touch nothing else
          (distinct keys are folded concurrently).
    f_O:  windows -> payloads, emitted when a window expires.
    f_S:  windows -> new_states after the left boundary advanced by WA
          (sliding-instance operators only).
    """

    name: str
    spec: WindowSpec
    I: int = 1
    f_MK: Callable[[Tuple], Iterable] = lambda t: ()
    f_U: Callable = default_f_U
    f_O: Callable = default_f_O
    f_S: Callable = default_f_S
    f_mu: Optional[Callable] = None
    out_schema: Optional[Schema] = None
    # drain every remaining window through f_O when the input ends; pointless
    # for operators whose f_O emits nothing
    flush_on_close: bool = True

    def __post_init__(self):
        if self.I < 1:
            raise ValueError("operator needs at least one input stream")


# ---- shared window state ---------------------------------------------------


class Slot:
    """All window instances (one per input stream) sharing one left boundary."""

    __slots__ = ("l", "windows", "arrival_ns", "max_tau")

    def __init__(self, l: int, key, n_streams: int):
        self.l = l
        self.windows = tuple(WindowInstance(None, l, key) for _ in range(n_streams))
        self.arrival_ns = None  # wall-clock stamp of the last folded tuple
        self.max_tau = -1  # largest event time folded into this slot

    @property
    def key(self):
        return self.windows[0].k

    def set_states(self, states):
        for w, z in zip(self.windows, states):
            w.zeta = z

    def advance(self, wa: int):
        self.l += wa
        for w in self.windows:
            w.l = self.l

    def __repr__(self):
        return f"Slot(l={self.l}, key={self.key!r})"


class WriterGuard:
    """Optional instrumentation asserting single-writer key access."""

    def __init__(self):
        self._holders = {}
        self._lock = threading.Lock()
        self.violations = []

    def enter(self, key, owner):
        with self._lock:
            other = self._holders.get(key)
            if other is not None and other != owner:
                self.violations.append((key, other, owner))
            self._holders[key] = owner

    def exit(self, key, owner):
        with self._lock:
            if self._holders.get(key) == owner:
                del self._holders[key]


class SharedState:
    """Key -> ordered slot list.  Safe for concurrent use as long as no two
    holders mutate the same key at once (the ownership discipline the engine
    enforces); distinct-key operations rely on atomic dict updates."""

    def __init__(self, op: OperatorDef, guard: Optional[WriterGuard] = None):
        self.op = op
        self.spec = op.spec
        self._slots: dict = {}
        self.guard = guard

    # -- lookup --------------------------------------------------------------

    def slots(self, key):
        return self._slots.get(key, ())

    def first(self, key) -> Optional[Slot]:
        lst = self._slots.get(key)
        return lst[0] if lst else None

    def keys(self):
        return list(self._slots.keys())

    def min_l(self) -> Optional[int]:
        best = None
        for lst in list(self._slots.values()):
            if lst:
                l = lst[0].l
                if best is None or l < best:
                    best = l
        return best

    def total_slots(self) -> int:
        return sum(len(v) for v in list(self._slots.values()))

    # -- mutation (rank-addressed public forms + boundary internals) ----------

    def check_create(self, key, l: int) -> Slot:
        """Return the slot for (key, l), creating it if missing.

        Sliding-instance windows keep a single slot per key, reused whatever
        l is asked for; its boundary only moves via shift."""
        lst = self._slots.get(key)
        if lst is None:
            lst = []
            self._slots[key] = lst
        if self.spec.wt is WT.SINGLE:
            if lst:
                return lst[0]
            slot = Slot(l, key, self.op.I)
            lst.append(slot)
            return slot
        idx = bisect_left([s.l for s in lst], l)
        if idx < len(lst) and lst[idx].l == l:
            return lst[idx]
        slot = Slot(l, key, self.op.I)
        lst.insert(idx, slot)
        return slot

    def set(self, key, ell: int, states):
        self._slots[key][ell].set_states(states)

    def shift(self, key, ell: int, states):
        """Advance the ell-th slot's boundary by WA, then install states."""
        slot = self._slots[key][ell]
        slot.advance(self.spec.wa)
        slot.set_states(states)

    def remove(self, key, ell: int):
        lst = self._slots[key]
        del lst[ell]
        if not lst:
            del self._slots[key]

    def remove_slot(self, key, slot: Slot):
        lst = self._slots[key]
        lst.remove(slot)
        if not lst:
            del self._slots[key]


# ---- per-instance locals ----------------------------------------------------


@dataclass
class InstanceLocal:
    """Mutable execution-state of one operator instance."""

    j: int
    W: Watermark = field(default_factory=Watermark)
    rho: int = 0
    epoch: int = 0
    members: tuple = (0,)
    f_mu: Callable = None
    # pending reconfiguration (valid once gamma is finite)
    epoch_star: int = 0
    members_star: tuple = ()
    f_mu_star: Callable = None
    gamma: float = INF


# ---- forwarding -------------------------------------------------------------


def tuple_keys(t: Tuple, op: OperatorDef):
    """f_MK(t), computed once per tuple instance.

    Safe because f_MK is pure and a tuple instance flows through exactly one
    operator; under shared-buffer execution every instance sees the same
    object, so the cache also collapses the per-reader recompute."""
    keys = t.keys_cache
    if keys is None:
        keys = tuple(op.f_MK(t))
        t.keys_cache = keys
    return keys


def forward_sn(t: Tuple, op: OperatorDef, f_mu, queues, source_id: int) -> int:
    """Route one copy of t to each distinct owning instance; returns the
    number of copies (the duplication factor)."""
    peers = {f_mu(k) for k in tuple_keys(t, op)}
    for p in sorted(peers):
        queues[p].add(t, source_id)
    return len(peers)


def forward_vsn(t: Tuple, tb_in, source_id: int) -> int:
    """Shared-buffer routing: exactly one insertion regardless of key count."""
    tb_in.add(t, source_id)
    return 1


# Test hook.  When set to a callable, every emission batch reports
# (out_tau, max_folded_tau) for its slot, letting tests assert that emitted
# tuples always postdate every input folded into the emitting window.
emission_check: Optional[Callable[[int, int], None]] = None


def prepare_out_tuples(payloads, slot: Slot, ws: int, schema: Optional[Schema] = None):
    """Wrap payloads as Regular tuples stamped with the slot's right boundary."""
    tau = slot.l + ws
    out = []
    for payload in payloads:
        if schema is not None and len(payload) != len(schema.fields):
            raise ValueError(
                f"payload arity {len(payload)} != schema {schema.name!r}"
            )
        out.append(Tuple(tau, payload))
    return out


# ---- the executor -----------------------------------------------------------

_SORT_KEY = repr  # deterministic ordering for mixed-type key sets


def _sort_keys(keys: list) -> list:
    """Sort keys in place deterministically (set iteration order is not
    stable across processes); repr-keyed only when types don't compare."""
    try:
        keys.sort()
    except TypeError:
        keys.sort(key=_SORT_KEY)
    return keys


class OperatorInstance:
    """One instance of an operator; drives the window lifecycle for the keys
    it owns.  The same code runs both execution styles; ownership filtering
    is the only difference (shared-nothing instances own whatever arrives)."""

    def __init__(
        self,
        op: OperatorDef,
        local: InstanceLocal,
        sigma: SharedState,
        emit: Callable[[Tuple], None],
    ):
        self.op = op
        self.local = local
        self.sigma = sigma
        self.emit = emit
        # left boundary -> set of owned keys with a live slot there
        self._by_boundary: dict = {}
        self.processed = 0
        self.emitted = 0

    # -- boundary index --------------------------------------------------

    def _index_add(self, l: int, key):
        self._by_boundary.setdefault(l, set()).add(key)

    def _index_drop(self, l: int, key):
        ks = self._by_boundary.get(l)
        if ks is not None:
            ks.discard(key)
            if not ks:
                del self._by_boundary[l]

    def rebuild_ownership(self):
        """Re-derive the boundary index and rho after ownership changed."""
        self._by_boundary.clear()
        f_mu = self.local.f_mu
        j = self.local.j
        for key in self.sigma.keys():
            if f_mu(key) != j:
                continue
            for slot in self.sigma.slots(key):
                self._index_add(slot.l, key)
        floor = self.sigma.min_l()
        self.local.rho = floor if floor is not None else self.local.rho

    # -- window expiry -----------------------------------------------------

    def _first_live_boundary(self, w: int) -> int:
        """Smallest aligned boundary b with b + WS >= w."""
        wa, ws = self.op.spec.wa, self.op.spec.ws
        b = -((ws - w) // wa) * wa  # ceil((w - ws) / wa) * wa
        return max(0, b)

    def expire_until_watermark(self):
        local = self.local
        spec = self.op.spec
        wa, ws = spec.wa, spec.ws
        index = self._by_boundary
        w = local.W.value
        while local.rho + ws < w:
            keys = index.get(local.rho)
            if keys:
                for key in _sort_keys(list(keys)):
                    self._forward_and_shift(key)
            nxt = None
            for l in index:
                if l > local.rho and (nxt is None or l < nxt):
                    nxt = l
            step = local.rho + wa
            if nxt is None:
                local.rho = max(step, self._first_live_boundary(w))
            else:
                local.rho = min(nxt, max(step, self._first_live_boundary(w)))

    def _forward_and_shift(self, key):
        sigma = self.sigma
        guard = sigma.guard
        j = self.local.j
        if guard is not None:
            guard.enter(key, j)
        try:
            slot = sigma.first(key)
            if slot is None or slot.l != self.local.rho:
                self._index_drop(self.local.rho, key)
                return
            self._close_out(key, slot)
        finally:
            if guard is not None:
                guard.exit(key, j)

    def _close_out(self, key, slot: Slot):
        """Emit the window's aggregate, then slide it (keeping f_S-carried
        state) or drop it.  Caller holds the key's write ownership."""
        payloads = self.op.f_O(slot.windows)
        if payloads:
            self._emit_all(payloads, slot, slot.arrival_ns)
        self._index_drop(slot.l, key)
        if self.op.spec.wt is WT.SINGLE and any(
            not state_is_empty(w.zeta) for w in slot.windows
        ):
            states = self.op.f_S(self._shifted_view(slot))
            self.sigma.shift(key, 0, states)
            self._index_add(slot.l, key)
        else:
            self.sigma.remove_slot(key, slot)

    def _shifted_view(self, slot: Slot):
        """Windows as f_S must see them: boundary already advanced."""
        new_l = slot.l + self.op.spec.wa
        return tuple(
            WindowInstance(w.zeta, new_l, w.k) for w in slot.windows
        )

    # -- input handling ------------------------------------------------------

    def handle_input_tuple(self, t: Tuple):
        local = self.local
        op = self.op
        spec = op.spec
        f_mu = local.f_mu
        j = local.j
        owned = [k for k in tuple_keys(t, op) if f_mu(k) == j]
        if not owned:
            return
        _sort_keys(owned)
        tau1 = earliest_left_boundary(t.tau, spec)
        tau2 = tau1 if spec.wt is WT.SINGLE else latest_left_boundary(t.tau, spec)
        if tau1 < local.rho:
            local.rho = tau1
        sigma = self.sigma
        guard = sigma.guard
        single = spec.wt is WT.SINGLE
        for l in range(tau1, tau2 + 1, spec.wa):
            for key in owned:
                if guard is not None:
                    guard.enter(key, j)
                try:
                    slot = sigma.check_create(key, l)
                    if single and slot.l + spec.ws <= t.tau:
                        # the sliding window stopped covering t before the
                        # watermark sweep caught up; close it out now so the
                        # fold lands in a window that contains t
                        while slot is not None and slot.l + spec.ws <= t.tau:
                            self._close_out(key, slot)
                            slot = sigma.first(key)
                        if slot is None:
                            slot = sigma.check_create(key, l)
                    # idempotent; a reused sliding slot keeps its own boundary
                    self._index_add(slot.l, key)
                    if t.tau > slot.max_tau:
                        slot.max_tau = t.tau
                    states, payloads = op.f_U(slot.windows, t)
                    if payloads:
                        self._emit_all(payloads, slot, t.arrival_ns)
                    slot.set_states(states)
                    slot.arrival_ns = t.arrival_ns
                finally:
                    if guard is not None:
                        guard.exit(key, j)
        self.processed += 1

    def _emit_all(self, payloads, slot: Slot, arrival_ns=None):
        if emission_check is not None:
            emission_check(slot.l + self.op.spec.ws, slot.max_tau)
        for out in prepare_out_tuples(
            payloads, slot, self.op.spec.ws, self.op.out_schema
        ):
            out.arrival_ns = arrival_ns
            self.emit(out)
            self.emitted += 1

    # -- the two per-tuple entry points ---------------------------------------

    def process_sn(self, t: Tuple):
        """Shared-nothing step: watermark, expiry sweep, then fold t."""
        self.local.W.advance(t.tau)
        self.expire_until_watermark()
        self.handle_input_tuple(t)

    def process_vsn(self, t: Tuple, on_trigger: Optional[Callable] = None):
        """Shared-state step.  Control tuples only arm a pending epoch; the
        switch happens when the watermark outgrows the trigger point, at
        which moment on_trigger(instance, t) must rendezvous all current
        instances, apply the membership change exactly once, and return the
        adopted (epoch, members, f_mu).  The trigger tuple t itself is then
        handled under the new epoch, so instances joining at the switch must
        be given t as their first input."""
        local = self.local
        if t.kind is Kind.CONTROL:
            self.prepare_reconfig(t)
            return
        before = local.W.value
        local.W.advance(t.tau)
        if local.W.value > before and local.W.value > local.gamma:
            if on_trigger is not None:
                epoch, members, f_mu = on_trigger(self, t)
                self.adopt_epoch(epoch, members, f_mu)
        self.expire_until_watermark()
        self.handle_input_tuple(t)

    def prepare_reconfig(self, t: Tuple):
        """Arm the pending reconfiguration; later epochs supersede earlier."""
        local = self.local
        epoch = t.payload[0]
        if epoch <= max(local.epoch, local.epoch_star):
            return
        local.epoch_star = epoch
        local.members_star = tuple(t.payload[1])
        local.f_mu_star = t.payload[2]
        local.gamma = t.tau

    def adopt_epoch(self, epoch: int, members, f_mu):
        local = self.local
        local.epoch = epoch
        local.members = tuple(members)
        local.f_mu = f_mu
        local.epoch_star = epoch
        local.gamma = INF
        self.rebuild_ownership()

    # -- end of stream ---------------------------------------------------------

    def max_owned_boundary(self) -> Optional[int]:
        return max(self._by_boundary, default=None)

    def close(self):
        """Drain every remaining owned window through the expiry path so a
        finite input yields the same output multiset in either mode."""
        if not self.op.flush_on_close:
            return
        top = self.max_owned_boundary()
        if top is None:
            return
        self.local.W.advance(top + self.op.spec.ws + 1)
        self.expire_until_watermark()
