"""Multi-source, multi-reader timestamp-merging buffer.

Sources insert per-source-sorted tuples; readers independently consume the
merged stream.  A buffered tuple is ready once it strictly precedes, in list
order, every node currently pointed to by a source's insertion handle; each
reader receives every ready Regular/Control tuple exactly once, in
non-decreasing timestamp order.  Dummy/Flush nodes participate in ordering and
readiness but are never handed to readers.

Insertions are serialized by a mutex and indexed by a seeded skip list;
retrieval is lock-free (cursor walks over the level-0 links, which are only
ever extended ahead of the ready region).  This relies on CPython's GIL for
atomic pointer/int reads; see the concurrency notes in README.
"""

from __future__ import annotations

import random
import threading
import time
from typing import Dict, Iterable, Optional

from .core import Kind, Tuple

MAX_LEVELS = 16
LEVEL_P = 0.5
DEFAULT_BOUND = 1 << 20
PRUNE_INTERVAL = 1024


class OrderingViolation(RuntimeError):
    """A source added a tuple older than its previous one."""


class Backoff:
    """Bounded exponential backoff: 1 us doubling up to 1 ms per wait."""

    __slots__ = ("attempt",)

    def __init__(self):
        self.attempt = 0

    def wait(self):
        time.sleep(min(1e-3, 1e-6 * (1 << min(self.attempt, 10))))
        if self.attempt < 10:
            self.attempt += 1

    def reset(self):
        self.attempt = 0


class _Node:
    __slots__ = ("tuple", "tau", "kind", "next0", "tower", "handle_count")

    def __init__(self, t: Optional[Tuple], tau: int, kind: Kind, height: int):
        self.tuple = t
        self.tau = tau
        self.kind = kind
        self.next0 = None
        # forward pointers for levels 1..height-1; level 0 lives in next0
        self.tower = [None] * (height - 1)
        self.handle_count = 0


class ScaleGate:
    """Fixed source/reader membership; see ElasticScaleGate for dynamic sets."""

    def __init__(self, sources: Iterable[int] = (0,), readers: Iterable[int] = (0,),
                 bound: int = DEFAULT_BOUND, seed: int = 0):
        if bound < 1:
            raise ValueError("flow-control bound must be >= 1")
        self._lock = threading.Lock()
        self._rng = random.Random(seed)
        self._bound = bound
        self._head = _Node(None, -1, Kind.DUMMY, MAX_LEVELS)
        self._handles: Dict[int, _Node] = {}
        self._last_tau: Dict[int, int] = {}
        # sources that have not inserted yet: their handle conceptually sits
        # before the first node, so nothing in the gate is ready
        self._virgin = set()
        for i in sources:
            self._register_source(i)
        self._cursors: Dict[int, _Node] = {}
        self._consumed: Dict[int, int] = {}
        for j in readers:
            self._cursors[j] = self._head
            self._consumed[j] = 0
        self._added = 0          # nodes linked, including Dummy/Flush
        self.added_tuples = 0    # Regular/Control adds only (instrumentation)
        self._min_consumed = 0
        self._since_prune = 0

    def _register_source(self, i: int):
        if i in self._handles:
            raise ValueError(f"duplicate source id {i}")
        self._handles[i] = self._head
        self._virgin.add(i)
        self._last_tau[i] = 0

    def _random_height(self) -> int:
        h = 1
        while h < MAX_LEVELS and self._rng.random() < LEVEL_P:
            h += 1
        return h

    # ---- add ------------------------------------------------------------

    def add(self, t: Tuple, i: int) -> None:
        """Insert t for source i.  May wait under flow control."""
        last = self._last_tau.get(i)
        if last is None:
            raise KeyError(f"unknown source id {i}")
        if t.tau < last:
            raise OrderingViolation(
                f"source {i} added tau={t.tau} after tau={last}"
            )
        if self._added - self._min_consumed >= self._bound:
            self._wait_for_room()
        with self._lock:
            node = self._link_sorted(t, flagged=True)
            old = self._handles[i]
            self._handles[i] = node
            if old is not self._head:
                old.handle_count -= 1
            else:
                self._virgin.discard(i)
            self._last_tau[i] = t.tau
            self.added_tuples += 1
            self._maybe_prune()

    def _wait_for_room(self):
        backoff = Backoff()
        while True:
            vals = list(self._consumed.values())
            self._min_consumed = min(vals, default=self._added)
            if self._added - self._min_consumed < self._bound:
                return
            backoff.wait()

    def _link_sorted(self, t: Tuple, flagged: bool = False) -> _Node:
        """Insert after every node with tau <= t.tau (stable ties). Lock held.

        The handle flag is set before the level-0 splice publishes the node,
        so a lock-free reader can never consume a source's newest tuple.
        """
        height = self._random_height()
        node = _Node(t, t.tau, t.kind, height)
        if flagged:
            node.handle_count = 1
        tau = t.tau
        pred = self._head
        for level in range(MAX_LEVELS - 1, 0, -1):
            idx = level - 1
            nxt = pred.tower[idx]
            while nxt is not None and nxt.tau <= tau:
                pred = nxt
                nxt = pred.tower[idx]
            if level < height:
                node.tower[idx] = nxt
                pred.tower[idx] = node
        nxt = pred.next0
        while nxt is not None and nxt.tau <= tau:
            pred = nxt
            nxt = pred.next0
        node.next0 = nxt
        pred.next0 = node
        self._added += 1
        return node

    def _link_after(self, anchor: _Node, t: Tuple, flagged: bool = False) -> _Node:
        """Insert t immediately after anchor, level 0 only.  Lock held."""
        node = _Node(t, t.tau, t.kind, 1)
        if flagged:
            node.handle_count = 1
        node.next0 = anchor.next0
        anchor.next0 = node
        self._added += 1
        return node

    # ---- get ------------------------------------------------------------

    def get(self, j: int) -> Optional[Tuple]:
        """Next ready tuple for reader j, or None.  Lock-free."""
        if self._virgin:
            return None
        cursor = self._cursors.get(j)
        if cursor is None:
            return None
        consumed = self._consumed
        try:
            while True:
                nxt = cursor.next0
                if nxt is None or nxt.handle_count > 0:
                    if j in consumed:
                        self._cursors[j] = cursor
                    return None
                cursor = nxt
                consumed[j] += 1
                kind = nxt.kind
                if kind is Kind.REGULAR or kind is Kind.CONTROL:
                    self._cursors[j] = cursor
                    return nxt.tuple
        except KeyError:
            # reader was removed while this call was in flight
            return None

    # ---- maintenance ----------------------------------------------------

    def _maybe_prune(self):
        self._since_prune += 1
        if self._since_prune < PRUNE_INTERVAL:
            return
        self._since_prune = 0
        pinned = {id(n) for n in self._cursors.values()}
        if id(self._head) in pinned:
            # some reader has consumed nothing yet; the prefix is still live
            return
        dead = set()
        node = self._head.next0
        while node is not None and node.handle_count == 0 and id(node) not in pinned:
            dead.add(id(node))
            node = node.next0
        if not dead:
            return
        self._head.next0 = node
        tower = self._head.tower
        for lvl in range(MAX_LEVELS - 1):
            nxt = tower[lvl]
            while nxt is not None and id(nxt) in dead:
                nxt = nxt.tower[lvl] if lvl < len(nxt.tower) else None
            tower[lvl] = nxt

    # ---- introspection (tests / debugging; take the lock) ---------------

    def ready_taus(self) -> list:
        """Taus of currently ready Regular/Control tuples, in order."""
        out = []
        with self._lock:
            if self._virgin:
                return out
            node = self._head.next0
            while node is not None and node.handle_count == 0:
                if node.kind is Kind.REGULAR or node.kind is Kind.CONTROL:
                    out.append(node.tau)
                node = node.next0
        return out

    def node_count(self) -> int:
        with self._lock:
            n = 0
            node = self._head.next0
            while node is not None:
                n += 1
                node = node.next0
            return n

    def node_kinds(self) -> list:
        with self._lock:
            out = []
            node = self._head.next0
            while node is not None:
                out.append((node.tau, node.kind))
                node = node.next0
            return out

    def pending(self) -> int:
        vals = list(self._consumed.values())
        return self._added - min(vals, default=self._added)

    @property
    def source_ids(self):
        return frozenset(self._handles)

    @property
    def reader_ids(self):
        return frozenset(self._cursors)
