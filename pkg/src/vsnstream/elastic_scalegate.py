"""ScaleGate with dynamic source/reader membership.

Membership mutations carry single-winner semantics: each of the four methods
holds its own claim flag, so among concurrent callers of the same method
exactly one proceeds (the runtime additionally never overlaps two
reconfigurations).  New sources are gated behind a Dummy node placed at the
caller's handle; removed sources leave a Flush node so their buffered tuples
become ready.  Dummy/Flush nodes are ordering participants but are never
returned by get.
"""

from __future__ import annotations

import threading
from typing import Iterable, Optional

from .core import Kind, Tuple
from .scalegate import DEFAULT_BOUND, ScaleGate


class ElasticScaleGate(ScaleGate):
    def __init__(self, sources: Iterable[int] = (0,), readers: Iterable[int] = (0,),
                 bound: int = DEFAULT_BOUND, seed: int = 0):
        super().__init__(sources, readers, bound=bound, seed=seed)
        self._claim_add_readers = threading.Lock()
        self._claim_remove_readers = threading.Lock()
        self._claim_add_sources = threading.Lock()
        self._claim_remove_sources = threading.Lock()

    # ---- readers ----------------------------------------------------------

    def add_readers(self, new_readers: Iterable[int], j: int) -> bool:
        """Register new readers whose next tuple equals caller j's next tuple."""
        new_readers = set(new_readers)
        if not self._claim_add_readers.acquire(blocking=False):
            return False
        try:
            if j not in self._cursors:
                return False
            if any(r in self._cursors for r in new_readers):
                return False
            cursor = self._cursors[j]
            count = self._consumed[j]
            for r in new_readers:
                self._consumed[r] = count
                self._cursors[r] = cursor
            return True
        finally:
            self._claim_add_readers.release()

    def remove_readers(self, readers: Iterable[int]) -> bool:
        """Drop readers; their lag no longer holds back flow control."""
        readers = set(readers)
        if not self._claim_remove_readers.acquire(blocking=False):
            return False
        try:
            if any(r not in self._cursors for r in readers):
                return False
            for r in readers:
                del self._cursors[r]
                del self._consumed[r]
            return True
        finally:
            self._claim_remove_readers.release()

    # ---- sources ----------------------------------------------------------

    def add_sources(self, new_sources: Iterable[int], caller: int) -> bool:
        """Register new sources, each gated behind a Dummy at caller's handle."""
        new_sources = set(new_sources)
        if not self._claim_add_sources.acquire(blocking=False):
            return False
        try:
            if caller not in self._handles:
                return False
            if any(s in self._handles for s in new_sources):
                return False
            with self._lock:
                anchor = self._handles[caller]
                tau = self._last_tau[caller]
                for s in new_sources:
                    dummy = Tuple(tau, kind=Kind.DUMMY)
                    node = self._link_after(anchor, dummy, flagged=True)
                    self._handles[s] = node
                    self._last_tau[s] = tau
            return True
        finally:
            self._claim_add_sources.release()

    def remove_sources(self, sources: Iterable[int]) -> bool:
        """Retire sources; a Flush node releases each one's buffered tuples."""
        sources = set(sources)
        if not self._claim_remove_sources.acquire(blocking=False):
            return False
        try:
            if any(s not in self._handles for s in sources):
                return False
            for s in sources:
                self._flush_source(s)
            return True
        finally:
            self._claim_remove_sources.release()

    def _flush_source(self, s: int) -> None:
        """Unconditional single-source retirement (also used at shutdown)."""
        with self._lock:
            handle = self._handles.pop(s)
            tau = self._last_tau.pop(s)
            self._virgin.discard(s)
            flush = Tuple(tau, kind=Kind.FLUSH)
            self._link_after(handle, flush, flagged=False)
            if handle is not self._head:
                handle.handle_count -= 1
