"""Bundled operator definitions.

Four windowed operators over text and numeric streams — per-hashtag longest
message, word counting, word-pair counting, and a two-stream sliding join —
plus a pass-through used to measure raw engine overhead.  Each factory
returns an OperatorDef the engine or the shared-nothing executor can run
unchanged.

`map_aggregate_stages` builds the classic two-stage equivalent of the keyed
aggregates (a stateless exploding map feeding a single-key aggregate), used
by the tests as an independent oracle for the direct parallel form.
"""

from __future__ import annotations

import math
from collections import deque
from typing import Callable, Iterable, Optional

from .core import WT, Tuple, WindowSpec
from .operator import OperatorDef
from .runtime import add_work

SECOND_MS = 1_000
MINUTE_MS = 60_000


# ---- text utilities -----------------------------------------------------------


def tokenize(text: str) -> list:
    """Lowercased tokens split on whitespace."""
    return text.lower().split()


def words_of(text: str) -> set:
    return set(tokenize(text))


def hashtags_of(text: str) -> set:
    """'#'-prefixed tokens, with the marker stripped."""
    out = set()
    for tok in tokenize(text):
        if tok.startswith("#"):
            tag = tok.lstrip("#")
            if tag:
                out.add(tag)
    return out


def ordered_pairs(tokens: list, max_distance=None) -> set:
    """Position-ordered pairs (tokens[i], tokens[j]) with i < j and
    j - i <= max_distance (None or inf: unbounded)."""
    n = len(tokens)
    if max_distance is None or max_distance == math.inf:
        limit = n
    else:
        limit = int(max_distance)
    out = set()
    for i in range(n):
        for j in range(i + 1, min(n, i + limit + 1)):
            out.add((tokens[i], tokens[j]))
    return out


# ---- keyed counting / max aggregates --------------------------------------------


def _counting_def(name: str, keys_fn: Callable, fold, emit, wa: int, ws: int):
    def f_MK(t):
        return keys_fn(t.payload[1])

    def f_U(windows, t):
        w = windows[0]
        return (fold(w.zeta, t),), ()

    def f_O(windows):
        w = windows[0]
        return [emit(w.k, w.zeta)]

    return OperatorDef(
        name=name,
        spec=WindowSpec(wa=wa, ws=ws, wt=WT.MULTI),
        I=1,
        f_MK=f_MK,
        f_U=f_U,
        f_O=f_O,
    )


def hashtag_maxlen_op(wa: int = 30 * MINUTE_MS, ws: int = 60 * MINUTE_MS) -> OperatorDef:
    """Longest message length seen per hashtag, over sliding windows.

    Input payload: (user, text); output: (hashtag, max_length)."""
    return _counting_def(
        "hashtag-maxlen",
        hashtags_of,
        lambda zeta, t: max(zeta or 0, len(t.payload[1])),
        lambda k, zeta: (k, zeta or 0),
        wa,
        ws,
    )


def wordcount_op(wa: int = 60 * SECOND_MS, ws: int = 120 * SECOND_MS) -> OperatorDef:
    """Occurrences per distinct word per window (one hit per tuple).

    Input payload: (user, text); output: (word, count)."""
    return _counting_def(
        "wordcount",
        words_of,
        lambda zeta, t: (zeta or 0) + 1,
        lambda k, zeta: (k, zeta or 0),
        wa,
        ws,
    )


def paircount_op(
    max_distance=None, wa: int = 60 * SECOND_MS, ws: int = 120 * SECOND_MS
) -> OperatorDef:
    """Co-occurrence counts of position-ordered word pairs within a tuple,
    restricted to pairs at most max_distance positions apart.

    Input payload: (user, text); output: (first, second, count).  The key
    fan-out per tuple grows quadratically with text length, which makes this
    the high-duplication workload for routing comparisons."""
    return _counting_def(
        "paircount",
        lambda text: ordered_pairs(tokenize(text), max_distance),
        lambda zeta, t: (zeta or 0) + 1,
        lambda k, zeta: (k[0], k[1], zeta or 0),
        wa,
        ws,
    )


# ---- two-stream sliding join -------------------------------------------------------


class JoinWindowState:
    """Per-window join state: a round-robin counter and the FIFO of tuples
    this window stores.  Deliberately without __len__: a window whose FIFO
    is momentarily empty still owns its counter and must survive sliding."""

    __slots__ = ("c", "T")

    def __init__(self):
        self.c = 0
        self.T = deque()


def band_predicate(width: int = 10) -> Callable:
    """Match numeric pairs when both coordinates differ by at most width."""

    def match(left, right):
        return abs(left[0] - right[0]) <= width and abs(left[1] - right[1]) <= width

    return match


def hedge_predicate(threshold: float = -1.05) -> Callable:
    """Match trades of different instruments whose normalized deviations
    ND = (price - average) / average satisfy ND_right / ND_left >= threshold
    (inclusive).  Payload: (instrument_id, price, average)."""

    def match(left, right):
        if left[0] == right[0]:
            return False
        nd_left = (left[1] - left[2]) / left[2]
        if nd_left == 0:
            return False
        nd_right = (right[1] - right[2]) / right[2]
        return nd_right / nd_left >= threshold

    return match


def scalejoin_op(
    keys: int = 1000,
    predicate: Optional[Callable] = None,
    ws: int = 600 * SECOND_MS,
    name: str = "scalejoin",
) -> OperatorDef:
    """Sliding-window join of two streams with shared-state storage balancing.

    Every tuple is presented to all `keys` windows (so every instance can
    compare it against its stored share), matched against the opposite
    stream's stored tuples within WS, and stored under exactly one key chosen
    round-robin by the replicated counter c.  Matches are emitted with the
    left payload before the right.  predicate(left_payload, right_payload)
    defaults to the +/-10 band on the first two fields."""
    if keys < 1:
        raise ValueError("need at least one key")
    if predicate is None:
        predicate = band_predicate()
    all_keys = frozenset(range(keys))

    def f_MK(t):
        return all_keys

    def f_U(windows, t):
        own = windows[t.stream]
        opp = windows[1 - t.stream]
        own_state = own.zeta if own.zeta is not None else JoinWindowState()
        opp_state = opp.zeta if opp.zeta is not None else JoinWindowState()
        own_state.c += 1
        opp_state.c += 1
        fifo = opp_state.T
        horizon = t.tau - ws
        while fifo and fifo[0].tau < horizon:
            fifo.popleft()
        add_work(len(fifo))
        payloads = []
        if t.stream == 0:
            for stored in fifo:
                if predicate(t.payload, stored.payload):
                    payloads.append(t.payload + stored.payload)
        else:
            for stored in fifo:
                if predicate(stored.payload, t.payload):
                    payloads.append(stored.payload + t.payload)
        if own_state.c % keys == own.k:
            own_state.T.append(t)
        if t.stream == 0:
            return (own_state, opp_state), payloads
        return (opp_state, own_state), payloads

    return OperatorDef(
        name=name,
        spec=WindowSpec(wa=ws, ws=ws, wt=WT.SINGLE),
        I=2,
        f_MK=f_MK,
        f_U=f_U,
        f_O=lambda windows: (),
        f_S=lambda windows: tuple(w.zeta for w in windows),  # keep stores intact
        f_mu="identity",
        flush_on_close=False,
    )


# ---- pass-through ---------------------------------------------------------------


def passthrough_op(n: int = 1, delta: int = 1) -> OperatorDef:
    """Stateless forwarding at minimal window granularity: every instance
    forwards every tuple's payload for each key it owns, so a run with n keys
    emits n copies per input.  Measures raw buffer + scheduling overhead."""
    if n < 1:
        raise ValueError("need at least one key")
    all_keys = frozenset(range(n))

    def f_MK(t):
        return all_keys

    def f_U(windows, t):
        return (None,) * len(windows), [t.payload]

    return OperatorDef(
        name="passthrough",
        spec=WindowSpec(wa=delta, ws=delta, wt=WT.SINGLE),
        I=2,
        f_MK=f_MK,
        f_U=f_U,
        f_O=lambda windows: (),
        f_mu="identity",
        flush_on_close=False,
    )


# ---- two-stage map/aggregate equivalents ----------------------------------------


def map_aggregate_stages(kind: str, max_distance=None, wa=None, ws=None):
    """(map_fn, aggregate_op) computing the same result as the direct keyed
    aggregate: map_fn explodes a tuple into one copy per key carrying the
    pre-aggregated attribute, and the aggregate folds copies by their key
    field.  Feeding map_fn's output through any executor of the aggregate
    reproduces the direct operator's output multiset."""
    if kind == "hashtag-maxlen":
        direct = hashtag_maxlen_op(wa or 30 * MINUTE_MS, ws or 60 * MINUTE_MS)

        def map_fn(t):
            text = t.payload[1]
            return [Tuple(t.tau, (k, len(text))) for k in sorted(hashtags_of(text))]

        fold = lambda zeta, t: max(zeta or 0, t.payload[1])
        emit = lambda k, zeta: (k, zeta or 0)
    elif kind == "wordcount":
        direct = wordcount_op(wa or 60 * SECOND_MS, ws or 120 * SECOND_MS)

        def map_fn(t):
            return [Tuple(t.tau, (k, 1)) for k in sorted(words_of(t.payload[1]))]

        fold = lambda zeta, t: (zeta or 0) + t.payload[1]
        emit = lambda k, zeta: (k, zeta or 0)
    elif kind == "paircount":
        direct = paircount_op(max_distance, wa or 60 * SECOND_MS, ws or 120 * SECOND_MS)

        def map_fn(t):
            pairs = ordered_pairs(tokenize(t.payload[1]), max_distance)
            return [Tuple(t.tau, (k, 1)) for k in sorted(pairs)]

        fold = lambda zeta, t: (zeta or 0) + t.payload[1]
        emit = lambda k, zeta: (k[0], k[1], zeta or 0)
    else:
        raise ValueError(f"no two-stage form for {kind!r}")

    def f_MK(t):
        return (t.payload[0],)

    def f_U(windows, t):
        return (fold(windows[0].zeta, t),), ()

    def f_O(windows):
        return [emit(windows[0].k, windows[0].zeta)]

    aggregate = OperatorDef(
        name=f"{direct.name}-agg",
        spec=direct.spec,
        I=1,
        f_MK=f_MK,
        f_U=f_U,
        f_O=f_O,
    )
    return map_fn, aggregate


# ---- registry ---------------------------------------------------------------------


REGISTRY: dict = {
    "hashtag-maxlen": hashtag_maxlen_op,
    "wordcount": wordcount_op,
    "paircount": paircount_op,
    "scalejoin": scalejoin_op,
    "passthrough": passthrough_op,
}


def make_operator(name: str, **params) -> OperatorDef:
    """Build a bundled operator by registry name."""
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ValueError(
            f"unknown operator {name!r}; available: {', '.join(sorted(REGISTRY))}"
        ) from None
    return factory(**params)
