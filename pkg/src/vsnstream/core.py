"""Foundational value types: event time, tuples, schemas, keys, window arithmetic.

Event time is a plain int counting milliseconds (delta = 1 ms) since stream
start.  All window parameters (WA, WS) are durations in the same unit.
"""

from __future__ import annotations

import csv
import enum
import functools
import hashlib
import io
from dataclasses import dataclass
from typing import Any, Iterable, Optional, Sequence

# One discrete event-time increment, in milliseconds.
DELTA = 1

EventTime = int


class Kind(enum.IntEnum):
    REGULAR = 0
    CONTROL = 1
    DUMMY = 2
    FLUSH = 3


class WT(enum.Enum):
    SINGLE = "single"
    MULTI = "multi"


class SchemaError(ValueError):
    pass


class Tuple:
    """A timestamped record.

    ``stream`` is the logical input stream index (0-based) for operators with
    I > 1; ``control`` carries the reconfiguration payload of Control tuples;
    ``arrival_ns`` is a wall-clock stamp set once at ingress for latency
    accounting.  Values are never mutated after construction except for the
    ingress stamp and the lazily computed key cache.
    """

    __slots__ = ("tau", "kind", "payload", "stream", "control", "arrival_ns", "keys_cache")

    def __init__(self, tau, payload=(), kind=Kind.REGULAR, stream=0, control=None):
        if tau < 0:
            raise ValueError("event time must be non-negative")
        self.tau = tau
        self.kind = kind
        self.payload = tuple(payload)
        self.stream = stream
        self.control = control
        self.arrival_ns = None
        self.keys_cache = None

    def __eq__(self, other):
        return (
            isinstance(other, Tuple)
            and self.tau == other.tau
            and self.kind == other.kind
            and self.payload == other.payload
            and self.stream == other.stream
        )

    def __hash__(self):
        return hash((self.tau, int(self.kind), self.payload, self.stream))

    def __repr__(self):
        if self.kind is Kind.REGULAR:
            return f"Tuple({self.tau}, {list(self.payload)!r})"
        return f"Tuple({self.tau}, {list(self.payload)!r}, kind={self.kind.name})"


def control_tuple(tau, spec):
    """Control tuple carrying reconfiguration parameters (epoch, members, mapping)."""
    t = Tuple(tau, (spec.epoch, spec.members, spec.mapping), kind=Kind.CONTROL)
    t.control = spec
    return t


_FIELD_TYPES = {
    "int": int,
    "float": float,
    "str": str,
    "bool": bool,
}


@dataclass(frozen=True)
class Schema:
    """Declared payload layout: ordered (name, type) field descriptors."""

    name: str
    fields: tuple  # of (field_name, type_name)

    def __post_init__(self):
        names = [n for n, _ in self.fields]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate field names in schema {self.name}")
        for _, ty in self.fields:
            if ty not in _FIELD_TYPES:
                raise SchemaError(f"unknown field type {ty!r} in schema {self.name}")

    def validate(self, payload: Sequence[Any]) -> None:
        if len(payload) != len(self.fields):
            raise SchemaError(
                f"schema {self.name}: expected {len(self.fields)} fields, got {len(payload)}"
            )
        for value, (fname, ty) in zip(payload, self.fields):
            pytype = _FIELD_TYPES[ty]
            if ty == "float":
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise SchemaError(f"schema {self.name}: field {fname} not a number")
            elif not isinstance(value, pytype) or (
                pytype is int and isinstance(value, bool)
            ):
                raise SchemaError(f"schema {self.name}: field {fname} not {ty}")

    # Replay-file line format: tau,field1,field2,...  (csv quoting for text)
    def format_line(self, t: Tuple) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="")
        w.writerow([t.tau, *t.payload])
        return buf.getvalue()

    def parse_line(self, line: str, stream: int = 0) -> Tuple:
        row = next(csv.reader([line]))
        if len(row) != len(self.fields) + 1:
            raise SchemaError(
                f"schema {self.name}: line has {len(row) - 1} fields, expected {len(self.fields)}"
            )
        tau = int(row[0])
        payload = []
        for raw, (_, ty) in zip(row[1:], self.fields):
            if ty == "int":
                payload.append(int(raw))
            elif ty == "float":
                payload.append(float(raw))
            elif ty == "bool":
                payload.append(raw in ("True", "true", "1"))
            else:
                payload.append(raw)
        self.validate(payload)
        return Tuple(tau, payload, stream=stream)


def key_bytes(key) -> bytes:
    if isinstance(key, str):
        return b"s" + key.encode("utf-8")
    if isinstance(key, bool):
        return b"b1" if key else b"b0"
    if isinstance(key, int):
        return b"i" + str(key).encode()
    if isinstance(key, float):
        return b"f" + repr(key).encode()
    if isinstance(key, tuple):
        return b"(" + b"\x1f".join(key_bytes(part) for part in key) + b")"
    raise TypeError(f"unsupported key type {type(key).__name__}")


@functools.lru_cache(maxsize=1 << 16)
def stable_hash64(key, seed: int = 0) -> int:
    """Deterministic 64-bit key hash, stable across runs and processes.

    Memoized: routing hashes the same keys on every tuple, and the hash is
    pure, so a bounded cache turns the hot path into a dict hit."""
    h = hashlib.blake2b(
        key_bytes(key), digest_size=8, salt=seed.to_bytes(8, "little")
    )
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class WindowSpec:
    wa: int
    ws: int
    wt: WT = WT.MULTI

    def __post_init__(self):
        if not (0 < self.wa <= self.ws):
            raise ValueError("window spec requires 0 < WA <= WS")


class WindowInstance:
    """Per-key window state covering [l, l + WS); right boundary exclusive."""

    __slots__ = ("zeta", "l", "k")

    def __init__(self, zeta, l, k):
        self.zeta = zeta
        self.l = l
        self.k = k

    def __repr__(self):
        return f"WindowInstance({self.zeta!r}, l={self.l}, k={self.k!r})"


class Watermark:
    """Monotone lower bound on future event times seen by one holder."""

    __slots__ = ("value",)

    def __init__(self, value: int = 0):
        self.value = value

    def advance(self, tau: int) -> int:
        if tau > self.value:
            self.value = tau
        return self.value

    def __repr__(self):
        return f"Watermark({self.value})"


def earliest_left_boundary(tau: int, spec: WindowSpec) -> int:
    """Smallest l = ell*WA (l >= 0) with l <= tau < l + WS."""
    l = ((tau - spec.ws) // spec.wa + 1) * spec.wa
    return l if l > 0 else 0


def latest_left_boundary(tau: int, spec: WindowSpec) -> int:
    return (tau // spec.wa) * spec.wa


def window_left_boundaries(tau: int, spec: WindowSpec) -> list:
    """Every left boundary whose window contains tau, ascending.

    Boundaries below 0 are clamped out: streams start at event time 0.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    lo = earliest_left_boundary(tau, spec)
    hi = latest_left_boundary(tau, spec)
    return list(range(lo, hi + 1, spec.wa))


def expired(w: WindowInstance, watermark: int, spec: WindowSpec) -> bool:
    """True iff the window's right boundary is at or before the watermark."""
    return w.l + spec.ws <= watermark


def ms(spec: str) -> int:
    """Parse a duration like '5s', '30min', '100ms', '2h', or bare ms count."""
    s = spec.strip().lower()
    for suffix, scale in (("ms", 1), ("s", 1000), ("min", 60_000), ("m", 60_000), ("h", 3_600_000)):
        if s.endswith(suffix):
            body = s[: -len(suffix)]
            if body and body.replace(".", "", 1).isdigit():
                value = float(body) * scale
                if value != int(value):
                    raise ValueError(f"duration {spec!r} is not a whole number of ms")
                return int(value)
    if s.isdigit():
        return int(s)
    raise ValueError(f"cannot parse duration {spec!r}")
