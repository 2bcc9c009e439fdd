"""Define your own operator and run it on both execution modes.

An OperatorDef bundles window geometry with a handful of pure functions:

    f_MK  tuple -> the keys it contributes to
    f_U   fold one tuple into one key's window state
    f_O   turn an expiring window's state into output payloads
    f_S   slide shared state when the boundary advances (single-instance
          window types only; unused here)

The operator below averages sensor readings over 10-second windows that
advance every 5 seconds.  The same definition runs unchanged on the
shared-state engine (workers share one ingress buffer and one window store)
and on the shared-nothing executor (each instance owns a private buffer and
private state, and every tuple is forwarded to each instance that owns one
of its keys).  Their output multisets are identical.

Run:  python3 demos/custom_operator.py
"""

import random

from vsnstream.bench import canonical_digest
from vsnstream.core import WT, Tuple, WindowSpec
from vsnstream.operator import OperatorDef
from vsnstream.runtime import SNExecutor, setup


def sensor_average_op(wa: int = 5_000, ws: int = 10_000) -> OperatorDef:
    """Mean reading per sensor per window.  Payload in: (sensor, reading);
    payload out: (sensor, average, samples)."""

    def f_MK(t):
        return (t.payload[0],)

    def f_U(windows, t):
        w = windows[0]
        total, count = w.zeta or (0.0, 0)
        return ((total + t.payload[1], count + 1),), ()

    def f_O(windows):
        w = windows[0]
        if w.zeta is None:
            return []
        total, count = w.zeta
        return [(w.k, round(total / count, 3), count)]

    return OperatorDef(
        name="sensor-average",
        spec=WindowSpec(wa=wa, ws=ws, wt=WT.MULTI),
        I=1,
        f_MK=f_MK,
        f_U=f_U,
        f_O=f_O,
    )


def make_readings(n: int = 600, sensors: int = 5, seed: int = 11) -> list:
    """Synthetic stream: each sensor wanders around its own baseline."""
    rng = random.Random(seed)
    out = []
    tau = 0
    for _ in range(n):
        tau += rng.randint(10, 40)
        idx = rng.randrange(sensors)
        reading = rng.gauss(20.0 + 5.0 * idx, 3.0)
        out.append(Tuple(tau, (f"sensor-{idx}", reading)))
    return out


def main() -> None:
    readings = make_readings()
    print(f"input: {len(readings)} readings, event times 0..{readings[-1].tau} ms")

    # Shared-nothing: one isolated instance, the plain sequential baseline.
    sn = SNExecutor(sensor_average_op(), 1)
    sn_out = sn.run((t, 0) for t in make_readings())
    sn.close()

    # Shared-state: three workers over one buffer and one window store.
    engine = setup(sensor_average_op(), 3, 3)
    for t in readings:
        engine.add(t, stream=0)
    engine.close()
    vsn_out = engine.drain_outputs()

    print(f"outputs: shared-nothing={len(sn_out)}, shared-state={len(vsn_out)}")
    d_sn, d_vsn = canonical_digest(sn_out), canonical_digest(vsn_out)
    print(f"digest shared-nothing: {d_sn}")
    print(f"digest shared-state:   {d_vsn}")
    assert d_sn == d_vsn, "execution modes must produce the same output multiset"
    print("output multisets are identical.")

    print("\nlast-window averages:")
    last_tau = max(t.tau for t in vsn_out)
    for t in sorted(vsn_out, key=lambda t: t.payload):
        if t.tau == last_tau:
            sensor, avg, count = t.payload
            print(f"  {sensor}: {avg} over {count} samples")


if __name__ == "__main__":
    main()
