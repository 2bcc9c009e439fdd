"""Sixty-second tour: run a bundled windowed operator on a generated stream.

A word-count operator folds each message into per-word sliding windows.  The
engine runs it on two workers that read one shared ingress buffer and fold
into one shared window store — tuples are never copied per worker, and each
key is folded by exactly one owner at a time.

Run:  python3 demos/quickstart.py
"""

from collections import Counter

from vsnstream.bench import RatePhase, gen_text_stream
from vsnstream.operators import wordcount_op
from vsnstream.runtime import setup


def main() -> None:
    # 4 seconds of event time at 250 messages/s, 8 distinct words per message.
    stream = list(
        gen_text_stream(seed=7, vocab=60, words_per_tuple=8, phases=(RatePhase(4, 250),))
    )
    print(f"input: {len(stream)} messages, event times 0..{stream[-1].tau} ms")

    # Count word occurrences over 2-second windows advancing every second.
    op = wordcount_op(wa=1_000, ws=2_000)

    # Worker pool of two, both connected from the start.
    engine = setup(op, 2, 2)
    for t in stream:
        engine.add(t, stream=0)
    engine.close()

    outputs = engine.drain_outputs()
    print(f"output: {len(outputs)} (word, count) tuples across all windows")

    # Each output tuple is stamped with its window's right boundary.
    totals = Counter()
    for t in outputs:
        word, count = t.payload
        totals[word] += count
    print("\nbusiest words (summed over windows):")
    for word, total in totals.most_common(5):
        print(f"  {word:<10} {total}")

    print("\nsample outputs from the last window:")
    last_tau = max(t.tau for t in outputs)
    last = [t for t in outputs if t.tau == last_tau]
    for t in sorted(last, key=lambda t: t.payload)[:3]:
        print(f"  tau={t.tau}  {t.payload}")

    m = engine.metrics()
    print(
        f"\nengine: processed={m['processed']} folds, emitted={m['emitted']}, "
        f"workers={m['active_instances']}"
    )


if __name__ == "__main__":
    main()
