"""Age-tiered retention: spacing floors and the recompression ladder.

Builds a store whose moments span three ages (an hour, a day, a week),
applies the retention schedule, and prints what each tier kept, dropped
and recompressed.
"""

import io

import numpy as np
from PIL import Image

from vidmem.store import MemoryStore


def main():
    store = MemoryStore(dim=8)
    vec = np.eye(8, dtype=np.float32)[0]
    rng = np.random.default_rng(1)
    pixels = rng.integers(0, 256, (600, 840, 3)).astype(np.uint8)

    now = 7 * 86_400.0
    blocks = [
        ("week-old, every 30 s", [i * 30.0 for i in range(40)]),
        ("day-old, every 5 s", [6 * 86_400.0 + i * 5.0 for i in range(40)]),
        ("minutes-old, every 0.5 s", [now - 120.0 + i * 0.5 for i in range(40)]),
    ]
    for _, times in blocks:
        for t in times:
            store.insert_moment(t, vec, pixels=pixels)
    # an event reference shields one old moment from the spacing walk
    store.insert_event([2], "the week-old moment something happened in", vec)

    print(f"{len(store.moments)} moments inserted, all with 840x600 pixels")
    report = store.apply_retention(now=now)
    print()
    print(f"{'tier':<8} {'assigned':>8} {'kept':>5} {'dropped':>8} "
          f"{'recompressed':>13}")
    for tier in report.tiers:
        print(f"{tier.name:<8} {tier.assigned:>8} {tier.pixels_kept:>5} "
              f"{tier.dropped_now:>8} {tier.recompressed_now:>13}")

    def side(m):
        with Image.open(io.BytesIO(m.jpeg)) as img:
            return max(img.size)

    survivors = [m for m in store.moments if m.jpeg is not None]
    oldest = survivors[0]
    linked = store.moments[2]
    print()
    print(f"oldest surviving frame: t={oldest.t_rel:.0f}s, longest side "
          f"{side(oldest)}px (tier label: {oldest.pixels_tier})")
    print(f"event-linked moment 2 survived: {linked.jpeg is not None}, "
          f"longest side {side(linked)}px")
    print(f"newest frame untouched: {side(store.moments[-1])}px")

    again = store.apply_retention(now=now)
    print()
    print(f"second application dropped {again.total_dropped_now} and "
          f"recompressed {sum(t.recompressed_now for t in again.tiers)}: "
          "the schedule is idempotent")


if __name__ == "__main__":
    main()
