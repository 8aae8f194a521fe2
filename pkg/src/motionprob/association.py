"""Greedy nearest-timestamp association shared by dataset loading and
trajectory evaluation."""

from __future__ import annotations

import numpy as np


def associate_timestamps(
    times_a, times_b, max_gap: float = 0.02
) -> list[tuple[int, int]]:
    """Pair indices of two timestamp lists by smallest absolute difference.

    Candidate pairs within max_gap are taken greedily in order of increasing
    gap; every index is matched at most once. The result is sorted by the
    first list's index.
    """
    ta = np.asarray(times_a, dtype=float)
    tb = np.asarray(times_b, dtype=float)
    candidates = []
    for i, t in enumerate(ta):
        close = np.nonzero(np.abs(tb - t) <= max_gap)[0]
        for j in close:
            candidates.append((abs(tb[j] - t), i, int(j)))
    candidates.sort()
    used_a: set[int] = set()
    used_b: set[int] = set()
    matches = []
    for _, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        matches.append((i, j))
    matches.sort()
    return matches
