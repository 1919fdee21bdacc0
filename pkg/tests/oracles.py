"""Independent brute-force oracles.

Everything in here deliberately avoids the package's algorithmic shortcuts:
literal per-microsecond loops, exhaustive enumeration, full instance
expansion.  Slow but obviously correct.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations


def tick_simulate_server(tasks, budget, period, horizon):
    """Literal per-microsecond deferrable-server simulation.

    tasks: sequence of (name, wcet, period) sorted by priority descending.
    Returns the set of (task, release) pairs that missed their deadline.
    """
    remaining = {}  # (task, release) -> remaining wcet
    order = []  # pending jobs in dispatch order
    deadlines = {}
    misses = set()
    budget_left = 0
    for t in range(horizon):
        if t % period == 0:
            budget_left = budget
        for name, wcet, t_period in tasks:
            if t % t_period == 0:
                key = (name, t)
                remaining[key] = wcet
                deadlines[key] = t + t_period
                order.append(key)
        # deadline checks for anything still unfinished
        for key in list(order):
            if deadlines[key] == t and remaining[key] > 0:
                misses.add(key)
        if budget_left > 0 and order:
            # fixed priority: earliest task in the given order, FIFO within task
            ranked = sorted(
                order,
                key=lambda key: (
                    next(i for i, tk in enumerate(tasks) if tk[0] == key[0]),
                    key[1],
                ),
            )
            key = ranked[0]
            remaining[key] -= 1
            budget_left -= 1
            if remaining[key] == 0:
                order.remove(key)
                if t + 1 > deadlines[key]:
                    misses.add(key)
    for key in order:
        if deadlines[key] <= horizon and remaining[key] > 0:
            misses.add(key)
    return misses


def expand_slot_instances(slots, major_frame):
    """All (start, end, job) service intervals of a slot table within one frame."""
    intervals = []
    for slot in slots:
        for k in range(major_frame // slot.period):
            start = slot.offset + k * slot.period
            intervals.append((start, start + slot.length, slot.job))
    return intervals


def slots_overlap(slots, major_frame):
    """True iff any two instances from different slots overlap (brute force)."""
    intervals = expand_slot_instances(slots, major_frame)
    for (s1, e1, j1), (s2, e2, j2) in combinations(intervals, 2):
        if (j1, s1) == (j2, s2):
            continue
        if s1 < e2 and s2 < e1:
            return True
    return False


def min_feasible_offset(slots, major_frame, tick, length, period):
    """Exhaustive search for the smallest tick-aligned conflict-free offset."""
    busy = [False] * major_frame
    for start, end, _ in expand_slot_instances(slots, major_frame):
        for t in range(start, end):
            busy[t] = True
    for offset in range(0, period - length + 1, tick):
        ok = True
        for k in range(major_frame // period):
            start = offset + k * period
            if any(busy[start : start + length]):
                ok = False
                break
        if ok:
            return offset
    return None


def worst_fit_core(utilizations):
    """Index of the least-loaded core, ties to the lowest index."""
    best = 0
    for i, u in enumerate(utilizations):
        if u < utilizations[best]:
            best = i
    return best


def least_squares_slope(times_s, values):
    """Closed-form simple linear regression slope."""
    n = len(times_s)
    mean_t = sum(times_s) / n
    mean_v = sum(values) / n
    num = sum((t - mean_t) * (v - mean_v) for t, v in zip(times_s, values))
    den = sum((t - mean_t) ** 2 for t in times_s)
    return num / den


def enumerate_eviction_sets(victims, max_size):
    """Every subset of victims up to max_size, smallest first."""
    for size in range(1, max_size + 1):
        for combo in combinations(victims, size):
            yield combo
