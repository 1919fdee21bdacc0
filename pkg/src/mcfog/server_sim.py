"""Exact execution of a deferrable server hosting fixed-priority tasks.

This is the ground truth the admission test is measured against and the engine
the cluster simulator uses to run admitted servers: integer microsecond time,
budget Q restored to full at every multiple of T_s and preserved while idle,
highest-priority pending job served whenever budget remains.  The loop advances
event-to-event but is equivalent to a per-microsecond tick simulation (the test
suite cross-checks that equivalence against a literal tick loop).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Optional, Sequence

from .rt_admission import ResolvedTask, priority_sort_key


@dataclass
class Activation:
    """One periodic job of a task: its release, service window and verdict."""

    task: str
    release: int
    deadline: int
    start: Optional[int] = None  # first instant of service
    completion: Optional[int] = None
    missed: bool = False

    @property
    def latency(self) -> Optional[int]:
        """Activation latency: delay from release until service begins."""
        if self.start is None:
            return None
        return self.start - self.release


def hyperperiod(periods: Sequence[int]) -> int:
    return reduce(math.lcm, periods)


class _PendingJob:
    __slots__ = ("activation", "remaining")

    def __init__(self, activation: Activation, wcet: int):
        self.activation = activation
        self.remaining = wcet


def simulate_server(
    tasks: Sequence[ResolvedTask],
    budget: int,
    period: int,
    horizon: Optional[int] = None,
) -> list[Activation]:
    """Run the server over [0, horizon) with all tasks released at time zero.

    Default horizon is the hyperperiod of the task periods and the server
    period, so every released activation's deadline falls inside the run.
    Activations not finished by their deadline are flagged missed (execution
    continues past the miss; backlog carries over).
    """
    if budget <= 0 or budget > period:
        raise ValueError("budget must satisfy 0 < budget <= period")
    if horizon is None:
        horizon = hyperperiod([t.period for t in tasks] + [period])

    ordered = sorted(tasks, key=priority_sort_key)
    next_release = {t.name: 0 for t in ordered}
    queues: dict[str, list[_PendingJob]] = {t.name: [] for t in ordered}
    activations: list[Activation] = []

    now = 0
    budget_left = budget
    next_replenish = period

    while now < horizon:
        while next_replenish <= now:
            budget_left = budget
            next_replenish += period
        for task in ordered:
            while next_release[task.name] <= now:
                release = next_release[task.name]
                act = Activation(task=task.name, release=release, deadline=release + task.period)
                activations.append(act)
                queues[task.name].append(_PendingJob(act, task.wcet))
                next_release[task.name] += task.period

        upcoming_release = min(next_release.values()) if ordered else horizon
        next_event = min(horizon, upcoming_release, next_replenish)

        job = None
        for task in ordered:
            if queues[task.name]:
                job = queues[task.name][0]
                break

        if job is None or budget_left == 0:
            now = next_event
            continue

        if job.activation.start is None:
            job.activation.start = now
        delta = min(job.remaining, budget_left, next_event - now)
        job.remaining -= delta
        budget_left -= delta
        now += delta
        if job.remaining == 0:
            job.activation.completion = now
            if now > job.activation.deadline:
                job.activation.missed = True
            queues[job.activation.task].pop(0)

    # anything still pending past its deadline at the horizon is a miss
    for queue in queues.values():
        for job in queue:
            if job.activation.deadline <= horizon:
                job.activation.missed = True
    return activations


def deadline_misses(activations: Sequence[Activation]) -> list[Activation]:
    return [a for a in activations if a.missed]
