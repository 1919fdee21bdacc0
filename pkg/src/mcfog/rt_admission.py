"""Worker-side real-time admission control.

Each real-time job gets one deferrable server (budget Q, period T_s) pinned to
one core.  Admission sizes the server from the job's resolved task set, runs a
compositional fixed-priority schedulability test against the server's
worst-case supply, places the server worst-fit across cores and accounts the
reserved bandwidth exactly (rational arithmetic throughout).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .model import Criticality, JobSpec, RtTask, WorkerNode, resolve_wcet


class WcetUnavailable(Exception):
    """The node's platform is not covered by a task's WCET vector."""


class Infeasible(Exception):
    """No server can host the task set (utilization above one)."""


class UnknownJob(KeyError):
    pass


class DuplicateJob(ValueError):
    pass


@dataclass(frozen=True)
class ResolvedTask:
    """A task with its WCET pinned to a concrete node."""

    name: str
    wcet: int  # microseconds on this node
    period: int  # microseconds
    priority: Optional[int] = None  # larger = higher; None = rate-monotonic

    @property
    def utilization(self) -> Fraction:
        return Fraction(self.wcet, self.period)


def priority_sort_key(task: ResolvedTask):
    """Sort key placing the highest-priority task first.

    Explicit priorities (larger wins) rank above rate-monotonic defaults;
    among defaulted tasks the shorter period wins.  Name breaks ties so every
    ordering in the system is total.
    """
    if task.priority is not None:
        return (0, -task.priority, task.period, task.name)
    return (1, task.period, task.name)


def resolve_task_set(job: JobSpec, node: WorkerNode) -> list[ResolvedTask]:
    """Resolve every task WCET for this node; WcetUnavailable if any task's
    platform vector does not cover it."""
    resolved = []
    for task in job.tasks:
        wcet = resolve_wcet(task, node, job.criticality)
        if wcet is None:
            raise WcetUnavailable(
                f"task {task.name} has no WCET for platform {node.platform!r}"
            )
        resolved.append(
            ResolvedTask(name=task.name, wcet=wcet, period=task.period, priority=task.priority)
        )
    return resolved


@dataclass(frozen=True)
class Server:
    """A per-job CPU reservation: budget Q replenished every period T_s."""

    job: str
    core: int
    budget: int  # Q, microseconds
    period: int  # T_s, microseconds

    @property
    def utilization(self) -> Fraction:
        return Fraction(self.budget, self.period)


def derive_server(tasks: Sequence[ResolvedTask]) -> tuple[int, int]:
    """Server parameters for a task set: period = shortest task period, budget
    sized to the utilization sum (rounded up, conservative).

    Raises Infeasible when the utilization sum exceeds one; note a task whose
    WCET exceeds its period always lands here.
    """
    if not tasks:
        raise Infeasible("empty task set")
    util = sum((t.utilization for t in tasks), Fraction(0))
    if util > 1:
        raise Infeasible(f"task set utilization {util} exceeds 1")
    t_s = min(t.period for t in tasks)
    q = math.ceil(t_s * util)
    return q, t_s


def supply_bound(q: int, t_s: int, t: int) -> int:
    """Worst-case CPU supply a deferrable server (budget q, period t_s)
    delivers to its backlogged workload in any interval of length t.

    The worst phase starts right after the budget was exhausted as early as
    possible within a period: a blackout of t_s - q, then q delivered at the
    start of every following period:

        sbf(t) = 0                  t <= t_s - q
        sbf(t) = m*q + min(r, q)    m, r = divmod(t - (t_s - q), t_s)
    """
    gap = t_s - q
    if t <= gap:
        return 0
    m, r = divmod(t - gap, t_s)
    return m * q + min(r, q)


def linear_supply_bound(q: int, t_s: int, t: int) -> Fraction:
    """Classic linear lower bound on server supply, zero until 2*(t_s - q).

    Strictly more pessimistic than supply_bound everywhere; kept as the cheap
    first-pass check and for its closed form.
    """
    return max(Fraction(0), Fraction(q, t_s) * (t - 2 * (t_s - q)))


def testing_points(task: ResolvedTask, higher: Sequence[ResolvedTask]) -> list[int]:
    """Demand-step instants for a fixed-priority test: all multiples of
    higher-priority periods up to the task's period, plus the period itself."""
    points = {task.period}
    for h in higher:
        points.update(range(h.period, task.period + 1, h.period))
    return sorted(points)


def inner_schedulable(tasks: Sequence[ResolvedTask], q: int, t_s: int) -> bool:
    """Compositional schedulability of a fixed-priority task set inside a
    deferrable server.

    Task i (implicit deadline = period) passes when some testing point t
    satisfies

        dbf_i(t) = C_i + sum_{j in hp(i)} ceil(t / T_j) * C_j  <=  sbf(t).

    The supply side is the deferrable-server staircase (supply_bound), the
    exact worst case for a server that is the sole owner of its bandwidth;
    the test is therefore sound with respect to tick-accurate execution and
    admits the utilization-sized servers produced by derive_server.
    """
    if not tasks:
        return True
    if q <= 0 or q > t_s:
        return False
    ordered = sorted(tasks, key=priority_sort_key)
    for i, task in enumerate(ordered):
        higher = ordered[:i]
        for t in testing_points(task, higher):
            demand = task.wcet + sum(
                ((t + h.period - 1) // h.period) * h.wcet for h in higher
            )
            if demand <= supply_bound(q, t_s, t):
                break
        else:
            return False
    return True


@dataclass
class CoreState:
    """Reservation ledger for one core."""

    core: int
    servers: dict[str, Server] = field(default_factory=dict)

    @property
    def utilization(self) -> Fraction:
        return sum((s.utilization for s in self.servers.values()), Fraction(0))


@dataclass(frozen=True)
class AdmissionResponse:
    """Outcome of an admission request: schedulability verdict, the node's
    per-core utilizations after the decision, and the allocation if granted."""

    schedulable: bool
    per_core_utilization: tuple[Fraction, ...]
    allocated: Optional[Server] = None
    reason: Optional[str] = None

    def to_json_obj(self) -> dict:
        return {
            "schedulable": self.schedulable,
            "per_core_utilization": [
                [u.numerator, u.denominator] for u in self.per_core_utilization
            ],
            "allocated": (
                {
                    "core": self.allocated.core,
                    "budget": self.allocated.budget,
                    "period": self.allocated.period,
                }
                if self.allocated
                else None
            ),
            "reason": self.reason,
        }


class RtAdmissionControl:
    """Admission agent for a single node.

    Single-writer: the owning node serializes calls; distinct nodes hold
    independent instances.
    """

    def __init__(self, node: WorkerNode):
        self.node = node
        self.cores = [CoreState(i) for i in range(node.cores)]
        self._placed: dict[str, Server] = {}

    def utilizations(self) -> tuple[Fraction, ...]:
        return tuple(core.utilization for core in self.cores)

    def server_for(self, job_id: str) -> Optional[Server]:
        return self._placed.get(job_id)

    def _evaluate(self, job: JobSpec) -> tuple[Optional[Server], Optional[str]]:
        """Pick the worst-fit core and test schedulability; no state change."""
        tasks = resolve_task_set(job, self.node)
        try:
            q, t_s = derive_server(tasks)
        except Infeasible as exc:
            return None, str(exc)
        # worst fit: lowest current utilization, ties to the lowest index
        core = min(self.cores, key=lambda c: (c.utilization, c.core))
        if core.utilization + Fraction(q, t_s) > 1:
            return None, "no core with enough remaining utilization"
        if not inner_schedulable(tasks, q, t_s):
            return None, "task set not schedulable under derived server"
        return Server(job=job.name, core=core.core, budget=q, period=t_s), None

    def check(self, job: JobSpec) -> AdmissionResponse:
        """Dry-run admission: same verdict as admit, nothing reserved."""
        server, reason = self._evaluate(job)
        if server is None:
            return AdmissionResponse(False, self.utilizations(), reason=reason)
        after = list(self.utilizations())
        after[server.core] += server.utilization
        return AdmissionResponse(True, tuple(after), allocated=server)

    def admit(self, job: JobSpec) -> AdmissionResponse:
        """Admit the job, reserving its server on the chosen core."""
        if job.name in self._placed:
            raise DuplicateJob(f"job {job.name} already holds a server on {self.node.id}")
        server, reason = self._evaluate(job)
        if server is None:
            return AdmissionResponse(False, self.utilizations(), reason=reason)
        self.cores[server.core].servers[job.name] = server
        self._placed[job.name] = server
        return AdmissionResponse(True, self.utilizations(), allocated=server)

    def release(self, job_id: str) -> None:
        """Drop the job's server; utilizations return exactly to prior values."""
        server = self._placed.pop(job_id, None)
        if server is None:
            raise UnknownJob(job_id)
        del self.cores[server.core].servers[job_id]

    def reinstate(self, server: Server) -> None:
        """Exact inverse of release: put a previously granted server back
        without re-running the test (used to roll back trial evictions)."""
        if server.job in self._placed:
            raise DuplicateJob(server.job)
        self.cores[server.core].servers[server.job] = server
        self._placed[server.job] = server
