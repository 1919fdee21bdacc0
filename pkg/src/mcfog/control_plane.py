"""Master-node logic: state store, criticality-aware scheduler with preemption,
resource accounting, reconciliation, replica routing and TMR voting.

The control plane is a single logical writer: scheduling and reconciliation run
as one loop over a state store, while node agents feed it heartbeats and
notifications.  Every ordering is totally tie-broken by identifier so that
identical state always yields identical decisions.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from itertools import combinations
from typing import Mapping, Optional, Sequence, Union

from .model import (
    AdditionalResources,
    BasicResources,
    Criticality,
    JobSpec,
    Network,
    PerPlatformWcet,
    ReplicaPolicy,
    WorkerNode,
    validate_job,
)
from .rt_admission import RtAdmissionControl, Server, WcetUnavailable
from .tdma import Grant, NetworkManager

logger = logging.getLogger(__name__)


class ValidationFailed(ValueError):
    def __init__(self, violations: Sequence[str]):
        super().__init__("; ".join(violations))
        self.violations = tuple(violations)


class UnknownJob(KeyError):
    pass


class UnknownNode(KeyError):
    pass


class NoLiveReplica(LookupError):
    pass


class Strategy(Enum):
    SPREAD = "Spread"
    PACK = "Pack"


DEFAULT_MIN_ASSURANCE = {Criticality.NO: 0, Criticality.LOW: 3, Criticality.HI: 7}
DEFAULT_STRATEGY = {
    Criticality.NO: Strategy.PACK,
    Criticality.LOW: Strategy.SPREAD,
    Criticality.HI: Strategy.SPREAD,
}


@dataclass(frozen=True)
class SchedulingPolicy:
    """Placement thresholds and per-criticality strategy knobs."""

    min_assurance: Mapping[Criticality, int] = field(
        default_factory=lambda: dict(DEFAULT_MIN_ASSURANCE)
    )
    strategy: Mapping[Criticality, Strategy] = field(
        default_factory=lambda: dict(DEFAULT_STRATEGY)
    )

    def __post_init__(self):
        object.__setattr__(self, "min_assurance", dict(self.min_assurance))
        object.__setattr__(self, "strategy", dict(self.strategy))
        if self.min_assurance.get(Criticality.NO, 0) != 0:
            raise ValueError("NO-criticality threshold must be 0")
        ordered = [self.min_assurance.get(c, 0) for c in Criticality]
        if ordered != sorted(ordered):
            raise ValueError("assurance thresholds must be non-decreasing in criticality")


@dataclass
class NodeRecord:
    """A registered node plus its live allocation and reported health."""

    node: WorkerNode
    rt: RtAdmissionControl
    reported_assurance: int
    allocated_basic: BasicResources = field(default_factory=BasicResources)
    allocated_additional: AdditionalResources = field(default_factory=AdditionalResources)
    last_heartbeat: int = 0
    alive: bool = True

    def remaining_basic(self) -> BasicResources:
        return self.node.basic_capacity.minus(self.allocated_basic)

    def remaining_additional(self) -> AdditionalResources:
        return self.node.additional_inventory.minus(self.allocated_additional)

    def least_loaded_remaining(self) -> Fraction:
        return 1 - min(self.rt.utilizations())

    def total_cpu_allocated(self) -> Fraction:
        return self.allocated_basic.cpu_utilization + sum(
            self.rt.utilizations(), Fraction(0)
        )


@dataclass
class Placement:
    spec: JobSpec
    node_id: str
    basic: BasicResources  # exactly what was deducted, for exact restore
    additional: AdditionalResources
    server: Optional[Server] = None
    grants: tuple[Grant, ...] = ()
    placed_at: int = 0
    assurance_at_placement: int = 0


@dataclass
class DeploymentRecord:
    name: str
    policy: ReplicaPolicy
    leader: str
    backups: list[str]


@dataclass
class ClusterState:
    nodes: dict[str, NodeRecord] = field(default_factory=dict)
    placements: dict[str, Placement] = field(default_factory=dict)
    deployments: dict[str, DeploymentRecord] = field(default_factory=dict)
    pending: list[JobSpec] = field(default_factory=list)
    job_status: dict[str, str] = field(default_factory=dict)
    job_origin: dict[str, str] = field(default_factory=dict)  # last reporting node

    def jobs_on(self, node_id: str) -> list[Placement]:
        return sorted(
            (p for p in self.placements.values() if p.node_id == node_id),
            key=lambda p: p.spec.name,
        )


# scheduling outcomes and reconciliation actions


@dataclass(frozen=True)
class Placed:
    job: str
    node: str


@dataclass(frozen=True)
class Preempted:
    """Placement that first had to evict strictly-lower-criticality victims."""

    job: str
    node: str
    victims: tuple[str, ...]
    victim_criticalities: tuple[Criticality, ...] = ()


@dataclass(frozen=True)
class Unschedulable:
    job: str


Outcome = Union[Placed, Preempted, Unschedulable]


@dataclass(frozen=True)
class Deploy:
    job: str
    node: str


@dataclass(frozen=True)
class Evict:
    job: str
    node: str


Action = Union[Deploy, Evict]


def tmr_vote(responses: Sequence) -> Optional[object]:
    """Majority payload (strictly more than half, byte equality); None
    when no payload reaches a majority."""
    if not responses:
        return None
    counts = Counter(responses)
    payload, count = counts.most_common(1)[0]
    if count * 2 > len(responses):
        return payload
    return None


class ControlPlane:
    """The in-process master: owns the state store, the network manager and
    one admission agent per registered node."""

    def __init__(
        self,
        policy: Optional[SchedulingPolicy] = None,
        heartbeat_timeout: int = 5_000_000,
    ):
        self.state = ClusterState()
        self.network = NetworkManager([])
        self.policy = policy or SchedulingPolicy()
        self.heartbeat_timeout = heartbeat_timeout
        self.last_outcomes: list[Outcome] = []
        self._tainted: set[str] = set()
        self._migrate_requests: list[tuple[str, tuple[str, ...]]] = []

    # --- registration and node-agent inputs ---------------------------------

    def register_node(self, node: WorkerNode, now: int = 0) -> None:
        if node.id in self.state.nodes:
            raise ValueError(f"node {node.id} already registered")
        self.state.nodes[node.id] = NodeRecord(
            node=node,
            rt=RtAdmissionControl(node),
            reported_assurance=node.assurance.effective(),
            last_heartbeat=now,
        )

    def add_network(self, network: Network) -> None:
        self.network.add_network(network)

    def heartbeat(
        self,
        node_id: str,
        now: int,
        effective_assurance: Optional[int] = None,
        job_statuses: Optional[Mapping[str, str]] = None,
    ) -> None:
        record = self.state.nodes.get(node_id)
        if record is None:
            raise UnknownNode(node_id)
        record.last_heartbeat = now
        record.alive = True
        if effective_assurance is not None:
            record.reported_assurance = effective_assurance
        for job, status in (job_statuses or {}).items():
            self.state.job_status[job] = status
            self.state.job_origin[job] = node_id

    def notify_migrate(self, node_id: str, jobs: Sequence[str]) -> None:
        """MigrateRequest from an assurance agent; handled next reconcile."""
        self._migrate_requests.append((node_id, tuple(jobs)))

    def notify_killed(self, node_id: str, job_id: str) -> None:
        """A node-side kill (assurance stage two): the job re-enters pending."""
        placement = self.state.placements.get(job_id)
        if placement is not None and placement.node_id == node_id:
            self._unplace(job_id)
            self.state.pending.append(placement.spec)
        self.state.job_status[job_id] = "killed"

    # --- user API ------------------------------------------------------------

    def submit(self, spec: JobSpec, now: int = 0) -> list[str]:
        """Validate and queue a job (or its expanded replicas); returns the
        job ids accepted.  Raises ValidationFailed with every violation."""
        result = validate_job(spec)
        if not result.ok:
            raise ValidationFailed(result.violations)
        if any(
            existing == spec.name or existing.startswith(spec.name + "-r")
            for existing in list(self.state.placements)
            + [p.name for p in self.state.pending]
            + list(self.state.deployments)
        ):
            raise ValidationFailed((f"job name {spec.name} already in use",))
        if spec.deployment is None:
            self.state.pending.append(spec)
            return [spec.name]
        replicas = self._expand_deployment(spec)
        self.state.pending.extend(replicas)
        return [r.name for r in replicas]

    def _expand_deployment(self, spec: JobSpec) -> list[JobSpec]:
        policy = spec.deployment
        replicas = []
        for i in range(policy.replicas):
            criticality = policy.leader_criticality if i == 0 else policy.backup_criticality
            replica = JobSpec(
                name=f"{spec.name}-r{i}",
                criticality=criticality,
                realtime=spec.realtime,
                basic_request=spec.basic_request,
                additional_request=spec.additional_request,
                network_requirements=spec.network_requirements,
                tasks=spec.tasks,
                deployment=None,
            )
            result = validate_job(replica)
            if not result.ok:
                raise ValidationFailed(
                    tuple(f"replica {replica.name}: {v}" for v in result.violations)
                )
            replicas.append(replica)
        self.state.deployments[spec.name] = DeploymentRecord(
            name=spec.name,
            policy=policy,
            leader=replicas[0].name,
            backups=[r.name for r in replicas[1:]],
        )
        return replicas

    def delete(self, name: str) -> list[str]:
        """Remove a job, or a whole deployment by its name; returns the job
        ids removed."""
        if name in self.state.deployments:
            record = self.state.deployments.pop(name)
            removed = []
            for job in [record.leader] + record.backups:
                removed.extend(self._delete_job(job))
            return removed
        removed = self._delete_job(name)
        if not removed:
            raise UnknownJob(name)
        return removed

    def _delete_job(self, job_id: str) -> list[str]:
        removed = []
        if job_id in self.state.placements:
            self._unplace(job_id)
            removed.append(job_id)
        kept = [p for p in self.state.pending if p.name != job_id]
        if len(kept) != len(self.state.pending):
            self.state.pending = kept
            removed.append(job_id)
        self.state.job_status.pop(job_id, None)
        return sorted(set(removed))

    def get_nodes(self) -> list[dict]:
        out = []
        for node_id in sorted(self.state.nodes):
            record = self.state.nodes[node_id]
            out.append(
                {
                    "id": node_id,
                    "platform": record.node.platform,
                    "rt_capable": record.node.rt_capable,
                    "effective_assurance": record.reported_assurance,
                    "per_core_utilization": [
                        [u.numerator, u.denominator] for u in record.rt.utilizations()
                    ],
                    "alive": record.alive,
                }
            )
        return out

    def get_jobs(self) -> list[dict]:
        out = []
        for job_id in sorted(self.state.placements):
            placement = self.state.placements[job_id]
            out.append(
                {
                    "name": job_id,
                    "state": "placed",
                    "node": placement.node_id,
                    "criticality": str(placement.spec.criticality),
                    "realtime": placement.spec.realtime,
                }
            )
        for spec in self.state.pending:
            out.append(
                {
                    "name": spec.name,
                    "state": "pending",
                    "node": None,
                    "criticality": str(spec.criticality),
                    "realtime": spec.realtime,
                }
            )
        return out

    def get_deployments(self) -> list[dict]:
        return [
            {
                "name": d.name,
                "leader": d.leader,
                "backups": list(d.backups),
                "tmr": d.policy.tmr,
            }
            for d in (
                self.state.deployments[k] for k in sorted(self.state.deployments)
            )
        ]

    # --- scheduler -----------------------------------------------------------

    def _node_passes(self, spec: JobSpec, node_id: str) -> bool:
        record = self.state.nodes[node_id]
        if not record.alive:
            return False
        if record.reported_assurance < self.policy.min_assurance[spec.criticality]:
            return False
        if spec.realtime and not record.node.rt_capable:
            return False
        request = spec.basic_request
        if spec.realtime:
            # CPU demand of real-time jobs is derived from tasks, not the
            # cpu_utilization field
            request = BasicResources(0, request.disk, request.mem)
        if not request.fits_within(record.remaining_basic()):
            return False
        if not spec.additional_request.fits_within(record.remaining_additional()):
            return False
        if spec.realtime and spec.criticality == Criticality.HI:
            for task in spec.tasks:
                if (
                    not isinstance(task.wcet, PerPlatformWcet)
                    or record.node.platform not in task.wcet.by_platform
                ):
                    return False
        if not self.network.network_feasible(spec, record.node):
            return False
        if spec.realtime:
            try:
                if not record.rt.check(spec).schedulable:
                    return False
            except WcetUnavailable:
                return False
        return True

    def filter_nodes(self, spec: JobSpec, exclude: frozenset[str] = frozenset()) -> list[str]:
        """Candidate nodes able to host the job right now, id order."""
        return [
            node_id
            for node_id in sorted(self.state.nodes)
            if node_id not in exclude
            and node_id not in self._tainted
            and self._node_passes(spec, node_id)
        ]

    def score_nodes(self, spec: JobSpec, candidates: Sequence[str]) -> list[str]:
        """Candidates best-first under the criticality's strategy.

        HI chases assurance, LOW settles for the least assurance that still
        fits, NO packs or spreads by total allocated CPU.
        """

        def key(node_id: str):
            record = self.state.nodes[node_id]
            if spec.criticality == Criticality.HI:
                return (
                    -record.reported_assurance,
                    -record.least_loaded_remaining(),
                    node_id,
                )
            if spec.criticality == Criticality.LOW:
                return (
                    -record.least_loaded_remaining(),
                    record.reported_assurance,
                    node_id,
                )
            if self.policy.strategy[Criticality.NO] == Strategy.PACK:
                return (-record.total_cpu_allocated(), node_id)
            return (record.total_cpu_allocated(), node_id)

        return sorted(candidates, key=key)

    def _commit(self, spec: JobSpec, node_id: str, now: int) -> Placement:
        record = self.state.nodes[node_id]
        server = None
        if spec.realtime:
            response = record.rt.admit(spec)
            if not response.schedulable:
                raise RuntimeError(f"admission regressed on {node_id}: {response.reason}")
            server = response.allocated
        ok, grants = self.network.reserve_for_job(spec, record.node, commit=True)
        if not ok:
            if server is not None:
                record.rt.release(spec.name)
            raise RuntimeError(f"network reservation regressed on {node_id}")
        basic = spec.basic_request
        if spec.realtime:
            basic = BasicResources(0, basic.disk, basic.mem)
        record.allocated_basic = record.allocated_basic.plus(basic)
        record.allocated_additional = record.allocated_additional.plus(
            spec.additional_request
        )
        placement = Placement(
            spec=spec,
            node_id=node_id,
            basic=basic,
            additional=spec.additional_request,
            server=server,
            grants=tuple(grants),
            placed_at=now,
            assurance_at_placement=record.reported_assurance,
        )
        self.state.placements[spec.name] = placement
        self.state.job_status.setdefault(spec.name, "deploying")
        return placement

    def _unplace(self, job_id: str) -> Placement:
        placement = self.state.placements.pop(job_id, None)
        if placement is None:
            raise UnknownJob(job_id)
        record = self.state.nodes[placement.node_id]
        if placement.server is not None:
            record.rt.release(job_id)
        self.network.release_job(job_id)
        record.allocated_basic = record.allocated_basic.minus(placement.basic)
        record.allocated_additional = record.allocated_additional.minus(
            placement.additional
        )
        return placement

    def _reinstate(self, placement: Placement) -> None:
        record = self.state.nodes[placement.node_id]
        if placement.server is not None:
            record.rt.reinstate(placement.server)
        self.network.reinstate(placement.spec.name, placement.grants)
        record.allocated_basic = record.allocated_basic.plus(placement.basic)
        record.allocated_additional = record.allocated_additional.plus(
            placement.additional
        )
        self.state.placements[placement.spec.name] = placement

    def _eviction_makes_room(
        self, spec: JobSpec, node_id: str, victims: Sequence[str]
    ) -> bool:
        removed = [self._unplace(v) for v in victims]
        passes = self._node_passes(spec, node_id)
        for placement in reversed(removed):
            self._reinstate(placement)
        return passes

    def _min_eviction_set(
        self, spec: JobSpec, node_id: str
    ) -> Optional[tuple[str, ...]]:
        """Smallest victim set on this node that lets the job pass the filter.

        Exhaustive over subsets of up to three victims (ordered by size, then
        summed criticality, then ids), then first-fit greedy by ascending
        criticality beyond that.
        """
        victims = [
            p.spec.name
            for p in self.state.jobs_on(node_id)
            if p.spec.criticality < spec.criticality
        ]
        if not victims:
            return None
        crit = {
            name: self.state.placements[name].spec.criticality for name in victims
        }
        victims.sort(key=lambda v: (crit[v], v))
        subsets = []
        for size in range(1, min(3, len(victims)) + 1):
            subsets.extend(combinations(victims, size))
        subsets.sort(key=lambda s: (len(s), sum(int(crit[v]) for v in s), s))
        for subset in subsets:
            if self._eviction_makes_room(spec, node_id, subset):
                return subset
        for size in range(4, len(victims) + 1):
            subset = tuple(victims[:size])
            if self._eviction_makes_room(spec, node_id, subset):
                return subset
        return None

    def schedule(
        self, spec: JobSpec, now: int = 0, exclude: frozenset[str] = frozenset()
    ) -> Outcome:
        """Place the job, preempting strictly-lower-criticality work if that is
        the only way; Unschedulable leaves it to the pending queue."""
        candidates = self.filter_nodes(spec, exclude)
        if candidates:
            best = self.score_nodes(spec, candidates)[0]
            self._commit(spec, best, now)
            return Placed(spec.name, best)

        plans = []
        for node_id in sorted(self.state.nodes):
            if node_id in exclude or node_id in self._tainted:
                continue
            if not self.state.nodes[node_id].alive:
                continue
            subset = self._min_eviction_set(spec, node_id)
            if subset is not None:
                plans.append(
                    (
                        len(subset),
                        sum(int(self.state.placements[v].spec.criticality) for v in subset),
                        node_id,
                        subset,
                    )
                )
        if not plans:
            return Unschedulable(spec.name)
        _, _, node_id, subset = min(plans)
        criticalities = []
        for victim in subset:
            placement = self._unplace(victim)
            criticalities.append(placement.spec.criticality)
            self.state.pending.append(placement.spec)
            self.state.job_status[victim] = "evicted"
        self._commit(spec, node_id, now)
        logger.info("preempted %s on %s for %s", subset, node_id, spec.name)
        return Preempted(spec.name, node_id, subset, tuple(criticalities))

    # --- reconciliation ------------------------------------------------------

    def reconcile(self, now: int = 0) -> list[Action]:
        """One control-loop round: liveness, migration requests, threshold
        safety, desired-state push, then the pending queue.  Nodes tainted by a
        migration stay excluded for exactly this round."""
        actions: list[Action] = []

        for node_id in sorted(self.state.nodes):
            record = self.state.nodes[node_id]
            record.alive = now - record.last_heartbeat <= self.heartbeat_timeout
            if record.alive:
                continue
            for placement in self.state.jobs_on(node_id):
                self._unplace(placement.spec.name)
                self.state.pending.append(placement.spec)
                self.state.job_status[placement.spec.name] = "lost"
                actions.append(Evict(placement.spec.name, node_id))

        requests, self._migrate_requests = self._migrate_requests, []
        for node_id, jobs in requests:
            self._tainted.add(node_id)
            for job_id in jobs:
                placement = self.state.placements.get(job_id)
                if placement is None or placement.node_id != node_id:
                    continue
                self._unplace(job_id)
                self.state.pending.append(placement.spec)
                self.state.job_status[job_id] = "migrating"
                actions.append(Evict(job_id, node_id))

        # a gamma downgrade must not leave a placement below its threshold
        for job_id in sorted(self.state.placements):
            placement = self.state.placements[job_id]
            record = self.state.nodes[placement.node_id]
            threshold = self.policy.min_assurance[placement.spec.criticality]
            if record.reported_assurance < threshold:
                self._tainted.add(placement.node_id)
                self._unplace(job_id)
                self.state.pending.append(placement.spec)
                self.state.job_status[job_id] = "migrating"
                actions.append(Evict(job_id, placement.node_id))

        # reported-but-undesired jobs are evicted
        desired = set(self.state.placements)
        for job_id in sorted(self.state.job_status):
            if self.state.job_status[job_id] != "running":
                continue
            if job_id not in self.state.placements:
                node = self.state.job_origin.get(job_id)
                if node is not None:
                    actions.append(Evict(job_id, node))
                    self.state.job_status[job_id] = "evicted"

        pending, self.state.pending = self.state.pending, []
        for spec in pending:
            outcome = self.schedule(spec, now)
            self.last_outcomes.append(outcome)
            if isinstance(outcome, Unschedulable):
                self.state.pending.append(spec)
            else:
                actions.append(Deploy(spec.name, outcome.node))

        # desired-but-unacknowledged placements are (re)pushed; "failed" jobs
        # are left alone rather than crash-looped
        for job_id in sorted(desired & set(self.state.placements)):
            if self.state.job_status.get(job_id) not in ("running", "failed"):
                placement = self.state.placements[job_id]
                action = Deploy(job_id, placement.node_id)
                if action not in actions:
                    actions.append(action)

        self._tainted.clear()
        return actions

    # --- replica manager -----------------------------------------------------

    def _job_live(self, job_id: str) -> bool:
        placement = self.state.placements.get(job_id)
        if placement is None:
            return False
        if not self.state.nodes[placement.node_id].alive:
            return False
        return self.state.job_status.get(job_id) == "running"

    def route(self, deployment_id: str, payload=None) -> str:
        """Job id the request is forwarded to: the live leader, else the live
        backup with the highest criticality (ties by id), promoted on the spot."""
        record = self.state.deployments.get(deployment_id)
        if record is None:
            raise UnknownJob(deployment_id)
        if self._job_live(record.leader):
            return record.leader
        live = [b for b in record.backups if self._job_live(b)]
        if not live:
            raise NoLiveReplica(deployment_id)
        promoted = min(
            live,
            key=lambda j: (-int(self.state.placements[j].spec.criticality), j),
        )
        record.backups.remove(promoted)
        record.backups.append(record.leader)
        record.leader = promoted
        logger.info("promoted %s to leader of %s", promoted, deployment_id)
        return promoted
