"""Network manager: TDMA slot tables plus delay/bandwidth checks for
best-effort networks, with all-or-nothing reservation of a job's requirements.

Slot periods must divide the major frame, which makes the overlap check exact
within a single frame: two repeating slots (o1, l1, p1) and (o2, l2, p2)
collide iff some pair of instances has a start distance o1 - o2 + m*gcd(p1, p2)
inside (-l1, l2), i.e. with d = (o1 - o2) mod g,

    d < l2  or  g - d < l1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .model import (
    BestEffortRequirement,
    JobSpec,
    Network,
    TdmaNetworkKind,
    TdmaRequirement,
    WorkerNode,
)


class BadPeriod(ValueError):
    """Slot period does not divide the major frame."""


class UnknownJob(KeyError):
    pass


class UnknownTarget(KeyError):
    """Best-effort target is not a member of the network."""


@dataclass(frozen=True)
class Slot:
    job: str
    offset: int  # microseconds from frame start
    length: int  # microseconds
    period: int  # microseconds


def _slots_conflict(a: Slot, b: Slot) -> bool:
    g = math.gcd(a.period, b.period)
    d = (a.offset - b.offset) % g
    return d < b.length or g - d < a.length


@dataclass
class SlotTable:
    """TDMA major frame with the repeating slots currently granted."""

    network: str
    major_frame: int
    tick: int
    slots: list[Slot] = field(default_factory=list)

    def instances(self):
        """Expand every slot into its service windows within one frame."""
        for slot in self.slots:
            for k in range(self.major_frame // slot.period):
                start = slot.offset + k * slot.period
                yield (start, start + slot.length, slot.job)

    def allocate(self, job: str, slot_length: int, slot_period: int) -> Optional[int]:
        """Grant the smallest tick-aligned offset whose repeated instances
        collide with nothing already granted; None when no offset exists."""
        if slot_period <= 0 or self.major_frame % slot_period != 0:
            raise BadPeriod(
                f"slot period {slot_period} does not divide major frame {self.major_frame}"
            )
        if slot_length <= 0 or slot_length > slot_period:
            raise ValueError("slot length must satisfy 0 < length <= period")
        if slot_length % self.tick or slot_period % self.tick:
            raise ValueError("slot length and period must be multiples of the tick")
        for offset in range(0, slot_period - slot_length + 1, self.tick):
            candidate = Slot(job=job, offset=offset, length=slot_length, period=slot_period)
            if not any(_slots_conflict(candidate, other) for other in self.slots):
                self.slots.append(candidate)
                return offset
        return None

    def release(self, job: str) -> list[Slot]:
        """Drop every slot held by the job, returning them."""
        freed = [s for s in self.slots if s.job == job]
        if not freed:
            raise UnknownJob(job)
        self.slots = [s for s in self.slots if s.job != job]
        return freed

    def remove(self, slot: Slot) -> None:
        self.slots.remove(slot)


@dataclass(frozen=True)
class SlotGrant:
    """Wire form of a granted timeslot, consumed verbatim by the TDMA master."""

    network: str
    job: str
    offset: int
    length: int
    period: int

    def to_json_obj(self) -> dict:
        return {
            "network": self.network,
            "job": self.job,
            "offset": self.offset,
            "length": self.length,
            "period": self.period,
        }


@dataclass(frozen=True)
class BandwidthGrant:
    network: str
    job: str
    source: str
    target: str
    kilobits: int


Grant = Union[SlotGrant, BandwidthGrant]


class NetworkManager:
    """Feasibility tests and reservations across every cluster network.

    Mutation per network is serialized by the owner; the all-or-nothing
    guarantee of reserve_for_job is implemented as apply-then-rollback.
    """

    def __init__(self, networks: list[Network]):
        self.networks: dict[str, Network] = {}
        self.slot_tables: dict[str, SlotTable] = {}
        self._reserved_bw: dict[tuple[str, str, str], int] = {}  # (net, src, dst) -> kbps
        self._grants: dict[str, list[Grant]] = {}  # job -> grants held
        for network in networks:
            self.add_network(network)

    def add_network(self, network: Network) -> None:
        if network.id in self.networks:
            raise ValueError(f"duplicate network {network.id}")
        self.networks[network.id] = network
        if isinstance(network.kind, TdmaNetworkKind):
            self.slot_tables[network.id] = SlotTable(
                network=network.id,
                major_frame=network.kind.major_frame,
                tick=network.kind.tick,
            )

    def grants_for(self, job: str) -> list[Grant]:
        return list(self._grants.get(job, []))

    def remaining_capacity(self, network_id: str, src: str, dst: str) -> int:
        network = self.networks[network_id]
        used = self._reserved_bw.get((network_id, src, dst), 0)
        return network.capacity_between(src, dst) - used

    def check_best_effort(
        self, network: Network, node: str, req: BestEffortRequirement
    ) -> bool:
        """Delay within bound (inclusive) and enough spare bandwidth left."""
        if req.target not in network.members:
            raise UnknownTarget(req.target)
        if network.delay_between(node, req.target) > req.max_delay:
            return False
        return self.remaining_capacity(network.id, node, req.target) >= req.min_bandwidth

    def _reserve_one(self, job: JobSpec, node: WorkerNode, requirement) -> Optional[Grant]:
        network = self.networks.get(requirement.network)
        if network is None or node.id not in network.members:
            return None
        kind = requirement.kind
        if isinstance(kind, TdmaRequirement):
            table = self.slot_tables.get(requirement.network)
            if table is None:
                return None
            try:
                offset = table.allocate(job.name, kind.slot_length, kind.slot_period)
            except (BadPeriod, ValueError):
                return None
            if offset is None:
                return None
            return SlotGrant(
                network=network.id,
                job=job.name,
                offset=offset,
                length=kind.slot_length,
                period=kind.slot_period,
            )
        try:
            if not self.check_best_effort(network, node.id, kind):
                return None
        except UnknownTarget:
            return None
        key = (network.id, node.id, kind.target)
        self._reserved_bw[key] = self._reserved_bw.get(key, 0) + kind.min_bandwidth
        return BandwidthGrant(
            network=network.id,
            job=job.name,
            source=node.id,
            target=kind.target,
            kilobits=kind.min_bandwidth,
        )

    def _undo(self, grant: Grant) -> None:
        if isinstance(grant, SlotGrant):
            self.slot_tables[grant.network].remove(
                Slot(grant.job, grant.offset, grant.length, grant.period)
            )
        else:
            key = (grant.network, grant.source, grant.target)
            self._reserved_bw[key] -= grant.kilobits
            if self._reserved_bw[key] == 0:
                del self._reserved_bw[key]

    def reserve_for_job(
        self, job: JobSpec, node: WorkerNode, commit: bool = True
    ) -> tuple[bool, list[Grant]]:
        """Atomically satisfy every network requirement of the job on this node.

        Returns (True, grants) with all grants held when commit is set, or
        (False, []) leaving tables and capacities untouched.  commit=False is
        the scheduler's dry run: feasibility is evaluated and rolled back.
        """
        applied: list[Grant] = []
        for requirement in job.network_requirements:
            grant = self._reserve_one(job, node, requirement)
            if grant is None:
                for done in reversed(applied):
                    self._undo(done)
                return False, []
            applied.append(grant)
        if not commit:
            for done in reversed(applied):
                self._undo(done)
            return True, applied
        if applied:
            self._grants.setdefault(job.name, []).extend(applied)
        return True, applied

    def network_feasible(self, job: JobSpec, node: WorkerNode) -> bool:
        """Dry-run convenience wrapper around reserve_for_job."""
        feasible, _ = self.reserve_for_job(job, node, commit=False)
        return feasible

    def release_job(self, job: str) -> None:
        """Return every grant the job holds; no-op for jobs holding none."""
        for grant in reversed(self._grants.pop(job, [])):
            self._undo(grant)

    def reinstate(self, job: str, grants: Iterable[Grant]) -> None:
        """Exact inverse of release_job for a known-good grant list (rollback
        of trial evictions); slots are re-inserted without a fresh search."""
        grants = list(grants)
        for grant in grants:
            if isinstance(grant, SlotGrant):
                self.slot_tables[grant.network].slots.append(
                    Slot(grant.job, grant.offset, grant.length, grant.period)
                )
            else:
                key = (grant.network, grant.source, grant.target)
                self._reserved_bw[key] = self._reserved_bw.get(key, 0) + grant.kilobits
        if grants:
            self._grants.setdefault(job, []).extend(grants)
