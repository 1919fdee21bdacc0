"""Domain model shared by every other module: assurance-typed worker nodes,
resources, networks, and criticality-tagged jobs with real-time task interfaces.

All quantities are integers (microseconds, megabytes, kilobits/s) except CPU
utilizations and rescale factors, which are exact rationals so that admission
accounting can be reversed bit-exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Union


class Criticality(IntEnum):
    """Job importance class; the order NO < LOW < HI drives every comparison."""

    NO = 0
    LOW = 1
    HI = 2

    def __str__(self) -> str:
        return self.name

    @classmethod
    def parse(cls, text: str) -> "Criticality":
        try:
            return cls[text]
        except KeyError:
            raise ValueError(f"unknown criticality {text!r}") from None


def _to_fraction(value) -> Fraction:
    """Accept int, float, Fraction, 'p/q' strings or [num, den] pairs."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("bool is not a rational")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10**9)
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return Fraction(int(value[0]), int(value[1]))
    raise TypeError(f"cannot interpret {value!r} as a rational")


def _fraction_to_json(value: Fraction):
    if value.denominator == 1:
        return int(value)
    return [value.numerator, value.denominator]


class AssuranceLevel:
    """Node dependability score split into a hardware part, a software part and
    a runtime penalty.

    The hardware and software parts are fixed at registration; only the runtime
    penalty moves, and it is clamped so the effective score never drops below
    zero (full disqualification) nor above the registered baseline.
    """

    __slots__ = ("alpha", "beta", "_gamma")

    def __init__(self, alpha: int, beta: int, gamma: int = 0):
        if alpha < 0 or beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        self.alpha = int(alpha)
        self.beta = int(beta)
        self._gamma = 0
        self.gamma = gamma

    @property
    def gamma(self) -> int:
        return self._gamma

    @gamma.setter
    def gamma(self, value: int) -> None:
        # clamp to [-(alpha+beta), 0]: penalties never push effective() negative
        self._gamma = max(-(self.alpha + self.beta), min(0, int(value)))

    def effective(self) -> int:
        return self.alpha + self.beta + self._gamma

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AssuranceLevel)
            and (self.alpha, self.beta, self._gamma)
            == (other.alpha, other.beta, other._gamma)
        )

    def __repr__(self) -> str:
        return f"AssuranceLevel(alpha={self.alpha}, beta={self.beta}, gamma={self._gamma})"

    def to_json_obj(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self._gamma}

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "AssuranceLevel":
        return cls(obj["alpha"], obj["beta"], obj.get("gamma", 0))


@dataclass(frozen=True)
class BasicResources:
    """CPU / disk / memory triple; used both as node capacity and job request."""

    cpu_utilization: Fraction = Fraction(0)  # sum of per-core utilizations
    disk: int = 0  # megabytes
    mem: int = 0  # megabytes

    def __post_init__(self):
        object.__setattr__(self, "cpu_utilization", _to_fraction(self.cpu_utilization))

    def violations(self, prefix: str = "basic") -> list[str]:
        out = []
        if self.cpu_utilization < 0:
            out.append(f"{prefix}.cpu_utilization must be >= 0")
        if self.disk < 0:
            out.append(f"{prefix}.disk must be >= 0")
        if self.mem < 0:
            out.append(f"{prefix}.mem must be >= 0")
        return out

    def fits_within(self, capacity: "BasicResources") -> bool:
        return (
            self.cpu_utilization <= capacity.cpu_utilization
            and self.disk <= capacity.disk
            and self.mem <= capacity.mem
        )

    def plus(self, other: "BasicResources") -> "BasicResources":
        return BasicResources(
            self.cpu_utilization + other.cpu_utilization,
            self.disk + other.disk,
            self.mem + other.mem,
        )

    def minus(self, other: "BasicResources") -> "BasicResources":
        return BasicResources(
            self.cpu_utilization - other.cpu_utilization,
            self.disk - other.disk,
            self.mem - other.mem,
        )

    def to_json_obj(self) -> dict:
        return {
            "cpu_utilization": _fraction_to_json(self.cpu_utilization),
            "disk": self.disk,
            "mem": self.mem,
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "BasicResources":
        return cls(
            _to_fraction(obj.get("cpu_utilization", 0)),
            int(obj.get("disk", 0)),
            int(obj.get("mem", 0)),
        )


@dataclass(frozen=True)
class AdditionalResources:
    """Countable heterogeneous devices, allocated exclusively one unit at a time.

    A device shareable by K jobs is registered as K units.
    """

    sensors: Mapping[str, int] = field(default_factory=dict)
    actuators: Mapping[str, int] = field(default_factory=dict)
    gpu: int = 0
    fpga: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sensors", dict(self.sensors))
        object.__setattr__(self, "actuators", dict(self.actuators))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, AdditionalResources)
            and dict(self.sensors) == dict(other.sensors)
            and dict(self.actuators) == dict(other.actuators)
            and (self.gpu, self.fpga) == (other.gpu, other.fpga)
        )

    def violations(self, prefix: str = "additional") -> list[str]:
        out = []
        for kind, counts in (("sensors", self.sensors), ("actuators", self.actuators)):
            for name, count in counts.items():
                if not isinstance(count, int) or count < 0:
                    out.append(f"{prefix}.{kind}[{name}] must be a non-negative integer")
        if self.gpu < 0:
            out.append(f"{prefix}.gpu must be >= 0")
        if self.fpga < 0:
            out.append(f"{prefix}.fpga must be >= 0")
        return out

    def fits_within(self, capacity: "AdditionalResources") -> bool:
        for name, count in self.sensors.items():
            if count > capacity.sensors.get(name, 0):
                return False
        for name, count in self.actuators.items():
            if count > capacity.actuators.get(name, 0):
                return False
        return self.gpu <= capacity.gpu and self.fpga <= capacity.fpga

    def _merge(self, other: "AdditionalResources", sign: int) -> "AdditionalResources":
        def combine(a: Mapping[str, int], b: Mapping[str, int]) -> dict:
            out = dict(a)
            for name, count in b.items():
                out[name] = out.get(name, 0) + sign * count
                if out[name] == 0:
                    del out[name]
            return out

        return AdditionalResources(
            combine(self.sensors, other.sensors),
            combine(self.actuators, other.actuators),
            self.gpu + sign * other.gpu,
            self.fpga + sign * other.fpga,
        )

    def plus(self, other: "AdditionalResources") -> "AdditionalResources":
        return self._merge(other, +1)

    def minus(self, other: "AdditionalResources") -> "AdditionalResources":
        return self._merge(other, -1)

    def to_json_obj(self) -> dict:
        return {
            "sensors": dict(self.sensors),
            "actuators": dict(self.actuators),
            "gpu": self.gpu,
            "fpga": self.fpga,
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "AdditionalResources":
        return cls(
            {k: int(v) for k, v in obj.get("sensors", {}).items()},
            {k: int(v) for k, v in obj.get("actuators", {}).items()},
            int(obj.get("gpu", 0)),
            int(obj.get("fpga", 0)),
        )


@dataclass(frozen=True)
class PerPlatformWcet:
    """Exact worst-case execution times measured per hardware platform.

    Required for HI jobs: only the listed platforms are eligible at scheduling.
    """

    by_platform: Mapping[str, int]  # platform id -> microseconds

    def __post_init__(self):
        object.__setattr__(self, "by_platform", dict(self.by_platform))

    def __eq__(self, other) -> bool:
        return isinstance(other, PerPlatformWcet) and dict(self.by_platform) == dict(
            other.by_platform
        )


@dataclass(frozen=True)
class BaselineWcet:
    """A single baseline execution time, rescaled by the node speed factor."""

    us: int


Wcet = Union[PerPlatformWcet, BaselineWcet]


@dataclass(frozen=True)
class RtTask:
    """Real-time scheduling interface of one task: period, WCET vector, priority.

    A missing priority means rate-monotonic assignment (smaller period wins).
    Larger explicit priority values win.
    """

    name: str
    period: int  # microseconds
    wcet: Wcet
    priority: Optional[int] = None

    def violations(self, prefix: str) -> list[str]:
        out = []
        if self.period <= 0:
            out.append(f"{prefix}: period must be > 0")
        if isinstance(self.wcet, BaselineWcet):
            if self.wcet.us <= 0:
                out.append(f"{prefix}: baseline WCET must be > 0")
            elif self.period > 0 and self.wcet.us > self.period:
                out.append(f"{prefix}: WCET exceeds period")
        elif isinstance(self.wcet, PerPlatformWcet):
            if not self.wcet.by_platform:
                out.append(f"{prefix}: per-platform WCET map is empty")
            for platform, us in self.wcet.by_platform.items():
                if us <= 0:
                    out.append(f"{prefix}: WCET for {platform} must be > 0")
                elif self.period > 0 and us > self.period:
                    out.append(f"{prefix}: WCET for {platform} exceeds period")
        else:
            out.append(f"{prefix}: unknown WCET kind")
        return out

    def to_json_obj(self) -> dict:
        if isinstance(self.wcet, PerPlatformWcet):
            wcet = {"per_platform": dict(self.wcet.by_platform)}
        else:
            wcet = {"baseline": self.wcet.us}
        return {
            "name": self.name,
            "period": self.period,
            "priority": self.priority,
            "wcet": wcet,
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "RtTask":
        raw = obj["wcet"]
        if "per_platform" in raw:
            wcet: Wcet = PerPlatformWcet({k: int(v) for k, v in raw["per_platform"].items()})
        elif "baseline" in raw:
            wcet = BaselineWcet(int(raw["baseline"]))
        else:
            raise ValueError("wcet must contain 'per_platform' or 'baseline'")
        return cls(
            name=obj["name"],
            period=int(obj["period"]),
            wcet=wcet,
            priority=obj.get("priority"),
        )


@dataclass(frozen=True)
class TdmaRequirement:
    slot_length: int  # microseconds
    slot_period: int  # microseconds

    def violations(self, prefix: str) -> list[str]:
        out = []
        if self.slot_length <= 0:
            out.append(f"{prefix}: slot_length must be > 0")
        if self.slot_length > self.slot_period:
            out.append(f"{prefix}: slot_length must be <= slot_period")
        return out


@dataclass(frozen=True)
class BestEffortRequirement:
    target: str  # node or service identifier
    max_delay: int  # microseconds
    min_bandwidth: int = 0  # kilobits/second

    def violations(self, prefix: str) -> list[str]:
        out = []
        if self.max_delay <= 0:
            out.append(f"{prefix}: max_delay must be > 0")
        if self.min_bandwidth < 0:
            out.append(f"{prefix}: min_bandwidth must be >= 0")
        return out


@dataclass(frozen=True)
class NetworkRequirement:
    network: str
    kind: Union[TdmaRequirement, BestEffortRequirement]

    def violations(self, prefix: str) -> list[str]:
        return self.kind.violations(prefix)

    def to_json_obj(self) -> dict:
        if isinstance(self.kind, TdmaRequirement):
            kind = {
                "tdma": {
                    "slot_length": self.kind.slot_length,
                    "slot_period": self.kind.slot_period,
                }
            }
        else:
            kind = {
                "best_effort": {
                    "target": self.kind.target,
                    "max_delay": self.kind.max_delay,
                    "min_bandwidth": self.kind.min_bandwidth,
                }
            }
        return {"network": self.network, "kind": kind}

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "NetworkRequirement":
        raw = obj["kind"]
        if "tdma" in raw:
            kind: Union[TdmaRequirement, BestEffortRequirement] = TdmaRequirement(
                int(raw["tdma"]["slot_length"]), int(raw["tdma"]["slot_period"])
            )
        elif "best_effort" in raw:
            be = raw["best_effort"]
            kind = BestEffortRequirement(
                be["target"], int(be["max_delay"]), int(be.get("min_bandwidth", 0))
            )
        else:
            raise ValueError("network requirement kind must be 'tdma' or 'best_effort'")
        return cls(obj["network"], kind)


@dataclass(frozen=True)
class ReplicaPolicy:
    """Replication topology: one leader plus backups, optionally voting TMR."""

    replicas: int
    leader_criticality: Criticality
    backup_criticality: Criticality
    tmr: bool = False

    def violations(self, prefix: str = "deployment") -> list[str]:
        out = []
        if self.replicas < 1:
            out.append(f"{prefix}: replicas must be >= 1")
        if self.backup_criticality > self.leader_criticality:
            out.append(f"{prefix}: backup criticality must not exceed leader criticality")
        if self.tmr and self.replicas != 3:
            out.append(f"{prefix}: TMR requires exactly 3 replicas")
        return out

    def to_json_obj(self) -> dict:
        return {
            "replicas": self.replicas,
            "leader_criticality": str(self.leader_criticality),
            "backup_criticality": str(self.backup_criticality),
            "tmr": self.tmr,
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "ReplicaPolicy":
        return cls(
            int(obj["replicas"]),
            Criticality.parse(obj["leader_criticality"]),
            Criticality.parse(obj["backup_criticality"]),
            bool(obj.get("tmr", False)),
        )


@dataclass(frozen=True)
class JobSpec:
    """The schedulable unit: criticality, resources, network and task interfaces."""

    name: str
    criticality: Criticality
    realtime: bool
    basic_request: BasicResources = field(default_factory=BasicResources)
    additional_request: AdditionalResources = field(default_factory=AdditionalResources)
    network_requirements: tuple[NetworkRequirement, ...] = ()
    tasks: tuple[RtTask, ...] = ()
    deployment: Optional[ReplicaPolicy] = None

    def __post_init__(self):
        object.__setattr__(self, "network_requirements", tuple(self.network_requirements))
        object.__setattr__(self, "tasks", tuple(self.tasks))

    def to_json_obj(self) -> dict:
        return {
            "name": self.name,
            "criticality": str(self.criticality),
            "realtime": self.realtime,
            "basic_request": self.basic_request.to_json_obj(),
            "additional_request": self.additional_request.to_json_obj(),
            "network_requirements": [r.to_json_obj() for r in self.network_requirements],
            "tasks": [t.to_json_obj() for t in self.tasks],
            "deployment": self.deployment.to_json_obj() if self.deployment else None,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_json_obj(), **kwargs)

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "JobSpec":
        return cls(
            name=obj["name"],
            criticality=Criticality.parse(obj["criticality"]),
            realtime=bool(obj["realtime"]),
            basic_request=BasicResources.from_json_obj(obj.get("basic_request", {})),
            additional_request=AdditionalResources.from_json_obj(
                obj.get("additional_request", {})
            ),
            network_requirements=tuple(
                NetworkRequirement.from_json_obj(r)
                for r in obj.get("network_requirements", [])
            ),
            tasks=tuple(RtTask.from_json_obj(t) for t in obj.get("tasks", [])),
            deployment=(
                ReplicaPolicy.from_json_obj(obj["deployment"])
                if obj.get("deployment")
                else None
            ),
        )

    @classmethod
    def from_json(cls, text: str) -> "JobSpec":
        return cls.from_json_obj(json.loads(text))


@dataclass
class WorkerNode:
    """An assurance-typed compute node.

    speed_factor rescales baseline WCETs for LOW-criticality tasks; platform
    keys into per-platform WCET vectors for HI tasks.
    """

    id: str
    rt_capable: bool
    assurance: AssuranceLevel
    platform: str
    cores: int
    basic_capacity: BasicResources
    speed_factor: Fraction = Fraction(1)
    additional_inventory: AdditionalResources = field(default_factory=AdditionalResources)
    networks: frozenset[str] = frozenset()

    def __post_init__(self):
        self.speed_factor = _to_fraction(self.speed_factor)
        self.networks = frozenset(self.networks)
        if self.speed_factor <= 0:
            raise ValueError(f"node {self.id}: speed_factor must be > 0")
        if self.cores < 1:
            raise ValueError(f"node {self.id}: cores must be >= 1")
        if self.basic_capacity.cpu_utilization > self.cores:
            raise ValueError(f"node {self.id}: cpu capacity exceeds core count")
        bad = self.basic_capacity.violations("capacity") + self.additional_inventory.violations(
            "inventory"
        )
        if bad:
            raise ValueError(f"node {self.id}: " + "; ".join(bad))

    def to_json_obj(self) -> dict:
        return {
            "id": self.id,
            "rt_capable": self.rt_capable,
            "assurance": self.assurance.to_json_obj(),
            "platform": self.platform,
            "speed_factor": _fraction_to_json(self.speed_factor),
            "cores": self.cores,
            "basic_capacity": self.basic_capacity.to_json_obj(),
            "additional_inventory": self.additional_inventory.to_json_obj(),
            "networks": sorted(self.networks),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_json_obj(), **kwargs)

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "WorkerNode":
        return cls(
            id=obj["id"],
            rt_capable=bool(obj["rt_capable"]),
            assurance=AssuranceLevel.from_json_obj(obj["assurance"]),
            platform=obj["platform"],
            speed_factor=_to_fraction(obj.get("speed_factor", 1)),
            cores=int(obj["cores"]),
            basic_capacity=BasicResources.from_json_obj(obj["basic_capacity"]),
            additional_inventory=AdditionalResources.from_json_obj(
                obj.get("additional_inventory", {})
            ),
            networks=frozenset(obj.get("networks", [])),
        )

    @classmethod
    def from_json(cls, text: str) -> "WorkerNode":
        return cls.from_json_obj(json.loads(text))


@dataclass(frozen=True)
class TdmaNetworkKind:
    major_frame: int  # microseconds
    tick: int  # microseconds


@dataclass(frozen=True)
class BestEffortNetworkKind:
    pass


@dataclass
class Network:
    """A named network: member nodes, pairwise delays and per-pair capacity.

    Unreachable pairs are simply absent from the delay map.
    """

    id: str
    kind: Union[TdmaNetworkKind, BestEffortNetworkKind]
    members: frozenset[str] = frozenset()
    delay: dict = field(default_factory=dict)  # src -> dst -> microseconds
    capacity: dict = field(default_factory=dict)  # src -> dst -> kilobits/s

    def __post_init__(self):
        self.members = frozenset(self.members)
        if isinstance(self.kind, TdmaNetworkKind):
            if self.kind.tick <= 0 or self.kind.major_frame <= 0:
                raise ValueError(f"network {self.id}: frame and tick must be > 0")
            if self.kind.major_frame % self.kind.tick != 0:
                raise ValueError(f"network {self.id}: tick must divide major_frame")
        for member in self.members:
            self.delay.setdefault(member, {})[member] = 0
        for src, row in self.delay.items():
            if row.get(src, 0) != 0:
                raise ValueError(f"network {self.id}: delay[{src}][{src}] must be 0")

    def delay_between(self, src: str, dst: str) -> float:
        """Communication delay in microseconds; +inf when no path exists."""
        return self.delay.get(src, {}).get(dst, math.inf)

    def capacity_between(self, src: str, dst: str) -> int:
        return self.capacity.get(src, {}).get(dst, 0)

    def to_json_obj(self) -> dict:
        if isinstance(self.kind, TdmaNetworkKind):
            kind = {"tdma": {"major_frame": self.kind.major_frame, "tick": self.kind.tick}}
        else:
            kind = {"best_effort": {}}
        return {
            "id": self.id,
            "kind": kind,
            "members": sorted(self.members),
            "delay": {s: dict(sorted(row.items())) for s, row in sorted(self.delay.items())},
            "capacity": {
                s: dict(sorted(row.items())) for s, row in sorted(self.capacity.items())
            },
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "Network":
        raw = obj["kind"]
        if "tdma" in raw:
            kind: Union[TdmaNetworkKind, BestEffortNetworkKind] = TdmaNetworkKind(
                int(raw["tdma"]["major_frame"]), int(raw["tdma"]["tick"])
            )
        else:
            kind = BestEffortNetworkKind()
        return cls(
            id=obj["id"],
            kind=kind,
            members=frozenset(obj.get("members", [])),
            delay={s: {d: int(v) for d, v in row.items()} for s, row in obj.get("delay", {}).items()},
            capacity={
                s: {d: int(v) for d, v in row.items()}
                for s, row in obj.get("capacity", {}).items()
            },
        )


def load_delay_matrix(text_or_file: Union[str, io.TextIOBase]) -> dict:
    """Parse a delay matrix CSV: header row of node ids, one row per source,
    cells in microseconds, empty cell = unreachable."""
    if isinstance(text_or_file, str):
        text_or_file = io.StringIO(text_or_file)
    reader = csv.reader(text_or_file)
    rows = [row for row in reader if row]
    if not rows:
        raise ValueError("empty delay matrix")
    header = [h.strip() for h in rows[0][1:]]
    matrix: dict = {}
    for row in rows[1:]:
        src = row[0].strip()
        matrix[src] = {}
        for dst, cell in zip(header, row[1:]):
            cell = cell.strip()
            if cell:
                matrix[src][dst] = int(cell)
    return matrix


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_job(spec: JobSpec) -> ValidationResult:
    """Collect every violated invariant of a job spec and its nested types.

    Violations are data, not faults: an invalid spec is a well-formed answer.
    """
    out: list[str] = []
    if not spec.name:
        out.append("name must be non-empty")
    if spec.realtime and spec.criticality < Criticality.LOW:
        out.append("real-time jobs have at least LOW criticality")
    if spec.realtime and not spec.tasks:
        out.append("real-time jobs must declare at least one task")
    if not spec.realtime and spec.tasks:
        out.append("non-real-time jobs must not declare tasks")
    if spec.realtime and spec.criticality == Criticality.HI:
        for task in spec.tasks:
            if not isinstance(task.wcet, PerPlatformWcet):
                out.append(f"task {task.name}: HI requires per-platform WCET")
    out.extend(spec.basic_request.violations("basic_request"))
    out.extend(spec.additional_request.violations("additional_request"))
    for i, req in enumerate(spec.network_requirements):
        out.extend(req.violations(f"network_requirements[{i}]"))
    seen_tasks: set[str] = set()
    for task in spec.tasks:
        out.extend(task.violations(f"task {task.name}"))
        if task.name in seen_tasks:
            out.append(f"task {task.name}: duplicate task name")
        seen_tasks.add(task.name)
    if spec.deployment is not None:
        out.extend(spec.deployment.violations())
    return ValidationResult(tuple(out))


def resolve_wcet(
    task: RtTask, node: WorkerNode, criticality: Optional[Criticality] = None
) -> Optional[int]:
    """Worst-case execution time of a task on a concrete node, in microseconds.

    Per-platform vectors are looked up by the node's platform id (None when the
    platform is not covered, which filters the node out).  Baselines are
    rescaled by the node speed factor and rounded up, which is conservative for
    admission.  The criticality argument is informational: the WCET
    representation itself already encodes which estimation method applies.
    """
    if isinstance(task.wcet, PerPlatformWcet):
        return task.wcet.by_platform.get(node.platform)
    scaled = Fraction(task.wcet.us) * node.speed_factor
    return int(math.ceil(scaled))
