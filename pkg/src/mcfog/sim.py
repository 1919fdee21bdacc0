"""Discrete-event simulation of the whole cluster.

Virtual time runs in integer microseconds over a single-threaded event loop:
node agents sample synthetic metrics, feed their assurance monitors and
heartbeat the control plane, which schedules, reconciles, preempts and
migrates.  Admitted real-time jobs execute their deferrable servers
tick-accurately (worst-case demand every period), so a deadline can only be
missed when a stress injection explicitly adds execution overrun, and such
misses are flagged as injected.

Stress injections raise the targeted metric channel (optionally attributed to
a job) and add activation latency to co-located real-time work, capped just
below the available slack: degradation is visible to the monitor before it
turns into misses, mirroring an isolation failure that monitoring is meant to
catch early.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence, Union

from .assurance import (
    AssuranceMonitor,
    GammaDowngrade,
    KillJob,
    MetricSample,
    MigrateRequest,
    MonitorConfig,
    Phase,
    Threshold,
)
from .control_plane import (
    ControlPlane,
    Criticality,
    Deploy,
    Evict,
    Placed,
    Preempted,
    SchedulingPolicy,
    Strategy,
    Unschedulable,
)
from .model import JobSpec, Network, WorkerNode
from .rt_admission import resolve_task_set
from .server_sim import hyperperiod, simulate_server

DEFAULT_CHANNELS = (
    ("loadavg", 0.2, 0.05),
    ("intr/s", 120.0, 15.0),
    ("RES/s", 40.0, 6.0),
    ("TIMER/s", 80.0, 10.0),
    ("sys%", 3.0, 0.8),
)


@dataclass(frozen=True)
class MetricChannel:
    name: str
    mean: float = 0.0
    noise: float = 0.0
    copy_of: Optional[str] = None  # duplicates another channel sample-for-sample


@dataclass(frozen=True)
class SubmitJob:
    at: int
    spec: JobSpec


@dataclass(frozen=True)
class NodeCrash:
    at: int
    node: str


@dataclass(frozen=True)
class StressInject:
    at: int
    node: str
    metric: str
    magnitude: float
    duration: int  # microseconds
    job: Optional[str] = None  # attribution target for the assurance monitor
    exec_overrun_us: int = 0  # extra demand per activation; causes real misses


@dataclass(frozen=True)
class ReplicaFail:
    at: int
    job: str


Event = Union[SubmitJob, NodeCrash, StressInject, ReplicaFail]


def default_monitor_config() -> MonitorConfig:
    thresholds = {name: Threshold(mean * 8 + 1.0, 1e9) for name, mean, _ in DEFAULT_CHANNELS}
    return MonitorConfig(
        sampling_period=200_000,
        window=5,
        thresholds=thresholds,
        kill_grace=2_000_000,
        downgrade_timeout=5_000_000,
        gamma_penalty=4,
        watched_metrics=tuple(name for name, _, _ in DEFAULT_CHANNELS),
    )


@dataclass
class SimScenario:
    nodes: list[WorkerNode]
    networks: list[Network] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    seed: int = 0
    horizon: int = 20_000_000
    policy: SchedulingPolicy = field(default_factory=SchedulingPolicy)
    monitor: MonitorConfig = field(default_factory=default_monitor_config)
    channels: tuple[MetricChannel, ...] = tuple(
        MetricChannel(name, mean, noise) for name, mean, noise in DEFAULT_CHANNELS
    )
    reconcile_interval: int = 1_000_000
    heartbeat_interval: int = 500_000

    def __post_init__(self):
        self.events = sorted(self.events, key=lambda e: e.at)
        if self.events and self.events[-1].at > self.horizon:
            raise ValueError("horizon must cover every event")

    # --- JSON ------------------------------------------------------------

    def to_json_obj(self) -> dict:
        def event_obj(event: Event) -> dict:
            if isinstance(event, SubmitJob):
                return {"at": event.at, "submit_job": event.spec.to_json_obj()}
            if isinstance(event, NodeCrash):
                return {"at": event.at, "node_crash": {"node": event.node}}
            if isinstance(event, StressInject):
                body = {
                    "node": event.node,
                    "metric": event.metric,
                    "magnitude": event.magnitude,
                    "duration": event.duration,
                }
                if event.job:
                    body["job"] = event.job
                if event.exec_overrun_us:
                    body["exec_overrun_us"] = event.exec_overrun_us
                return {"at": event.at, "stress_inject": body}
            return {"at": event.at, "replica_fail": {"job": event.job}}

        return {
            "seed": self.seed,
            "horizon": self.horizon,
            "nodes": [n.to_json_obj() for n in self.nodes],
            "networks": [n.to_json_obj() for n in self.networks],
            "events": [event_obj(e) for e in self.events],
            "policy": {
                "min_assurance": {str(c): v for c, v in self.policy.min_assurance.items()},
                "strategy": {str(c): s.value for c, s in self.policy.strategy.items()},
            },
            "monitor": {
                "sampling_period": self.monitor.sampling_period,
                "window": self.monitor.window,
                "thresholds": {
                    m: {"max_level": t.max_level, "max_slope": t.max_slope}
                    for m, t in sorted(self.monitor.thresholds.items())
                },
                "kill_grace": self.monitor.kill_grace,
                "downgrade_timeout": self.monitor.downgrade_timeout,
                "gamma_penalty": self.monitor.gamma_penalty,
                "watched_metrics": list(self.monitor.watched_metrics),
            },
            "channels": [
                {
                    "name": c.name,
                    "mean": c.mean,
                    "noise": c.noise,
                    **({"copy_of": c.copy_of} if c.copy_of else {}),
                }
                for c in self.channels
            ],
            "reconcile_interval": self.reconcile_interval,
            "heartbeat_interval": self.heartbeat_interval,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_json_obj(), **kwargs)

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "SimScenario":
        events: list[Event] = []
        for raw in obj.get("events", []):
            at = int(raw["at"])
            if "submit_job" in raw:
                events.append(SubmitJob(at, JobSpec.from_json_obj(raw["submit_job"])))
            elif "node_crash" in raw:
                events.append(NodeCrash(at, raw["node_crash"]["node"]))
            elif "stress_inject" in raw:
                body = raw["stress_inject"]
                events.append(
                    StressInject(
                        at,
                        node=body["node"],
                        metric=body["metric"],
                        magnitude=float(body["magnitude"]),
                        duration=int(body["duration"]),
                        job=body.get("job"),
                        exec_overrun_us=int(body.get("exec_overrun_us", 0)),
                    )
                )
            elif "replica_fail" in raw:
                events.append(ReplicaFail(at, raw["replica_fail"]["job"]))
            else:
                raise ValueError(f"unknown event {sorted(raw)}")
        kwargs: dict = {}
        if "policy" in obj:
            kwargs["policy"] = SchedulingPolicy(
                min_assurance={
                    Criticality.parse(k): int(v)
                    for k, v in obj["policy"].get("min_assurance", {}).items()
                },
                strategy={
                    Criticality.parse(k): Strategy(v)
                    for k, v in obj["policy"].get("strategy", {}).items()
                },
            )
        if "monitor" in obj:
            m = obj["monitor"]
            kwargs["monitor"] = MonitorConfig(
                sampling_period=int(m["sampling_period"]),
                window=int(m["window"]),
                thresholds={
                    name: Threshold(float(t["max_level"]), float(t["max_slope"]))
                    for name, t in m.get("thresholds", {}).items()
                },
                kill_grace=int(m["kill_grace"]),
                downgrade_timeout=int(m["downgrade_timeout"]),
                gamma_penalty=int(m["gamma_penalty"]),
                watched_metrics=tuple(m.get("watched_metrics", ())),
            )
        if "channels" in obj:
            kwargs["channels"] = tuple(
                MetricChannel(
                    c["name"],
                    float(c.get("mean", 0.0)),
                    float(c.get("noise", 0.0)),
                    c.get("copy_of"),
                )
                for c in obj["channels"]
            )
        return cls(
            nodes=[WorkerNode.from_json_obj(n) for n in obj["nodes"]],
            networks=[Network.from_json_obj(n) for n in obj.get("networks", [])],
            events=events,
            seed=int(obj.get("seed", 0)),
            horizon=int(obj["horizon"]),
            reconcile_interval=int(obj.get("reconcile_interval", 1_000_000)),
            heartbeat_interval=int(obj.get("heartbeat_interval", 500_000)),
            **kwargs,
        )

    @classmethod
    def from_json(cls, text: str) -> "SimScenario":
        return cls.from_json_obj(json.loads(text))


class ScenarioInvalid(ValueError):
    pass


@dataclass
class DeadlineMiss:
    job: str
    task: str
    node: str
    release: int
    deadline: int
    completion: int
    injected: bool


@dataclass
class SimReport:
    timeline: list[dict] = field(default_factory=list)
    metric_traces: dict[str, list[MetricSample]] = field(default_factory=dict)
    targets: dict[str, list[tuple[int, int, int]]] = field(default_factory=dict)
    deadline_misses: list[DeadlineMiss] = field(default_factory=list)
    invariant_violations: list[str] = field(default_factory=list)
    placements_log: list[dict] = field(default_factory=list)
    final_nodes: list[dict] = field(default_factory=list)
    final_jobs: list[dict] = field(default_factory=list)
    final_deployments: list[dict] = field(default_factory=list)

    def to_json_obj(self) -> dict:
        return {
            "timeline": self.timeline,
            "metric_traces": {
                node: [[s.timestamp, s.metric, s.value, s.job] for s in samples]
                for node, samples in sorted(self.metric_traces.items())
            },
            "targets": {node: rows for node, rows in sorted(self.targets.items())},
            "deadline_misses": [
                {
                    "job": m.job,
                    "task": m.task,
                    "node": m.node,
                    "release": m.release,
                    "deadline": m.deadline,
                    "completion": m.completion,
                    "injected": m.injected,
                }
                for m in self.deadline_misses
            ],
            "invariant_violations": self.invariant_violations,
            "placements_log": self.placements_log,
            "final_nodes": self.final_nodes,
            "final_jobs": self.final_jobs,
            "final_deployments": self.final_deployments,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True, separators=(",", ":"))

    def events_of(self, kind: str) -> list[dict]:
        return [entry for entry in self.timeline if entry["event"] == kind]


class _TaskPattern:
    """Cached isolated-server execution pattern for one placed RT job; the
    schedule repeats every hyperperiod because demand is worst-case-always."""

    def __init__(self, tasks, budget, period):
        self.h = hyperperiod([t.period for t in tasks] + [period])
        activations = simulate_server(tasks, budget, period, horizon=self.h)
        self.by_task: dict[str, list[tuple[int, int]]] = {}
        self.period_of = {t.name: t.period for t in tasks}
        self.wcet_of = {t.name: t.wcet for t in tasks}
        for act in sorted(activations, key=lambda a: (a.task, a.release)):
            # completion always lands inside the hyperperiod for admitted sets
            latency = act.latency if act.latency is not None else 0
            response = (act.completion - act.release) if act.completion else act.deadline
            self.by_task.setdefault(act.task, []).append((latency, response))


class _NodeAgent:
    """Worker-side state: running jobs, metric generator, assurance monitor."""

    def __init__(self, node: WorkerNode, scenario: SimScenario, plane: ControlPlane):
        self.node = node
        self.scenario = scenario
        self.plane = plane
        self.crashed = False
        self.running: dict[str, JobSpec] = {}
        self.patterns: dict[str, _TaskPattern] = {}
        self.deployed_at: dict[str, int] = {}
        self.monitor = AssuranceMonitor(
            node.id,
            scenario.monitor,
            node.assurance,
            lambda: {name: spec.criticality for name, spec in self.running.items()},
        )

    def deploy(self, job: JobSpec, at: int) -> None:
        self.running[job.name] = job
        self.deployed_at[job.name] = at
        if job.realtime:
            placement = self.plane.state.placements.get(job.name)
            if placement is not None and placement.server is not None:
                tasks = resolve_task_set(job, self.node)
                self.patterns[job.name] = _TaskPattern(
                    tasks, placement.server.budget, placement.server.period
                )

    def remove(self, job_id: str) -> None:
        self.running.pop(job_id, None)
        self.patterns.pop(job_id, None)
        self.deployed_at.pop(job_id, None)

    def job_statuses(self) -> dict[str, str]:
        return {name: "running" for name in sorted(self.running)}


def run(scenario: SimScenario) -> SimReport:
    """Execute the scenario; deterministic for a given (scenario, seed)."""
    if scenario.horizon <= 0:
        raise ScenarioInvalid("horizon must be positive")
    node_ids = [n.id for n in scenario.nodes]
    if len(set(node_ids)) != len(node_ids):
        raise ScenarioInvalid("duplicate node ids")

    rng = random.Random(scenario.seed)
    report = SimReport()
    plane = ControlPlane(policy=scenario.policy, heartbeat_timeout=3 * scenario.heartbeat_interval)
    for network in scenario.networks:
        plane.add_network(network)
    agents: dict[str, _NodeAgent] = {}
    for node in scenario.nodes:
        plane.register_node(node, now=0)
        agents[node.id] = _NodeAgent(node, scenario, plane)
        report.metric_traces[node.id] = []
        report.targets[node.id] = []

    failed_replicas: set[str] = set()
    active_stress: list[StressInject] = []
    events = list(scenario.events)
    event_index = 0

    def log(at: int, event: str, **fields) -> None:
        report.timeline.append({"at": at, "event": event, **fields})

    def check_allocation_invariants(at: int) -> None:
        for node_id in sorted(plane.state.nodes):
            record = plane.state.nodes[node_id]
            remaining = record.remaining_basic()
            if (
                remaining.cpu_utilization < 0
                or remaining.disk < 0
                or remaining.mem < 0
                or record.remaining_additional().violations()
            ):
                report.invariant_violations.append(
                    f"t={at}: node {node_id} allocation exceeds capacity"
                )
            if any(u > 1 for u in record.rt.utilizations()):
                report.invariant_violations.append(
                    f"t={at}: node {node_id} core utilization above 1"
                )

    def stress_on(node_id: str, at: int) -> list[StressInject]:
        return [
            s
            for s in active_stress
            if s.node == node_id and s.at <= at < s.at + s.duration
        ]

    def apply_actions(at: int, actions) -> None:
        for action in actions:
            if isinstance(action, Deploy):
                agent = agents[action.node]
                spec_placement = plane.state.placements.get(action.job)
                if agent.crashed or spec_placement is None:
                    continue
                if action.job in failed_replicas:
                    continue
                if action.job not in agent.running:
                    agent.deploy(spec_placement.spec, at)
                    log(at, "deploy", job=action.job, node=action.node)
                plane.state.job_status[action.job] = "running"
            elif isinstance(action, Evict):
                agent = agents.get(action.node)
                if agent is not None and action.job in agent.running:
                    agent.remove(action.job)
                    log(at, "evict", job=action.job, node=action.node)

    def process_rt_window(agent: _NodeAgent, start: int, end: int) -> None:
        """Generate activations released in [start, end) for the agent's RT
        jobs, fold in stress-induced latency, and collect target samples."""
        node_id = agent.node.id
        window_latency = 0
        window_slack = None
        for job_id in sorted(agent.patterns):
            pattern = agent.patterns[job_id]
            base = agent.deployed_at[job_id]
            for task in sorted(pattern.by_task):
                period = pattern.period_of[task]
                entries = pattern.by_task[task]
                k = max(0, -(-(start - base) // period))  # ceil division
                while base + k * period < end:
                    release = base + k * period
                    latency, response = entries[k % len(entries)]
                    deadline = release + period
                    margin = period - response - 1
                    injected_latency = 0
                    overrun = 0
                    for stress in stress_on(node_id, release):
                        if stress.exec_overrun_us and stress.job == job_id:
                            overrun += stress.exec_overrun_us
                        jitter = rng.random()
                        injected_latency += int(stress.magnitude * 30 * (0.5 + 0.5 * jitter))
                    injected_latency = max(0, min(injected_latency, margin - latency))
                    total_latency = latency + injected_latency
                    completion = release + response + injected_latency + overrun
                    if completion > deadline:
                        report.deadline_misses.append(
                            DeadlineMiss(
                                job=job_id,
                                task=task,
                                node=node_id,
                                release=release,
                                deadline=deadline,
                                completion=completion,
                                injected=overrun > 0,
                            )
                        )
                    window_latency = max(window_latency, total_latency)
                    slack_value = period - pattern.wcet_of[task] - total_latency
                    window_slack = (
                        slack_value
                        if window_slack is None
                        else min(window_slack, slack_value)
                    )
                    k += 1
        if window_slack is not None:
            report.targets[node_id].append((end, window_latency, window_slack))

    def sample_metrics(agent: _NodeAgent, at: int) -> None:
        node_id = agent.node.id
        stresses = stress_on(node_id, at)
        values: dict[str, float] = {}
        for channel in scenario.channels:
            if channel.copy_of is not None:
                value = values.get(channel.copy_of, 0.0)
            else:
                value = channel.mean + rng.gauss(0.0, channel.noise or 1e-9)
                for stress in stresses:
                    if stress.metric == channel.name:
                        value += stress.magnitude * (0.9 + 0.2 * rng.random())
            values[channel.name] = value
            sample = MetricSample(channel.name, at, value)
            agent.monitor.record(sample)
            report.metric_traces[node_id].append(sample)
        for stress in stresses:
            if stress.job is not None and stress.metric in values:
                sample = MetricSample(
                    stress.metric, at, stress.magnitude, job=stress.job
                )
                agent.monitor.record(sample)
                report.metric_traces[node_id].append(sample)

    def monitor_tick(agent: _NodeAgent, at: int) -> None:
        before = agent.monitor.state.phase
        actions = agent.monitor.tick(at)
        after = agent.monitor.state.phase
        if before == Phase.CLEAR and after == Phase.KILLING:
            log(at, "alarm", node=agent.node.id)
        if before != Phase.CLEAR and after == Phase.CLEAR:
            log(at, "hazard_cleared", node=agent.node.id)
        for action in actions:
            if isinstance(action, KillJob):
                log(at, "kill", node=agent.node.id, job=action.job)
                agent.remove(action.job)
                plane.notify_killed(agent.node.id, action.job)
            elif isinstance(action, GammaDowngrade):
                kind = "gamma_downgrade" if action.delta > 0 else "gamma_restore"
                log(at, kind, node=agent.node.id, delta=action.delta)
            elif isinstance(action, MigrateRequest):
                log(at, "migrate_request", node=agent.node.id, jobs=list(action.jobs))
                plane.notify_migrate(agent.node.id, action.jobs)

    # merged periodic tick stream: sampling, heartbeat, reconcile
    sampling_ticks = range(
        scenario.monitor.sampling_period,
        scenario.horizon + 1,
        scenario.monitor.sampling_period,
    )
    heartbeat_ticks = range(
        scenario.heartbeat_interval, scenario.horizon + 1, scenario.heartbeat_interval
    )
    reconcile_ticks = range(
        scenario.reconcile_interval, scenario.horizon + 1, scenario.reconcile_interval
    )
    ticks = sorted(
        [(t, 0) for t in sampling_ticks]
        + [(t, 1) for t in heartbeat_ticks]
        + [(t, 2) for t in reconcile_ticks]
    )

    previous_sample_at = 0
    for at, kind in ticks:
        while event_index < len(events) and events[event_index].at <= at:
            event = events[event_index]
            event_index += 1
            if isinstance(event, SubmitJob):
                job_ids = plane.submit(event.spec, now=event.at)
                log(event.at, "submitted", jobs=job_ids)
            elif isinstance(event, NodeCrash):
                agents[event.node].crashed = True
                agents[event.node].running.clear()
                agents[event.node].patterns.clear()
                log(event.at, "node_crash", node=event.node)
            elif isinstance(event, StressInject):
                active_stress.append(event)
                log(
                    event.at,
                    "stress_inject",
                    node=event.node,
                    metric=event.metric,
                    magnitude=event.magnitude,
                    duration=event.duration,
                )
            elif isinstance(event, ReplicaFail):
                failed_replicas.add(event.job)
                placement = plane.state.placements.get(event.job)
                if placement is not None:
                    agents[placement.node_id].remove(event.job)
                plane.state.job_status[event.job] = "failed"
                log(event.at, "replica_fail", job=event.job)

        if kind == 0:  # metric sampling + monitor step + RT activation window
            for node_id in sorted(agents):
                agent = agents[node_id]
                if agent.crashed:
                    continue
                process_rt_window(agent, previous_sample_at, at)
                sample_metrics(agent, at)
                monitor_tick(agent, at)
            previous_sample_at = at
        elif kind == 1:  # heartbeats
            for node_id in sorted(agents):
                agent = agents[node_id]
                if agent.crashed:
                    continue
                statuses = agent.job_statuses()
                for job in sorted(failed_replicas):
                    if job in plane.state.placements and (
                        plane.state.placements[job].node_id == node_id
                    ):
                        statuses[job] = "failed"
                plane.heartbeat(
                    node_id,
                    at,
                    effective_assurance=agent.node.assurance.effective(),
                    job_statuses=statuses,
                )
        else:  # reconcile round
            placements_before = dict(plane.state.placements)
            actions = plane.reconcile(now=at)
            for job_id in sorted(set(plane.state.placements) - set(placements_before)):
                placement = plane.state.placements[job_id]
                record = plane.state.nodes[placement.node_id]
                report.placements_log.append(
                    {
                        "at": at,
                        "job": job_id,
                        "node": placement.node_id,
                        "criticality": str(placement.spec.criticality),
                        "realtime": placement.spec.realtime,
                        "node_rt_capable": record.node.rt_capable,
                        "assurance_at_placement": placement.assurance_at_placement,
                        "threshold": scenario.policy.min_assurance[
                            placement.spec.criticality
                        ],
                    }
                )
                log(at, "placed", job=job_id, node=placement.node_id)
            apply_actions(at, actions)
            check_allocation_invariants(at)

    report.final_nodes = plane.get_nodes()
    report.final_jobs = plane.get_jobs()
    report.final_deployments = plane.get_deployments()
    return report
