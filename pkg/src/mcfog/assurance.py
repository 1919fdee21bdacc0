"""Worker-side assurance monitoring.

Periodic samples of node metrics feed a sliding-window detector (level check on
the max-filtered value plus a least-squares trend check).  A raised alarm walks
the hazard state machine through its three stages: kill the guiltiest
lower-criticality job, then, if the hazard survives a timeout, downgrade the
node's runtime assurance and ask the control plane to migrate the critical
workload.  The monitor is the sole writer of its node's gamma.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from .model import AssuranceLevel, Criticality


@dataclass(frozen=True)
class MetricSample:
    metric: str
    timestamp: int  # microseconds
    value: float
    job: Optional[str] = None  # attribution; None = node-level


@dataclass(frozen=True)
class Threshold:
    max_level: float
    max_slope: float  # value units per second


@dataclass(frozen=True)
class MonitorConfig:
    sampling_period: int  # microseconds
    window: int  # samples
    thresholds: Mapping[str, Threshold]
    kill_grace: int  # microseconds
    downgrade_timeout: int  # microseconds
    gamma_penalty: int
    watched_metrics: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "thresholds", dict(self.thresholds))
        object.__setattr__(self, "watched_metrics", tuple(self.watched_metrics))
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if min(self.sampling_period, self.kill_grace, self.downgrade_timeout) <= 0:
            raise ValueError("durations must be > 0")
        if self.gamma_penalty <= 0:
            raise ValueError("gamma_penalty must be > 0")

    @property
    def window_span(self) -> int:
        """Duration covered by one full window, in microseconds."""
        return self.window * self.sampling_period


class Phase(Enum):
    CLEAR = "Clear"
    ALARMED = "Alarmed"
    KILLING = "Killing"
    DOWNGRADED = "Downgraded"


@dataclass(frozen=True)
class HazardState:
    phase: Phase = Phase.CLEAR
    since: int = 0  # entry instant of the current phase (alarm time for KILLING)
    suspect: Optional[str] = None
    clear_since: Optional[int] = None  # start of a sustained-clear stretch


@dataclass(frozen=True)
class Alarm:
    metric: str
    reason: str  # "level" | "trend"


# actions emitted towards the container runtime / control plane
@dataclass(frozen=True)
class KillJob:
    job: str


@dataclass(frozen=True)
class GammaDowngrade:
    """Lowers gamma by delta; a negative delta restores."""

    delta: int


@dataclass(frozen=True)
class MigrateRequest:
    jobs: tuple[str, ...]


Action = Union[KillJob, GammaDowngrade, MigrateRequest]


def least_squares_slope(samples: Sequence[MetricSample]) -> float:
    """Ordinary least-squares slope of value over time, per second."""
    n = len(samples)
    times = [s.timestamp / 1e6 for s in samples]
    values = [s.value for s in samples]
    mean_t = sum(times) / n
    mean_v = sum(values) / n
    den = sum((t - mean_t) ** 2 for t in times)
    if den == 0:
        return 0.0
    num = sum((t - mean_t) * (v - mean_v) for t, v in zip(times, values))
    return num / den


def detect(
    windows: Mapping[str, Sequence[MetricSample]], config: MonitorConfig
) -> Optional[Alarm]:
    """First hazard found, scanning metrics in watched order.

    A metric alarms on level when the max over its window exceeds max_level,
    or on trend when the least-squares slope exceeds max_slope.  Metrics with
    an unfilled window are skipped.
    """
    for metric in config.watched_metrics:
        threshold = config.thresholds.get(metric)
        samples = windows.get(metric)
        if threshold is None or samples is None or len(samples) < config.window:
            continue
        recent = list(samples)[-config.window :]
        if max(s.value for s in recent) > threshold.max_level:
            return Alarm(metric, "level")
        if least_squares_slope(recent) > threshold.max_slope:
            return Alarm(metric, "trend")
    return None


def identify_guilty(
    job_criticalities: Mapping[str, Criticality],
    contributions: Mapping[str, float],
) -> Optional[str]:
    """The job to kill: largest contribution to the alarmed metric among jobs
    strictly below the node's top criticality; ties prefer lower criticality,
    then the lexicographically smaller id.  None when every job is top-level.
    """
    if not job_criticalities:
        return None
    ceiling = max(job_criticalities.values())
    eligible = [j for j, c in job_criticalities.items() if c < ceiling]
    if not eligible:
        return None
    return min(
        eligible,
        key=lambda j: (-contributions.get(j, 0.0), job_criticalities[j], j),
    )


def step(
    state: HazardState,
    now: int,
    alarm: Optional[Alarm],
    config: MonitorConfig,
    guilty: Optional[str] = None,
    critical_jobs: Sequence[str] = (),
) -> tuple[HazardState, list[Action]]:
    """One transition of the hazard state machine.

    guilty is consulted only when a fresh alarm arrives in CLEAR (one suspect
    per episode); critical_jobs is the migration list should this step
    escalate to DOWNGRADED.
    """
    if state.phase == Phase.CLEAR:
        if alarm is None:
            return state, []
        actions: list[Action] = [KillJob(guilty)] if guilty else []
        return HazardState(Phase.KILLING, since=now, suspect=guilty), actions

    if state.phase == Phase.KILLING:
        if alarm is None:
            if now - state.since >= config.kill_grace:
                return HazardState(Phase.CLEAR, since=now), []
            return state, []
        if now - state.since >= config.downgrade_timeout:
            actions = [
                GammaDowngrade(config.gamma_penalty),
                MigrateRequest(tuple(critical_jobs)),
            ]
            return HazardState(Phase.DOWNGRADED, since=now, suspect=state.suspect), actions
        return state, []

    if state.phase == Phase.DOWNGRADED:
        if alarm is not None:
            if state.clear_since is None:
                return state, []
            return replace(state, clear_since=None), []
        if state.clear_since is None:
            return replace(state, clear_since=now), []
        if now - state.clear_since >= config.window_span:
            return HazardState(Phase.CLEAR, since=now), [GammaDowngrade(-config.gamma_penalty)]
        return state, []

    # ALARMED is a transient stage folded into the CLEAR->KILLING step
    return state, []


class AssuranceMonitor:
    """Stateful monitor for one node: buffers sample windows, drives the state
    machine on each tick and applies gamma changes to the node's assurance."""

    def __init__(
        self,
        node_id: str,
        config: MonitorConfig,
        assurance: AssuranceLevel,
        jobs: Callable[[], Mapping[str, Criticality]],
    ):
        self.node_id = node_id
        self.config = config
        self.assurance = assurance
        self._jobs = jobs
        self.state = HazardState()
        self._node_windows: dict[str, deque[MetricSample]] = {}
        self._job_windows: dict[tuple[str, str], deque[MetricSample]] = {}

    def record(self, sample: MetricSample) -> None:
        if sample.job is None:
            key_windows = self._node_windows
            key = sample.metric
        else:
            key_windows = self._job_windows
            key = (sample.metric, sample.job)
        window = key_windows.setdefault(key, deque(maxlen=self.config.window))
        if window and sample.timestamp <= window[-1].timestamp:
            raise ValueError(
                f"timestamps must be strictly increasing per metric ({sample.metric})"
            )
        window.append(sample)

    def _contributions(self, metric: str) -> dict[str, float]:
        out: dict[str, float] = {}
        for (m, job), window in self._job_windows.items():
            if m == metric:
                out[job] = sum(s.value for s in window)
        return out

    def tick(self, now: int) -> list[Action]:
        """Evaluate detection at `now` and advance the state machine."""
        alarm = detect(self._node_windows, self.config)
        jobs = dict(self._jobs())
        guilty = None
        if alarm is not None and self.state.phase == Phase.CLEAR:
            guilty = identify_guilty(jobs, self._contributions(alarm.metric))
        critical = sorted(j for j, c in jobs.items() if c == Criticality.HI)
        self.state, actions = step(
            self.state, now, alarm, self.config, guilty=guilty, critical_jobs=critical
        )
        for action in actions:
            if isinstance(action, GammaDowngrade):
                self.assurance.gamma = self.assurance.gamma - action.delta
        return actions


def write_trace_csv(samples: Iterable[MetricSample], stream: io.TextIOBase) -> None:
    writer = csv.writer(stream)
    writer.writerow(["timestamp_us", "metric", "value", "job"])
    for s in samples:
        writer.writerow([s.timestamp, s.metric, repr(s.value), s.job or ""])


def read_trace_csv(stream: Union[str, io.TextIOBase]) -> list[MetricSample]:
    """Parse a replay trace: timestamp_us, metric, value, job (job empty for
    node-level samples)."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    samples = []
    for row in reader:
        samples.append(
            MetricSample(
                metric=row["metric"],
                timestamp=int(row["timestamp_us"]),
                value=float(row["value"]),
                job=row["job"] or None,
            )
        )
    return samples
