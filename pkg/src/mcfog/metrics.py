"""Offline metric scoring pipeline.

Ranks candidate monitoring metrics by how strongly their spikes coincide with
real-time degradation: each series is max-filtered over a sliding window,
exponentiated to weight spikes, normalized to unit energy, and scored by a
weighted sum of its correlation with activation latency and anti-correlation
with slack time.  Redundant metrics (near-duplicates of an earlier one) are
dropped before scoring.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

ArrayLike = Union[Sequence[float], np.ndarray]


class LengthMismatch(ValueError):
    """Series in one analysis must share a common timebase."""


@dataclass(frozen=True)
class PipelineConfig:
    window: int = 50
    exponent: int = 4
    weight_latency: float = 0.5
    weight_slack: float = 0.5
    redundancy_threshold: float = 0.95

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.exponent <= 0 or self.exponent % 2 != 0:
            raise ValueError("exponent must be a positive even integer")
        if abs(self.weight_latency + self.weight_slack - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if not 0 < self.redundancy_threshold <= 1:
            raise ValueError("redundancy_threshold must be in (0, 1]")


def slack(deadline, arrival, wcet):
    """Margin between a deadline and the worst-case completion: d - a - C.

    Exact on integers; negative slack is a (potential) deadline miss.
    """
    return deadline - arrival - wcet


def trailing_max(values: ArrayLike, window: int) -> np.ndarray:
    """Replace each sample with the max over the `window` samples ending at it."""
    values = np.asarray(values, dtype=float)
    if window == 1:
        return values.copy()
    padded = np.concatenate([np.full(window - 1, -np.inf), values])
    return np.lib.stride_tricks.sliding_window_view(padded, window).max(axis=1)


def preprocess(series: ArrayLike, config: PipelineConfig) -> np.ndarray:
    """Max filter, spike-weighting exponentiation, then unit-energy scaling.

    An all-zero series stays all-zero; anything else comes out with the sum of
    squares exactly one (to float precision).
    """
    series = np.asarray(series, dtype=float)
    if series.size < config.window:
        raise LengthMismatch(
            f"series of length {series.size} shorter than window {config.window}"
        )
    filtered = trailing_max(series, config.window)
    # pre-scaling is absorbed by the unit-energy step but keeps the
    # exponentiation away from float under/overflow
    scale = float(np.max(np.abs(filtered)))
    if scale == 0.0:
        return np.zeros_like(filtered)
    shaped = (filtered / scale) ** config.exponent
    return shaped / float(np.sqrt(np.sum(shaped**2)))


def cross_correlation(a: ArrayLike, b: ArrayLike) -> float:
    """Zero-lag inner product; lies in [-1, 1] for unit-energy inputs."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"series lengths differ: {a.shape} vs {b.shape}")
    return float(np.dot(a, b))


def _raw_cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b)) / (na * nb)


@dataclass(frozen=True)
class MetricScore:
    name: str
    score: float


def rank_metrics(
    metrics: Mapping[str, ArrayLike],
    latency: ArrayLike,
    slack_series: ArrayLike,
    config: PipelineConfig = PipelineConfig(),
) -> list[MetricScore]:
    """Score and order candidate metrics.

    Metrics are visited in input order; one whose raw-series cosine similarity
    (absolute value) with an already-kept metric exceeds the redundancy
    threshold is dropped.  Survivors are preprocessed together with the two
    target signals and scored

        weight_latency * corr(metric, latency) - weight_slack * corr(metric, slack)

    so that tracking latency spikes helps and tracking healthy slack hurts.
    Descending score, names breaking ties.
    """
    latency = np.asarray(latency, dtype=float)
    slack_arr = np.asarray(slack_series, dtype=float)
    arrays = {name: np.asarray(s, dtype=float) for name, s in metrics.items()}
    for name, arr in arrays.items():
        if arr.shape != latency.shape or arr.shape != slack_arr.shape:
            raise LengthMismatch(f"metric {name} is not on the common timebase")

    kept: dict[str, np.ndarray] = {}
    for name, arr in arrays.items():
        if any(
            abs(_raw_cosine(arr, other)) > config.redundancy_threshold
            for other in kept.values()
        ):
            continue
        kept[name] = arr

    latency_hat = preprocess(latency, config)
    slack_hat = preprocess(slack_arr, config)
    scores = []
    for name, arr in kept.items():
        metric_hat = preprocess(arr, config)
        score = config.weight_latency * cross_correlation(
            metric_hat, latency_hat
        ) - config.weight_slack * cross_correlation(metric_hat, slack_hat)
        scores.append(MetricScore(name, score))
    scores.sort(key=lambda ms: (-ms.score, ms.name))
    return scores


def load_metric_series(stream: Union[str, io.TextIOBase]) -> dict[str, np.ndarray]:
    """Node-level metric series from an assurance trace CSV (rows with a job
    attribution are skipped), in first-appearance order."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    series: dict[str, list[float]] = {}
    for row in reader:
        if row["job"]:
            continue
        series.setdefault(row["metric"], []).append(float(row["value"]))
    return {name: np.asarray(vals) for name, vals in series.items()}


def load_targets(stream: Union[str, io.TextIOBase]) -> tuple[np.ndarray, np.ndarray]:
    """Latency and slack target series from a CSV with columns
    timestamp_us, latency_us, slack_us."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    latency, slack_values = [], []
    for row in reader:
        latency.append(float(row["latency_us"]))
        slack_values.append(float(row["slack_us"]))
    return np.asarray(latency), np.asarray(slack_values)


def write_scores_csv(scores: Iterable[MetricScore], stream: io.TextIOBase) -> None:
    writer = csv.writer(stream)
    writer.writerow(["name", "score"])
    for ms in scores:
        writer.writerow([ms.name, repr(ms.score)])


def format_top_table(scores: Sequence[MetricScore], top: int = 5) -> str:
    """Human-readable top-k table."""
    rows = scores[:top]
    width = max([len("metric")] + [len(ms.name) for ms in rows])
    lines = [f"{'metric'.ljust(width)}  score", f"{'-' * width}  -----"]
    for ms in rows:
        lines.append(f"{ms.name.ljust(width)}  {ms.score:+.6f}")
    return "\n".join(lines)
