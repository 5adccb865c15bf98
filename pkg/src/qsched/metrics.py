"""Evaluation quantities and CSV export.

Everything here is computed from sampled time series and per-job
trajectories; nothing feeds back into scheduling decisions. The three CSV
files written by :func:`export_csv` are the machine-readable contract for
plotting and for the test suite (values at 6 significant digits, undefined
durations as empty fields).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

from .core import Family
from .scheduler import AllocationPlan


@dataclass(frozen=True, slots=True)
class GroupShare:
    """Fractions of allocated cores by normalized-loss rank group.

    Running jobs are ranked by current normalized loss, descending: the top
    quarter (rounded up) is the high-loss group, the next quarter medium,
    the remaining half low (nearly converged).
    """

    high_share: float
    medium_share: float
    low_share: float


@dataclass(frozen=True, slots=True)
class TimeSample:
    sim_time: float
    avg_normalized_loss: float
    running_jobs: int
    shares: GroupShare


@dataclass(frozen=True, slots=True)
class JobSummary:
    job_id: int
    arrival_s: float
    family: Family | None
    time_to_90pct_s: float | None  # seconds from arrival to normalized loss <= 0.10
    time_to_95pct_s: float | None  # ... to <= 0.05
    completion_s: float | None
    total_core_seconds: float


@dataclass(slots=True)
class MetricsBundle:
    time_series: list[TimeSample] = field(default_factory=list)
    job_summaries: list[JobSummary] = field(default_factory=list)
    scheduler_latencies: list[tuple[int, float]] = field(default_factory=list)  # (epoch, ms)

    def time_averaged_loss(self) -> float | None:
        if not self.time_series:
            return None
        return sum(s.avg_normalized_loss for s in self.time_series) / len(self.time_series)


def avg_normalized_loss(values) -> float:
    """Mean normalized loss across running jobs (each already in [0, 1])."""
    values = list(values)
    if not values:
        raise ValueError("no running jobs: sample is undefined")
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"normalized loss {v} outside [0, 1]")
    return sum(values) / len(values)


def time_to_fraction(times, values, fraction: float) -> float | None:
    """First time the normalized loss reaches 1 - fraction, or None.

    ``times`` are seconds relative to the job's arrival; crossings between
    samples are linearly interpolated.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    threshold = 1.0 - fraction
    prev_t = prev_v = None
    for t, v in zip(times, values):
        if v <= threshold:
            if prev_t is None or prev_v <= threshold:
                return t
            # interpolate between the straddling samples
            frac = (prev_v - threshold) / (prev_v - v)
            return prev_t + frac * (t - prev_t)
        prev_t, prev_v = t, v
    return None


def group_shares(normalized_by_job: dict[int, float], plan: AllocationPlan) -> GroupShare:
    """Core shares of the high / medium / low loss groups under ``plan``."""
    ids = sorted(normalized_by_job, key=lambda j: (-normalized_by_job[j], j))
    n = len(ids)
    if n == 0:
        return GroupShare(0.0, 0.0, 0.0)
    quarter = math.ceil(0.25 * n)
    high = ids[:quarter]
    medium = ids[quarter:2 * quarter]
    low = ids[2 * quarter:]
    total = sum(plan.assignments.get(j, 0) for j in ids)
    if total == 0:
        return GroupShare(0.0, 0.0, 0.0)

    def share(group):
        return sum(plan.assignments.get(j, 0) for j in group) / total

    return GroupShare(share(high), share(medium), share(low))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return f"{value:.6g}"


def export_csv(bundle: MetricsBundle, directory: str) -> list[str]:
    """Write timeseries.csv, jobs.csv and sched_latency.csv into ``directory``.

    Returns the paths written. Rows are ordered by time (then job id) and
    all floats carry 6 significant digits; missing durations are empty
    fields rather than zeros so they cannot corrupt averages.
    """
    os.makedirs(directory, exist_ok=True)
    paths = []

    path = os.path.join(directory, "timeseries.csv")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("sim_time_s,avg_normalized_loss,running_jobs,"
                     "share_high,share_medium,share_low\n")
            for s in bundle.time_series:
                fh.write(",".join((
                    _fmt(s.sim_time), _fmt(s.avg_normalized_loss),
                    str(s.running_jobs), _fmt(s.shares.high_share),
                    _fmt(s.shares.medium_share), _fmt(s.shares.low_share),
                )) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    paths.append(path)

    path = os.path.join(directory, "jobs.csv")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("job_id,arrival_s,family,time_to_90pct_s,time_to_95pct_s,"
                     "completion_s,total_core_seconds\n")
            for j in sorted(bundle.job_summaries, key=lambda j: j.job_id):
                fh.write(",".join((
                    str(j.job_id), _fmt(j.arrival_s),
                    j.family.value if j.family is not None else "",
                    _fmt(j.time_to_90pct_s), _fmt(j.time_to_95pct_s),
                    _fmt(j.completion_s), _fmt(j.total_core_seconds),
                )) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    paths.append(path)

    path = os.path.join(directory, "sched_latency.csv")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,millis\n")
            for epoch, ms in bundle.scheduler_latencies:
                fh.write(f"{epoch},{_fmt(ms)}\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    paths.append(path)
    return paths
