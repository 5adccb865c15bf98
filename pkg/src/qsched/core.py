"""Shared domain types and loss normalization.

Raw loss values are model-specific and meaningless across jobs. What is
comparable is the per-iteration *drop* in loss divided by the largest drop
that job has produced so far: a dimensionless number in [0, 1] that starts
at 1 for a fresh job and decays toward 0 as the job converges. Everything
downstream (prediction, allocation, metrics) works on that scale.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class Family(enum.Enum):
    """Convergence-curve family of an iterative training job."""

    SUBLINEAR = "sublinear"      # rates like 1/k or 1/k^2 (first-order methods)
    EXPONENTIAL = "exponential"  # rates like mu^k, 0 < mu < 1 (quasi-Newton etc.)


class JobPhase(enum.Enum):
    PENDING = "pending"      # arrived (or paused), holds no cores
    RUNNING = "running"      # holds >= 1 core this epoch
    CONVERGED = "converged"  # finished, never scheduled again
    REMOVED = "removed"      # cancelled externally


@dataclass(frozen=True, slots=True)
class LossRecord:
    """One loss report: iteration count, simulation time, raw loss value."""

    iteration: int
    sim_time: float
    loss: float

    def __post_init__(self):
        if self.iteration < 0:
            raise ValueError(f"iteration must be >= 0, got {self.iteration}")


class LossHistory:
    """Per-job loss series plus the running normalization scale.

    ``max_delta`` is the largest single-step loss drop seen so far, the
    denominator that makes deltas comparable across jobs. It only ever
    grows; loss increases (possible with stochastic optimizers) never
    shrink it.
    """

    __slots__ = ("records", "_running_max", "_index")

    def __init__(self, records=()):
        self.records: list[LossRecord] = []
        self._running_max: list[float] = []  # max drop up to and including record i
        self._index: dict[int, int] = {}     # iteration -> position
        for rec in records:
            self.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def max_delta(self) -> float:
        return self._running_max[-1] if self._running_max else 0.0

    def append(self, record: LossRecord) -> None:
        """Append one record; iterations must be strictly increasing."""
        if self.records:
            last = self.records[-1]
            if record.iteration <= last.iteration:
                raise ValueError(
                    f"iteration {record.iteration} not after {last.iteration}; "
                    "loss reports must arrive in iteration order"
                )
            if record.sim_time < last.sim_time:
                raise ValueError(
                    f"sim_time went backwards: {record.sim_time} < {last.sim_time}"
                )
            drop = last.loss - record.loss
            self._running_max.append(max(self._running_max[-1], drop, 0.0))
        else:
            self._running_max.append(0.0)
        self._index[record.iteration] = len(self.records)
        self.records.append(record)

    def max_delta_at(self, iteration: int) -> float:
        """Normalization scale as of the record at ``iteration``."""
        pos = self._index.get(iteration)
        if pos is None:
            raise ValueError(f"no record at iteration {iteration}")
        return self._running_max[pos]

    def record_at(self, iteration: int) -> LossRecord:
        pos = self._index.get(iteration)
        if pos is None:
            raise ValueError(f"no record at iteration {iteration}")
        return self.records[pos]

    def has_iteration(self, iteration: int) -> bool:
        return iteration in self._index


def append_loss(history: LossHistory, record: LossRecord) -> LossHistory:
    """Ingest one loss report into a job's history. Returns the history."""
    history.append(record)
    return history


def normalized_delta(history: LossHistory, k: int) -> float:
    """Loss drop at iteration k divided by the largest drop seen up to k.

    Requires records at both k-1 and k. The first positive drop of a job
    maps to exactly 1.0 (it is its own maximum); increases clamp to 0.
    """
    pos = history._index.get(k)
    if pos is None or pos == 0:
        raise ValueError(f"normalized_delta needs records at {k - 1} and {k}")
    prev = history.records[pos - 1]
    if prev.iteration != k - 1:
        raise ValueError(
            f"normalized_delta needs records at {k - 1} and {k}; "
            f"found gap after iteration {prev.iteration}"
        )
    drop = prev.loss - history.records[pos].loss
    if drop <= 0.0:
        return 0.0
    scale = history._running_max[pos]
    # A positive drop at k implies the running max at k is >= drop > 0.
    return drop / scale


@dataclass(slots=True)
class JobState:
    """Scheduler-visible state of one job."""

    job_id: int
    arrival_time: float
    history: LossHistory = field(default_factory=LossHistory)
    phase: JobPhase = JobPhase.PENDING
    current_cores: int = 0
    progress: float = 0.0  # continuous iteration count, fractional carryover

    def __post_init__(self):
        if self.current_cores < 0:
            raise ValueError("current_cores must be >= 0")


def normalized_loss(job: JobState, asymptote: float) -> float:
    """Remaining distance to the asymptote as a fraction of the initial one.

    1.0 for a job at its initial loss, 0.0 at full convergence. Clamped to
    [0, 1] so measurement noise cannot push it outside the reporting range.
    """
    if not job.history.records:
        raise ValueError(f"job {job.job_id} has no loss records")
    initial = job.history.records[0].loss
    current = job.history.records[-1].loss
    span = initial - asymptote
    if span <= 0.0:
        raise ValueError(
            f"job {job.job_id}: asymptote {asymptote} does not lie below "
            f"initial loss {initial}; zero quality range"
        )
    return min(1.0, max(0.0, (current - asymptote) / span))


@dataclass(frozen=True, slots=True)
class ClusterSpec:
    """Total CPU capacity and the fixed scheduling epoch length."""

    capacity: int
    epoch_length: float

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        if self.epoch_length <= 0:
            raise ValueError(f"epoch_length must be > 0, got {self.epoch_length}")
