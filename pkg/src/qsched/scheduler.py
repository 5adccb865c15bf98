"""Per-epoch core allocation: greedy quality maximization and fair share.

The quality policy starts every job at one core (the starvation floor) and
then hands out the remaining cores one at a time, each to the job whose
predicted normalized loss reduction for the coming epoch grows the most
from one extra core. Because the fitted curves are convex and decreasing,
those marginal gains only shrink as a job accumulates cores, so a single
max-heap re-keyed for the winner of each grant reproduces the exhaustive
optimum over all feasible integer allocations.

The baseline is a work-conserving fair scheduler: equal integer shares,
remainders to the lowest job ids, and shares a capped job cannot use are
redistributed among the others until nothing moves.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

from .core import ClusterSpec, Family, JobState
from .predictor import FittedModel, predict_loss_at

# epochs a job may sit unscheduled under oversubscription before it jumps
# the gain queue
STARVATION_PATIENCE = 10


@dataclass(frozen=True, slots=True)
class CostModel:
    """Maps a core grant to an iteration rate for one job."""

    work_per_iteration: float  # core-seconds per training iteration
    max_parallelism: int       # cores beyond this add no speed

    def __post_init__(self):
        if self.work_per_iteration <= 0:
            raise ValueError("work_per_iteration must be > 0")
        if self.max_parallelism < 1:
            raise ValueError("max_parallelism must be >= 1")


@dataclass(frozen=True, slots=True)
class GainEstimate:
    job_id: int
    cores_if_granted: int
    normalized_gain: float


@dataclass(slots=True)
class SchedJob:
    """Allocator's view of one schedulable job.

    ``model`` is None while the job has too little history to fit; such
    jobs ride the bootstrap rule (see allocate_quality). ``waited_epochs``
    counts consecutive epochs the job received zero cores.
    """

    job_id: int
    progress: float
    max_delta: float
    cost: CostModel
    model: FittedModel | None
    waited_epochs: int = 0


@dataclass(frozen=True, slots=True)
class AllocationPlan:
    epoch_index: int
    assignments: dict[int, int]
    capacity: int

    def __post_init__(self):
        total = sum(self.assignments.values())
        if total > self.capacity:
            raise ValueError(
                f"allocation exceeds capacity: {total} > {self.capacity}"
            )
        if any(v < 0 for v in self.assignments.values()):
            raise ValueError("allocations must be non-negative")

    @property
    def total_allocated(self) -> int:
        return sum(self.assignments.values())


def iterations_in_epoch(cost: CostModel, cores: int, epoch_length: float) -> float:
    """Iterations one epoch buys at the given core count (0 cores -> 0)."""
    if cores < 0:
        raise ValueError("cores must be >= 0")
    if cores == 0:
        return 0.0
    return min(cores, cost.max_parallelism) * epoch_length / cost.work_per_iteration


def predict_epoch_reduction(job: JobState, model: FittedModel, cost: CostModel,
                            cores: int, epoch_length: float) -> float:
    """Predicted normalized loss drop over the next epoch at ``cores``.

    The raw predicted drop is divided by the job's own normalization scale
    (its largest observed single-iteration drop), which is what makes the
    number comparable across jobs.
    """
    scale = job.history.max_delta
    if scale <= 0.0:
        raise ValueError(
            f"job {job.job_id} has no positive loss drop yet; "
            "use the bootstrap gain instead"
        )
    p = job.progress
    dk = iterations_in_epoch(cost, cores, epoch_length)
    drop = predict_loss_at(model, p) - predict_loss_at(model, p + dk)
    return max(drop / scale, 0.0)


def _gain_fn(job: SchedJob, epoch_length: float):
    """Closure computing the job's predicted normalized reduction at ``cores``.

    Returns None for jobs that must use the bootstrap rule (no model or no
    normalization scale yet).
    """
    if job.model is None or job.max_delta <= 0.0:
        return None
    params = job.model.params
    family = job.model.family
    p = job.progress
    scale = job.max_delta
    rate = epoch_length / job.cost.work_per_iteration  # iterations per core
    cap = job.cost.max_parallelism
    base = predict_loss_at(job.model, p)

    def gain(cores: int) -> float:
        if cores <= 0:
            return 0.0
        dk = min(cores, cap) * rate
        return max((base - predict_loss_at(job.model, p + dk)) / scale, 0.0)

    # tight scalar path for the greedy loop (avoids dataclass dispatch)
    if family is Family.SUBLINEAR:
        a, b, c, d = params.a, params.b, params.c, params.d

        def value_at(k: float) -> float:
            return max(1.0 / (a * k * k + b * k + c) + d, d)
    else:
        lmu = math.log(params.mu)
        b, c = params.b, params.c

        def value_at(k: float) -> float:
            return math.exp(min((k - b) * lmu, 700.0)) + c

    def marginal(cores: int) -> float:
        # gain(cores + 1) - gain(cores); collapses to a single curve segment
        if cores >= cap:
            return 0.0
        lo = value_at(p + cores * rate)
        hi = value_at(p + (cores + 1) * rate)
        return max((lo - hi) / scale, 0.0)

    return gain, marginal


def _single_core_gains(jobs: list[SchedJob], spec: ClusterSpec):
    """Single-core gain estimates plus a flag marking pegged (unfittable) jobs.

    Jobs without a usable model are pegged to the best fitted gain
    (optimistic admission: fresh jobs sit on the steepest part of their
    curve, and a pessimistic default would starve exactly the jobs the
    quality policy should favor).
    """
    fns = {j.job_id: _gain_fn(j, spec.epoch_length) for j in jobs}
    fitted = [(j, fns[j.job_id]) for j in jobs if fns[j.job_id] is not None]
    best = max((fn[0](1) for _, fn in fitted), default=1.0)
    out = []
    for job in jobs:
        fn = fns[job.job_id]
        gain = fn[0](1) if fn is not None else best
        if job.waited_epochs > STARVATION_PATIENCE:
            gain = math.inf
        out.append((GainEstimate(job.job_id, 1, gain), fn is None))
    return out


def single_core_gains(jobs: list[SchedJob], spec: ClusterSpec) -> list[GainEstimate]:
    return [estimate for estimate, _ in _single_core_gains(jobs, spec)]


def allocate_quality(jobs: list[SchedJob], spec: ClusterSpec,
                     epoch_index: int = 0) -> AllocationPlan:
    """Greedy quality-maximizing allocation for one epoch.

    With more jobs than cores, only the top-C jobs by single-core gain run
    this epoch (jobs that waited too long jump the queue); the rest pause.
    Otherwise every job gets its one-core floor and the surplus goes to the
    highest marginal gains, ties to the smaller job id.
    """
    if not jobs:
        return AllocationPlan(epoch_index, {}, spec.capacity)
    capacity = spec.capacity
    if len(jobs) > capacity:
        ranked = sorted(
            _single_core_gains(jobs, spec),
            key=lambda e: (-e[0].normalized_gain, not e[1], e[0].job_id),
        )
        chosen = {e[0].job_id: 1 for e in ranked[:capacity]}
        assignments = {j.job_id: chosen.get(j.job_id, 0) for j in jobs}
        return AllocationPlan(epoch_index, assignments, capacity)

    assignments = {j.job_id: 1 for j in jobs}
    surplus = capacity - len(jobs)

    # heap of fitted jobs keyed by the gain of their next single-core grant;
    # only the winner's key changes after a grant, so only it is re-pushed
    heap = []
    marginals = {}
    bootstrap = []  # job ids without a usable model, pegged to the heap top
    caps = {}
    for job in jobs:
        caps[job.job_id] = job.cost.max_parallelism
        if caps[job.job_id] <= 1:
            continue  # already at its ceiling with the floor core
        fn = _gain_fn(job, spec.epoch_length)
        if fn is None:
            bootstrap.append(job.job_id)
        else:
            marginals[job.job_id] = fn[1]
            heapq.heappush(heap, (-fn[1](1), job.job_id))
    bootstrap.sort()

    while surplus > 0 and (heap or bootstrap):
        # pegged jobs tie the current top gain and win the tie (admission
        # first): a fresh job that lost every tie would sit at one core too
        # long to ever accumulate enough history to be fitted at all
        if bootstrap:
            winner = bootstrap[0]
        else:
            winner = heap[0][1]
        got = assignments[winner] + 1
        assignments[winner] = got
        surplus -= 1
        if winner in marginals:
            heapq.heappop(heap)
            if got < caps[winner]:
                heapq.heappush(heap, (-marginals[winner](got), winner))
        else:
            if got >= caps[winner]:
                bootstrap.pop(0)
    return AllocationPlan(epoch_index, assignments, capacity)


def allocate_fair(jobs: list[SchedJob], spec: ClusterSpec,
                  epoch_index: int = 0) -> AllocationPlan:
    """Work-conserving equal shares with cap redistribution to a fixpoint."""
    if not jobs:
        return AllocationPlan(epoch_index, {}, spec.capacity)
    capacity = spec.capacity
    if len(jobs) > capacity:
        # one core each to the lowest ids, the rest pause this epoch
        ids = sorted(j.job_id for j in jobs)
        running = set(ids[:capacity])
        return AllocationPlan(
            epoch_index,
            {j.job_id: (1 if j.job_id in running else 0) for j in jobs},
            capacity,
        )

    assignments: dict[int, int] = {}
    active = sorted(jobs, key=lambda j: j.job_id)
    remaining = capacity
    while active:
        base, rem = divmod(remaining, len(active))
        tentative = {
            job.job_id: base + (1 if i < rem else 0)
            for i, job in enumerate(active)
        }
        capped = [j for j in active if tentative[j.job_id] > j.cost.max_parallelism]
        if not capped:
            assignments.update(tentative)
            break
        for job in capped:
            assignments[job.job_id] = job.cost.max_parallelism
            remaining -= job.cost.max_parallelism
            active.remove(job)
    return AllocationPlan(epoch_index, assignments, capacity)
