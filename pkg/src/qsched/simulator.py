"""Deterministic epoch-synchronous simulation of training workloads.

Jobs carry a hidden ground-truth convergence curve and a cost model; the
scheduler sees only the loss reports the engine emits, one per completed
iteration, with optional Gaussian measurement noise. Allocations are fixed
within an epoch, arrivals materialize at epoch boundaries, and every run is
a pure function of its configuration (one seeded generator for the
workload, one per job for its noise stream, so paired runs of different
policies observe identical loss values at identical iterations).

A recorded loss trace can be replayed through the same engine: the true
curve is then a linear interpolation of the trace and the job finishes when
its trace is exhausted.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass

import numpy as np

from .core import (
    ClusterSpec,
    Family,
    JobPhase,
    JobState,
    LossHistory,
    LossRecord,
    normalized_loss,
)
from .metrics import (
    GroupShare,
    JobSummary,
    MetricsBundle,
    TimeSample,
    group_shares,
    time_to_fraction,
)
from .predictor import (
    ExponentialFit,
    FitConfig,
    FitError,
    FittedModel,
    SublinearFit,
    exponential_value,
    select_model,
    sublinear_value,
)
from .scheduler import (
    AllocationPlan,
    CostModel,
    SchedJob,
    allocate_fair,
    allocate_quality,
    iterations_in_epoch,
)

CONVERGENCE_STREAK = 3  # consecutive sub-threshold drops that end a job
TRACE_HEADER = "job_id,iteration,loss,core_seconds_per_iteration,arrival_s"


class Policy(enum.Enum):
    QUALITY = "quality"  # greedy quality-maximizing allocation
    FAIR = "fair"        # work-conserving equal shares


@dataclass(frozen=True, slots=True)
class JobProfile:
    """Ground truth for one synthetic job; never visible to the scheduler."""

    family: Family
    true_params: SublinearFit | ExponentialFit
    initial_loss: float
    cost: CostModel
    noise_sigma: float          # stddev of reported-loss noise, as a range fraction
    convergence_epsilon: float  # drop threshold ending the job, as a range fraction
    max_iterations: int

    def __post_init__(self):
        if not 0.0 <= self.noise_sigma < 0.05:
            raise ValueError("noise_sigma must be in [0, 0.05)")
        if self.convergence_epsilon <= 0.0:
            raise ValueError("convergence_epsilon must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if abs(true_loss(self, 0.0) - self.initial_loss) > 1e-9 * max(1.0, abs(self.initial_loss)):
            raise ValueError("initial_loss must equal the true curve at k=0")

    @property
    def asymptote(self) -> float:
        return self.true_params.asymptote

    @property
    def loss_range(self) -> float:
        return self.initial_loss - self.asymptote


def true_loss(profile: JobProfile, k: float) -> float:
    """Noise-free ground-truth loss of a synthetic job at iteration k."""
    if k < 0:
        raise ValueError("k must be >= 0")
    p = profile.true_params
    if profile.family is Family.SUBLINEAR:
        return sublinear_value(p.a, p.b, p.c, p.d, k)
    return exponential_value(p.mu, p.b, p.c, k)


@dataclass(frozen=True)
class WorkloadSpec:
    """Sampling ranges for a synthetic workload (all draws are uniform)."""

    n_jobs: int = 160
    mean_interarrival: float = 15.0
    sublinear_fraction: float = 0.5  # remainder is exponential
    seed: int = 0
    # sublinear true-curve ranges: 1/(a k^2 + b k + c) + d
    sub_a: tuple[float, float] = (0.0, 0.02)
    sub_b: tuple[float, float] = (0.85, 2.4)
    sub_c: tuple[float, float] = (0.8, 1.2)
    sub_d: tuple[float, float] = (0.02, 0.4)
    # exponential true-curve ranges: mu^(k - b) + c
    exp_mu: tuple[float, float] = (0.80, 0.95)
    exp_b: tuple[float, float] = (0.0, 2.0)
    exp_c: tuple[float, float] = (0.05, 0.4)
    work_per_iteration: tuple[float, float] = (150.0, 430.0)  # core-seconds
    max_parallelism: int = 64
    noise_sigma: tuple[float, float] = (0.001, 0.005)
    convergence_epsilon: float = 1e-3
    max_iterations: int = 100_000

    def __post_init__(self):
        if self.n_jobs < 0:
            raise ValueError("n_jobs must be >= 0")
        if self.mean_interarrival <= 0:
            raise ValueError("mean_interarrival must be > 0")
        if not 0.0 <= self.sublinear_fraction <= 1.0:
            raise ValueError("sublinear_fraction must be in [0, 1]")


@dataclass(frozen=True, slots=True)
class ArrivalJob:
    job_id: int
    arrival_time: float
    profile: JobProfile


def generate_workload(spec: WorkloadSpec) -> list[ArrivalJob]:
    """Poisson arrivals with profiles drawn from the configured ranges."""
    rng = np.random.default_rng(spec.seed)
    jobs = []
    clock = 0.0
    for job_id in range(spec.n_jobs):
        clock += float(rng.exponential(spec.mean_interarrival))
        if rng.random() < spec.sublinear_fraction:
            params = SublinearFit(
                a=float(rng.uniform(*spec.sub_a)),
                b=float(rng.uniform(*spec.sub_b)),
                c=float(rng.uniform(*spec.sub_c)),
                d=float(rng.uniform(*spec.sub_d)),
            )
            family = Family.SUBLINEAR
            initial = sublinear_value(params.a, params.b, params.c, params.d, 0.0)
        else:
            params = ExponentialFit(
                mu=float(rng.uniform(*spec.exp_mu)),
                b=float(rng.uniform(*spec.exp_b)),
                c=float(rng.uniform(*spec.exp_c)),
            )
            family = Family.EXPONENTIAL
            initial = exponential_value(params.mu, params.b, params.c, 0.0)
        profile = JobProfile(
            family=family,
            true_params=params,
            initial_loss=initial,
            cost=CostModel(
                work_per_iteration=float(rng.uniform(*spec.work_per_iteration)),
                max_parallelism=spec.max_parallelism,
            ),
            noise_sigma=float(rng.uniform(*spec.noise_sigma)),
            convergence_epsilon=spec.convergence_epsilon,
            max_iterations=spec.max_iterations,
        )
        jobs.append(ArrivalJob(job_id, clock, profile))
    return jobs


@dataclass(frozen=True)
class SimConfig:
    cluster: ClusterSpec = ClusterSpec(capacity=640, epoch_length=2.0)
    policy: Policy = Policy.QUALITY
    workload: WorkloadSpec = WorkloadSpec()
    duration: float = 4000.0
    metrics_interval: float | None = None  # None: one sample per epoch
    fit: FitConfig = FitConfig()
    fit_window: int = 96        # most recent records used when refitting
    refit_min_records: int = 4  # new records required before a refit
    replay_max_parallelism: int = 64

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if self.fit_window < self.fit.min_history:
            raise ValueError("fit_window must cover min_history")
        if self.refit_min_records < 1:
            raise ValueError("refit_min_records must be >= 1")


class _TraceCurve:
    """Loss lookup for a replayed job: linear interpolation between the
    recorded iterations, clamped at both ends."""

    __slots__ = ("iterations", "losses")

    def __init__(self, iterations, losses):
        self.iterations = np.asarray(iterations, dtype=float)
        self.losses = np.asarray(losses, dtype=float)

    def __call__(self, k: float) -> float:
        return float(np.interp(k, self.iterations, self.losses))


class _SimJob:
    """Engine-side bookkeeping for one job."""

    __slots__ = (
        "state", "profile", "curve", "cost", "loss_range", "true_asymptote",
        "family", "max_iterations", "epsilon_abs", "sigma_abs", "rng",
        "model", "records_since_fit", "small_streak", "waited_epochs",
        "core_seconds", "completed_at", "converge_on_epsilon",
        "fit_family_lock", "fit_family_streak",
    )

    def __init__(self, state, curve, cost, loss_range, true_asymptote, family,
                 max_iterations, epsilon_abs, sigma_abs, rng,
                 converge_on_epsilon, profile=None):
        self.state = state
        self.profile = profile
        self.curve = curve
        self.cost = cost
        self.loss_range = loss_range
        self.true_asymptote = true_asymptote
        self.family = family
        self.max_iterations = max_iterations
        self.epsilon_abs = epsilon_abs
        self.sigma_abs = sigma_abs
        self.rng = rng
        self.model: FittedModel | None = None
        self.records_since_fit = 0
        self.small_streak = 0
        self.waited_epochs = 0
        self.core_seconds = 0.0
        self.completed_at: float | None = None
        self.converge_on_epsilon = converge_on_epsilon
        self.fit_family_lock: Family | None = None
        self.fit_family_streak: tuple[Family, int] | None = None

    def normalized(self) -> float:
        """Current normalized loss for metrics (not for allocation)."""
        if self.true_asymptote is not None:
            return normalized_loss(self.state, self.true_asymptote)
        # replayed job: normalize by the fitted asymptote when one exists
        if self.model is None:
            return 1.0
        initial = self.state.history.records[0].loss
        asym = self.model.asymptote
        if initial - asym <= 0.0:
            return 1.0
        cur = self.state.history.records[-1].loss
        return min(1.0, max(0.0, (cur - asym) / (initial - asym)))


class Simulation:
    """One deterministic run: jobs arrive, get cores each epoch, emit losses.

    Use :func:`run_simulation` unless you need access to the final job
    states (for example to export a trace).
    """

    def __init__(self, cfg: SimConfig, arrivals: list[ArrivalJob] | None = None,
                 trace_jobs: list["TraceJob"] | None = None):
        self.cfg = cfg
        self.clock = 0.0
        self.epoch_index = 0
        self.jobs: dict[int, _SimJob] = {}
        self.bundle = MetricsBundle()
        self._pending_shares: GroupShare | None = None
        self._replay = trace_jobs is not None
        if trace_jobs is not None:
            self._arrivals = sorted(
                (self._trace_sim_job(t) for t in trace_jobs),
                key=lambda item: (item[0], item[1].state.job_id),
            )
        else:
            if arrivals is None:
                arrivals = generate_workload(cfg.workload)
            self._arrivals = sorted(
                (self._synthetic_sim_job(a) for a in arrivals),
                key=lambda item: (item[0], item[1].state.job_id),
            )
        self._next_arrival = 0
        interval = cfg.metrics_interval or cfg.cluster.epoch_length
        self._sample_every = interval
        self._next_sample = interval

    # -- construction helpers -------------------------------------------------

    def _synthetic_sim_job(self, arrival: ArrivalJob) -> tuple[float, _SimJob]:
        profile = arrival.profile
        state = JobState(arrival.job_id, arrival.arrival_time)
        sim_job = _SimJob(
            state=state,
            curve=lambda k, p=profile: true_loss(p, k),
            cost=profile.cost,
            loss_range=profile.loss_range,
            true_asymptote=profile.asymptote,
            family=profile.family,
            max_iterations=profile.max_iterations,
            epsilon_abs=profile.convergence_epsilon * profile.loss_range,
            sigma_abs=profile.noise_sigma * profile.loss_range,
            rng=np.random.default_rng([self.cfg.workload.seed, arrival.job_id]),
            converge_on_epsilon=True,
            profile=profile,
        )
        return arrival.arrival_time, sim_job

    def _trace_sim_job(self, trace: "TraceJob") -> tuple[float, _SimJob]:
        state = JobState(trace.job_id, trace.arrival_s)
        curve = _TraceCurve(trace.iterations, trace.losses)
        sim_job = _SimJob(
            state=state,
            curve=curve,
            cost=CostModel(trace.work_per_iteration, self.cfg.replay_max_parallelism),
            loss_range=float(max(trace.losses) - min(trace.losses)),
            true_asymptote=None,
            family=None,
            max_iterations=int(trace.iterations[-1]),
            epsilon_abs=0.0,
            sigma_abs=0.0,
            rng=None,
            converge_on_epsilon=False,  # a trace ends where the job ended
        )
        return trace.arrival_s, sim_job

    # -- engine ---------------------------------------------------------------

    def _materialize_arrivals(self):
        while (self._next_arrival < len(self._arrivals)
               and self._arrivals[self._next_arrival][0] <= self.clock + 1e-12):
            _, job = self._arrivals[self._next_arrival]
            self._next_arrival += 1
            self.jobs[job.state.job_id] = job
            job.state.phase = JobPhase.PENDING
            self._append_record(job, 0, self.clock)
            if job.max_iterations == 0 or (
                    job.converge_on_epsilon is False and job.state.progress >= job.max_iterations):
                self._complete(job, self.clock)

    def _append_record(self, job: _SimJob, k: int, sim_time: float) -> bool:
        loss = job.curve(float(k))
        if job.sigma_abs > 0.0:
            # clipped so a reported loss never falls more than 4 sigma below
            # the true curve (keeps reported series meaningfully monotone)
            noise = float(job.rng.normal(0.0, job.sigma_abs))
            loss += min(max(noise, -4.0 * job.sigma_abs), 4.0 * job.sigma_abs)
        history = job.state.history
        prev = history.records[-1].loss if history.records else None
        history.append(LossRecord(k, sim_time, loss))
        job.records_since_fit += 1
        if prev is not None and job.converge_on_epsilon:
            drop = prev - loss
            job.small_streak = job.small_streak + 1 if drop < job.epsilon_abs else 0
            if job.small_streak >= CONVERGENCE_STREAK:
                return True
        return False

    def _complete(self, job: _SimJob, at: float):
        job.state.phase = JobPhase.CONVERGED
        job.state.current_cores = 0
        job.completed_at = at

    def active_jobs(self) -> list[_SimJob]:
        return [job for _, job in sorted(self.jobs.items())
                if job.state.phase in (JobPhase.PENDING, JobPhase.RUNNING)]

    def _refit_models(self, active: list[_SimJob]):
        cfg = self.cfg
        for job in active:
            history = job.state.history
            if len(history) < cfg.fit.min_history:
                continue
            if job.model is not None and job.records_since_fit < cfg.refit_min_records:
                continue
            window = history.records[-cfg.fit_window:]
            try:
                job.model = select_model(LossHistory(window), cfg.fit,
                                         job.fit_family_lock)
            except FitError:
                job.records_since_fit = 0
                continue  # keep the previous model if any; bootstrap otherwise
            job.records_since_fit = 0
            # once selection lands on the same family twice in a row, stop
            # paying for the losing family on every refit
            if job.fit_family_lock is None:
                family = job.model.family
                if job.fit_family_streak and job.fit_family_streak[0] is family:
                    streak = job.fit_family_streak[1] + 1
                else:
                    streak = 1
                job.fit_family_streak = (family, streak)
                if streak >= 2:
                    job.fit_family_lock = family

    def _allocate(self, active: list[_SimJob]) -> AllocationPlan:
        views = [
            SchedJob(job.state.job_id, job.state.progress, job.state.history.max_delta,
                     job.cost, job.model, job.waited_epochs)
            for job in active
        ]
        start = time.perf_counter()
        if self.cfg.policy is Policy.QUALITY:
            plan = allocate_quality(views, self.cfg.cluster, self.epoch_index)
        else:
            plan = allocate_fair(views, self.cfg.cluster, self.epoch_index)
        elapsed_ms = (time.perf_counter() - start) * 1e3
        self.bundle.scheduler_latencies.append((self.epoch_index, elapsed_ms))
        return plan

    def advance_epoch(self, plan: AllocationPlan):
        """Run one epoch under ``plan``: progress, loss records, convergence."""
        known = {job_id for job_id, job in self.jobs.items()
                 if job.state.phase in (JobPhase.PENDING, JobPhase.RUNNING)}
        unknown = set(plan.assignments) - known
        if unknown:
            raise ValueError(f"plan references unknown or finished jobs: {sorted(unknown)}")
        epoch_len = self.cfg.cluster.epoch_length
        start = self.clock
        for job_id, cores in plan.assignments.items():
            job = self.jobs[job_id]
            state = job.state
            if cores <= 0:
                state.phase = JobPhase.PENDING
                state.current_cores = 0
                job.waited_epochs += 1
                continue
            state.phase = JobPhase.RUNNING
            state.current_cores = cores
            job.waited_epochs = 0
            dk = iterations_in_epoch(job.cost, cores, epoch_len)
            if dk <= 0.0:
                continue
            p0 = state.progress
            p1 = min(p0 + dk, float(job.max_iterations))
            seconds_per_iter = epoch_len / dk
            finished_at = None
            for k in range(math.floor(p0) + 1, math.floor(p1) + 1):
                at = start + (k - p0) * seconds_per_iter
                if self._append_record(job, k, at):
                    finished_at = at
                    p1 = float(k)
                    break
            if finished_at is None and p1 >= job.max_iterations:
                finished_at = start + (p1 - p0) * seconds_per_iter
            state.progress = p1
            if finished_at is not None:
                job.core_seconds += cores * (finished_at - start)
                self._complete(job, finished_at)
            else:
                job.core_seconds += cores * epoch_len
        self.clock = (self.epoch_index + 1) * epoch_len
        self.epoch_index += 1

    def _sample_metrics(self):
        active = self.active_jobs()
        if not active:
            self._pending_shares = None
            return
        values = [job.normalized() for job in active]
        shares = self._pending_shares or GroupShare(0.0, 0.0, 0.0)
        self.bundle.time_series.append(TimeSample(
            self.clock, sum(values) / len(values), len(active), shares,
        ))
        self._pending_shares = None

    def run(self) -> MetricsBundle:
        cfg = self.cfg
        needs_models = cfg.policy is Policy.QUALITY or self._replay
        self._materialize_arrivals()
        while True:
            active = self.active_jobs()
            if active:
                if needs_models:
                    self._refit_models(active)
                plan = self._allocate(active)
                self._pending_shares = group_shares(
                    {job.state.job_id: job.normalized() for job in active}, plan,
                )
            else:
                plan = AllocationPlan(self.epoch_index, {}, cfg.cluster.capacity)
            self.advance_epoch(plan)
            self._materialize_arrivals()
            if self.clock + 1e-9 >= self._next_sample:
                self._sample_metrics()
                while self._next_sample <= self.clock + 1e-9:
                    self._next_sample += self._sample_every
            done = (self._next_arrival >= len(self._arrivals)
                    and not self.active_jobs())
            if done or self.clock >= cfg.duration:
                break
        self._summarize_jobs()
        return self.bundle

    def _summarize_jobs(self):
        for _, sim_job in sorted(self.jobs.items()):
            state = sim_job.state
            records = state.history.records
            summary_family = sim_job.family
            if summary_family is None and sim_job.model is not None:
                summary_family = sim_job.model.family
            t90 = t95 = None
            if records:
                asym = sim_job.true_asymptote
                if asym is None and sim_job.model is not None:
                    asym = sim_job.model.asymptote
                initial = records[0].loss
                if asym is not None and initial - asym > 0.0:
                    span = initial - asym
                    times = [r.sim_time - state.arrival_time for r in records]
                    values = [min(1.0, max(0.0, (r.loss - asym) / span)) for r in records]
                    t90 = time_to_fraction(times, values, 0.90)
                    t95 = time_to_fraction(times, values, 0.95)
            completion = None
            if sim_job.completed_at is not None:
                completion = sim_job.completed_at - state.arrival_time
            self.bundle.job_summaries.append(JobSummary(
                job_id=state.job_id,
                arrival_s=state.arrival_time,
                family=summary_family,
                time_to_90pct_s=t90,
                time_to_95pct_s=t95,
                completion_s=completion,
                total_core_seconds=sim_job.core_seconds,
            ))
        # arrivals never materialized (simulation ended first)
        for _, sim_job in self._arrivals[self._next_arrival:]:
            state = sim_job.state
            self.bundle.job_summaries.append(JobSummary(
                job_id=state.job_id,
                arrival_s=state.arrival_time,
                family=sim_job.family,
                time_to_90pct_s=None,
                time_to_95pct_s=None,
                completion_s=None,
                total_core_seconds=0.0,
            ))
        self.bundle.job_summaries.sort(key=lambda j: j.job_id)


def run_simulation(cfg: SimConfig, arrivals: list[ArrivalJob] | None = None) -> MetricsBundle:
    """Run one simulation to completion and return its metrics."""
    return Simulation(cfg, arrivals=arrivals).run()


def advance_epoch(sim: Simulation, plan: AllocationPlan) -> Simulation:
    """Advance a simulation by one epoch under an externally built plan."""
    sim.advance_epoch(plan)
    return sim


# ---------------------------------------------------------------------------
# loss traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceJob:
    job_id: int
    arrival_s: float
    iterations: list[int]
    losses: list[float]
    work_per_iteration: float


class TraceFormatError(ValueError):
    pass


def read_trace(path: str) -> list[TraceJob]:
    """Parse a loss-trace file (see TRACE_HEADER; '#' lines are comments)."""
    rows_by_job: dict[int, list[tuple[int, float, float, float]]] = {}
    header_seen = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not header_seen:
                if line != TRACE_HEADER:
                    raise TraceFormatError(
                        f"line {lineno}: expected header '{TRACE_HEADER}'"
                    )
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise TraceFormatError(f"line {lineno}: expected 5 fields, got {len(parts)}")
            try:
                job_id = int(parts[0])
                iteration = int(parts[1])
                loss = float(parts[2])
                work = float(parts[3])
                arrival = float(parts[4])
            except ValueError as exc:
                raise TraceFormatError(f"line {lineno}: {exc}") from exc
            if iteration < 0 or work <= 0.0 or arrival < 0.0:
                raise TraceFormatError(f"line {lineno}: value out of range")
            rows = rows_by_job.setdefault(job_id, [])
            if rows and iteration <= rows[-1][0]:
                raise TraceFormatError(
                    f"line {lineno}: job {job_id} iteration {iteration} "
                    f"not after {rows[-1][0]}"
                )
            if rows and arrival != rows[0][3]:
                raise TraceFormatError(
                    f"line {lineno}: job {job_id} arrival_s changed mid-trace"
                )
            rows.append((iteration, loss, work, arrival))
    if not header_seen:
        raise TraceFormatError("empty trace file")
    if not rows_by_job:
        raise TraceFormatError("trace has a header but no rows")
    jobs = []
    for job_id in sorted(rows_by_job):
        rows = rows_by_job[job_id]
        jobs.append(TraceJob(
            job_id=job_id,
            arrival_s=rows[0][3],
            iterations=[r[0] for r in rows],
            losses=[r[1] for r in rows],
            # one scalar cost per job; the median is exact for the constant
            # per-job costs our own exporter writes
            work_per_iteration=float(np.median([r[2] for r in rows])),
        ))
    return jobs


def write_trace(path: str, sim: Simulation):
    """Export every recorded loss of a finished simulation as a trace file."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TRACE_HEADER + "\n")
        for job_id, job in sorted(sim.jobs.items()):
            work = repr(job.cost.work_per_iteration)
            arrival = repr(job.state.arrival_time)
            for rec in job.state.history.records:
                fh.write(f"{job_id},{rec.iteration},{rec.loss!r},{work},{arrival}\n")


def replay_trace(path: str, cfg: SimConfig) -> MetricsBundle:
    """Run the engine over a recorded trace instead of synthetic curves."""
    trace_jobs = read_trace(path)
    return Simulation(cfg, trace_jobs=trace_jobs).run()
