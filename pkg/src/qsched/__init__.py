"""Quality-driven cluster scheduling for iterative training jobs.

The package splits into five layers: loss normalization primitives
(:mod:`qsched.core`), convergence-curve fitting (:mod:`qsched.predictor`),
the greedy quality allocator and fair-share baseline
(:mod:`qsched.scheduler`), a deterministic epoch simulator
(:mod:`qsched.simulator`), and evaluation metrics with CSV export
(:mod:`qsched.metrics`). ``qsched.cli`` wires them into the command line.
"""

from .core import (
    ClusterSpec,
    Family,
    JobPhase,
    JobState,
    LossHistory,
    LossRecord,
    append_loss,
    normalized_delta,
    normalized_loss,
)
from .predictor import (
    ExponentialFit,
    FitConfig,
    FitError,
    FittedModel,
    SublinearFit,
    backtest_error,
    fit_exponential,
    fit_sublinear,
    predict_loss_at,
    select_model,
    weighted_rms_residual,
)
from .scheduler import (
    AllocationPlan,
    CostModel,
    GainEstimate,
    SchedJob,
    allocate_fair,
    allocate_quality,
    iterations_in_epoch,
    predict_epoch_reduction,
    single_core_gains,
)
from .simulator import (
    ArrivalJob,
    JobProfile,
    Policy,
    SimConfig,
    Simulation,
    TraceFormatError,
    TraceJob,
    WorkloadSpec,
    advance_epoch,
    generate_workload,
    read_trace,
    replay_trace,
    run_simulation,
    true_loss,
    write_trace,
)
from .metrics import (
    GroupShare,
    JobSummary,
    MetricsBundle,
    TimeSample,
    avg_normalized_loss,
    export_csv,
    group_shares,
    time_to_fraction,
)

__version__ = "0.1.0"
