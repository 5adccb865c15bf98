"""Command-line entry point: simulate, fit, bench-sched, replay.

Configuration comes from a plain-text file of ``key = value`` lines ('#'
comments allowed); every key has a default matching the reference workload
(640 cores, 160 jobs, 15 s mean interarrival). Flags always win over the
config file. Exit codes: 0 success, 1 runtime failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import time

import numpy as np

from .core import ClusterSpec, Family, LossHistory, LossRecord
from .metrics import export_csv
from .predictor import (
    ExponentialFit,
    FitConfig,
    FitError,
    FittedModel,
    SublinearFit,
    backtest_error,
    select_model,
)
from .scheduler import CostModel, SchedJob, allocate_quality
from .simulator import (
    Policy,
    SimConfig,
    Simulation,
    TraceFormatError,
    WorkloadSpec,
    generate_workload,
    read_trace,
)

# configuration keys, their parsers, and the reference defaults
_CONFIG_SCHEMA = {
    "capacity": (int, 640),
    "epoch_length": (float, 2.0),
    "duration": (float, 4000.0),
    "metrics_interval": (float, 0.0),  # 0: one sample per epoch
    "policy": (str, "quality"),
    "seed": (int, 0),
    "output_dir": (str, "runs"),
    "n_jobs": (int, 160),
    "mean_interarrival": (float, 15.0),
    "sublinear_fraction": (float, 0.5),
    "sub_a_min": (float, 0.0), "sub_a_max": (float, 0.02),
    "sub_b_min": (float, 0.85), "sub_b_max": (float, 2.4),
    "sub_c_min": (float, 0.8), "sub_c_max": (float, 1.2),
    "sub_d_min": (float, 0.02), "sub_d_max": (float, 0.4),
    "exp_mu_min": (float, 0.80), "exp_mu_max": (float, 0.95),
    "exp_b_min": (float, 0.0), "exp_b_max": (float, 2.0),
    "exp_c_min": (float, 0.05), "exp_c_max": (float, 0.4),
    "work_min": (float, 150.0), "work_max": (float, 430.0),
    "max_parallelism": (int, 64),
    "noise_min": (float, 0.001), "noise_max": (float, 0.005),
    "convergence_epsilon": (float, 1e-3),
    "max_iterations": (int, 100_000),
    "decay": (float, 0.9),
    "min_history": (int, 5),
    "max_refine_steps": (int, 50),
    "refine_tolerance": (float, 1e-9),
    "fit_window": (int, 96),
    "refit_min_records": (int, 4),
    "replay_max_parallelism": (int, 64),
}


class ConfigError(ValueError):
    pass


def load_config(path: str) -> dict:
    """Read a config file; 'default' means the built-in defaults."""
    values = {key: default for key, (_, default) in _CONFIG_SCHEMA.items()}
    if path == "default":
        return values
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, text = line.partition("=")
            key = key.strip()
            if key not in _CONFIG_SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
            parser = _CONFIG_SCHEMA[key][0]
            try:
                values[key] = parser(text.strip())
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def apply_overrides(values: dict, pairs: list[str]) -> dict:
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got '{pair}'")
        key, _, text = pair.partition("=")
        key = key.strip()
        if key not in _CONFIG_SCHEMA:
            raise ConfigError(f"--set: unknown key '{key}'")
        try:
            values[key] = _CONFIG_SCHEMA[key][0](text.strip())
        except ValueError as exc:
            raise ConfigError(f"--set: bad value for {key}: {exc}") from exc
    return values


def build_sim_config(values: dict, policy: Policy, seed: int | None = None) -> SimConfig:
    workload = WorkloadSpec(
        n_jobs=values["n_jobs"],
        mean_interarrival=values["mean_interarrival"],
        sublinear_fraction=values["sublinear_fraction"],
        seed=values["seed"] if seed is None else seed,
        sub_a=(values["sub_a_min"], values["sub_a_max"]),
        sub_b=(values["sub_b_min"], values["sub_b_max"]),
        sub_c=(values["sub_c_min"], values["sub_c_max"]),
        sub_d=(values["sub_d_min"], values["sub_d_max"]),
        exp_mu=(values["exp_mu_min"], values["exp_mu_max"]),
        exp_b=(values["exp_b_min"], values["exp_b_max"]),
        exp_c=(values["exp_c_min"], values["exp_c_max"]),
        work_per_iteration=(values["work_min"], values["work_max"]),
        max_parallelism=values["max_parallelism"],
        noise_sigma=(values["noise_min"], values["noise_max"]),
        convergence_epsilon=values["convergence_epsilon"],
        max_iterations=values["max_iterations"],
    )
    return SimConfig(
        cluster=ClusterSpec(values["capacity"], values["epoch_length"]),
        policy=policy,
        workload=workload,
        duration=values["duration"],
        metrics_interval=values["metrics_interval"] or None,
        fit=FitConfig(
            decay=values["decay"],
            min_history=values["min_history"],
            max_refine_steps=values["max_refine_steps"],
            refine_tolerance=values["refine_tolerance"],
        ),
        fit_window=values["fit_window"],
        refit_min_records=values["refit_min_records"],
        replay_max_parallelism=values["replay_max_parallelism"],
    )


def workload_hash(cfg: SimConfig) -> str:
    digest = hashlib.sha256()
    for job in generate_workload(cfg.workload):
        digest.update(repr((job.job_id, job.arrival_time, job.profile)).encode())
    return digest.hexdigest()[:12]


def _percentile(samples, q):
    return float(np.percentile(np.asarray(samples), q))


def _summarize_run(label: str, cfg: SimConfig, bundle, out_dir: str):
    avg = bundle.time_averaged_loss()
    t90 = [j.time_to_90pct_s for j in bundle.job_summaries if j.time_to_90pct_s is not None]
    lat = [ms for _, ms in bundle.scheduler_latencies]
    converged = sum(1 for j in bundle.job_summaries if j.completion_s is not None)
    parts = [
        f"policy={label}",
        f"seed={cfg.workload.seed}",
        f"workload={workload_hash(cfg)}",
        f"jobs={cfg.workload.n_jobs}",
        f"converged={converged}",
        "time_avg_normalized_loss=" + (f"{avg:.4f}" if avg is not None else "n/a"),
        "mean_time_to_90pct_s=" + (f"{float(np.mean(t90)):.1f}" if t90 else "n/a"),
        "sched_latency_ms_p50/p99=" + (
            f"{_percentile(lat, 50):.2f}/{_percentile(lat, 99):.2f}" if lat else "n/a"),
        f"output={out_dir}",
    ]
    print("  ".join(parts))


def cmd_simulate(args) -> int:
    try:
        values = apply_overrides(load_config(args.config), args.set or [])
        if args.seed is not None:
            values["seed"] = args.seed
        if args.duration is not None:
            values["duration"] = args.duration
        if args.output is not None:
            values["output_dir"] = args.output
        policy_text = args.policy or values["policy"]
        if policy_text not in ("quality", "fair", "both"):
            raise ConfigError(f"unknown policy '{policy_text}'")
        policies = [Policy.QUALITY, Policy.FAIR] if policy_text == "both" \
            else [Policy(policy_text)]
        configs = [build_sim_config(values, p) for p in policies]
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        for cfg in configs:
            sim = Simulation(cfg)
            bundle = sim.run()
            out_dir = f"{values['output_dir']}/{cfg.policy.value}"
            export_csv(bundle, out_dir)
            _summarize_run(cfg.policy.value, cfg, bundle, out_dir)
    except Exception as exc:  # noqa: BLE001 - report and signal failure
        print(f"simulation failed: {exc}", file=sys.stderr)
        return 1
    return 0


def _format_params(model: FittedModel) -> str:
    p = model.params
    if isinstance(p, SublinearFit):
        return f"a={p.a:.6g} b={p.b:.6g} c={p.c:.6g} d={p.d:.6g}"
    return f"mu={p.mu:.6g} b={p.b:.6g} c={p.c:.6g}"


def cmd_fit(args) -> int:
    family = None
    if args.family != "auto":
        family = Family(args.family)
    try:
        trace_jobs = read_trace(args.trace)
    except (OSError, TraceFormatError) as exc:
        print(f"cannot read trace: {exc}", file=sys.stderr)
        return 2
    cfg = FitConfig()
    for job in trace_jobs:
        history = LossHistory()
        for i, (k, loss) in enumerate(zip(job.iterations, job.losses)):
            history.append(LossRecord(k, float(i), loss))
        try:
            model = select_model(history, cfg, family)
        except FitError as exc:
            print(f"job={job.job_id} error=\"{exc}\"")
            continue
        line = (f"job={job.job_id} family={model.family.value} "
                f"{_format_params(model)} rms={model.weighted_rms_residual:.6g} "
                f"n={model.n_points}")
        try:
            err = backtest_error(history, cfg, args.horizon, family)
            line += f" backtest_h{args.horizon}={err:.6g}"
        except FitError as exc:
            line += f" backtest_h{args.horizon}=n/a (\"{exc}\")"
        print(line)
    return 0


def synthesize_bench_jobs(n_jobs: int, seed: int) -> list[SchedJob]:
    """Deterministic random fitted jobs for scheduler benchmarking."""
    rng = np.random.default_rng(seed)
    jobs = []
    for job_id in range(n_jobs):
        if rng.random() < 0.5:
            params = SublinearFit(float(rng.uniform(0, 0.05)), float(rng.uniform(0.3, 2.5)),
                                  float(rng.uniform(0.5, 2.0)), float(rng.uniform(0, 0.5)))
            model = FittedModel(Family.SUBLINEAR, params, 0.0, 20)
        else:
            params = ExponentialFit(float(rng.uniform(0.5, 0.95)), float(rng.uniform(-2, 2)),
                                    float(rng.uniform(0, 0.5)))
            model = FittedModel(Family.EXPONENTIAL, params, 0.0, 20)
        jobs.append(SchedJob(
            job_id=job_id,
            progress=float(rng.uniform(0, 60)),
            max_delta=float(rng.uniform(0.05, 1.0)),
            cost=CostModel(float(rng.uniform(1.0, 30.0)), int(rng.integers(8, 33))),
            model=model,
        ))
    return jobs


def cmd_bench_sched(args) -> int:
    if args.jobs < 1:
        print("bench-sched: --jobs must be >= 1", file=sys.stderr)
        return 2
    if args.cores < args.jobs:
        print("bench-sched: --cores must be >= --jobs (starvation floor)",
              file=sys.stderr)
        return 2
    if args.trials < 1:
        print("bench-sched: --trials must be >= 1", file=sys.stderr)
        return 2
    jobs = synthesize_bench_jobs(args.jobs, args.seed)
    spec = ClusterSpec(capacity=args.cores, epoch_length=2.0)
    latencies = []
    for trial in range(args.trials):
        start = time.perf_counter()
        plan = allocate_quality(jobs, spec, trial)
        elapsed_ms = (time.perf_counter() - start) * 1e3
        latencies.append(elapsed_ms)
        print(f"trial={trial} jobs={args.jobs} cores={args.cores} "
              f"allocated={plan.total_allocated} millis={elapsed_ms:.3f}")
    print(f"summary jobs={args.jobs} cores={args.cores} trials={args.trials} "
          f"mean_ms={float(np.mean(latencies)):.3f} "
          f"p50_ms={_percentile(latencies, 50):.3f} "
          f"p99_ms={_percentile(latencies, 99):.3f}")
    return 0


def cmd_replay(args) -> int:
    try:
        values = apply_overrides(load_config(args.config), args.set or [])
        if args.output is not None:
            values["output_dir"] = args.output
        policy_text = args.policy or values["policy"]
        if policy_text not in ("quality", "fair"):
            raise ConfigError(f"replay needs policy quality or fair, got '{policy_text}'")
        cfg = build_sim_config(values, Policy(policy_text))
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        trace_jobs = read_trace(args.trace)
    except (OSError, TraceFormatError) as exc:
        print(f"cannot read trace: {exc}", file=sys.stderr)
        return 2
    try:
        sim = Simulation(cfg, trace_jobs=trace_jobs)
        bundle = sim.run()
        out_dir = f"{values['output_dir']}/replay-{cfg.policy.value}"
        export_csv(bundle, out_dir)
        avg = bundle.time_averaged_loss()
        print(f"replay policy={cfg.policy.value} jobs={len(trace_jobs)} "
              "time_avg_normalized_loss="
              + (f"{avg:.4f}" if avg is not None else "n/a")
              + f" output={out_dir}")
    except Exception as exc:  # noqa: BLE001
        print(f"replay failed: {exc}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsched",
        description="Quality-driven cluster scheduling: simulate synthetic "
                    "workloads, fit convergence curves, benchmark the "
                    "allocator, replay recorded traces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the epoch simulator, write metrics CSVs")
    p.add_argument("--config", default="default",
                   help="config file path, or 'default' for built-in defaults")
    p.add_argument("--policy", choices=["quality", "fair", "both"],
                   help="scheduling policy; 'both' runs a paired same-seed comparison")
    p.add_argument("--seed", type=int, help="workload seed override")
    p.add_argument("--duration", type=float, help="simulated seconds override")
    p.add_argument("--output", help="output directory override")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit convergence curves to a loss trace")
    p.add_argument("trace", help="loss trace file")
    p.add_argument("--family", choices=["auto", "sublinear", "exponential"],
                   default="auto", help="force a curve family instead of selecting")
    p.add_argument("--horizon", type=int, default=10,
                   help="backtest forecast distance in iterations")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bench-sched", help="time the greedy allocator on synthetic jobs")
    p.add_argument("--jobs", type=int, required=True)
    p.add_argument("--cores", type=int, required=True)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench_sched)

    p = sub.add_parser("replay", help="run the engine over a recorded loss trace")
    p.add_argument("trace", help="loss trace file")
    p.add_argument("--config", default="default")
    p.add_argument("--policy", choices=["quality", "fair"])
    p.add_argument("--output", help="output directory override")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
