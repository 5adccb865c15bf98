"""Paired quality-vs-fair comparison on a scaled-down workload.

Same seed, same jobs, two policies. Prints the headline numbers: the
time-averaged normalized loss across running jobs, how fast jobs reach 90%
and 95% loss reduction, and where the cores went by loss group.

The full-scale reference experiment (160 jobs, 640 cores) is one command:

    qsched simulate --policy both --seed 1
"""

import numpy as np

from qsched import ClusterSpec, Policy, SimConfig, WorkloadSpec, run_simulation

SEED = 1


def small_config(policy):
    # a quarter of the reference cluster; the parallelism cap scales down
    # with it so per-job dynamics stay comparable
    return SimConfig(
        cluster=ClusterSpec(capacity=160, epoch_length=2.0),
        policy=policy,
        workload=WorkloadSpec(n_jobs=40, mean_interarrival=15.0, seed=SEED,
                              max_parallelism=16,
                              work_per_iteration=(40.0, 110.0)),
        duration=4000.0,
    )


def mean_threshold_times(bundle_a, bundle_b, attr):
    # average over the jobs that reached the threshold under BOTH policies,
    # so slow stragglers do not skew one side's population
    t_a = {j.job_id: getattr(j, attr) for j in bundle_a.job_summaries}
    t_b = {j.job_id: getattr(j, attr) for j in bundle_b.job_summaries}
    both = [j for j in t_a if t_a[j] is not None and t_b[j] is not None]
    return float(np.mean([t_a[j] for j in both])), float(np.mean([t_b[j] for j in both]))


def steady_shares(bundle):
    last_arrival = max(j.arrival_s for j in bundle.job_summaries)
    samples = [s for s in bundle.time_series if s.sim_time <= last_arrival
               and s.running_jobs >= 8]
    return (float(np.mean([s.shares.high_share for s in samples])),
            float(np.mean([s.shares.medium_share for s in samples])),
            float(np.mean([s.shares.low_share for s in samples])))


def main():
    bundles = {p: run_simulation(small_config(p)) for p in (Policy.QUALITY, Policy.FAIR)}

    print(f"seed {SEED}, 40 jobs, 160 cores, poisson arrivals (mean 15 s)\n")
    print(f"{'':>28}  {'quality':>10}  {'fair':>10}")
    row = "{:>28}  {:>10.4f}  {:>10.4f}"
    q, f = bundles[Policy.QUALITY], bundles[Policy.FAIR]
    print(row.format("time-avg normalized loss", q.time_averaged_loss(),
                     f.time_averaged_loss()))
    for attr, label in (("time_to_90pct_s", "mean time to 90% (s)"),
                        ("time_to_95pct_s", "mean time to 95% (s)")):
        mean_q, mean_f = mean_threshold_times(q, f, attr)
        print(row.format(label, mean_q, mean_f))
    for policy, bundle in bundles.items():
        hi, md, lo = steady_shares(bundle)
        print(f"\n{policy.value} core shares while arrivals ongoing: "
              f"high-loss {hi:.0%}, medium {md:.0%}, low {lo:.0%}")

    gap = 1.0 - q.time_averaged_loss() / f.time_averaged_loss()
    print(f"\nquality policy keeps the average normalized loss {gap:.0%} lower")


if __name__ == "__main__":
    main()
