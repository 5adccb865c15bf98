import csv

import pytest

from qsched.core import Family
from qsched.metrics import (
    GroupShare,
    JobSummary,
    MetricsBundle,
    TimeSample,
    avg_normalized_loss,
    export_csv,
    group_shares,
    time_to_fraction,
)
from qsched.scheduler import AllocationPlan


class TestAvgNormalizedLoss:
    def test_mean_of_two(self):
        assert avg_normalized_loss([1.0, 0.2]) == pytest.approx(0.6)

    def test_single_running_job(self):
        assert avg_normalized_loss([0.3]) == pytest.approx(0.3)

    def test_empty_undefined(self):
        with pytest.raises(ValueError):
            avg_normalized_loss([])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            avg_normalized_loss([1.2])


class TestTimeToFraction:
    def test_exact_sample_hit(self):
        # loss 1/(k+1), one iteration per second: 0.1 reached at t=9
        times = list(range(20))
        values = [1.0 / (k + 1) for k in range(20)]
        assert time_to_fraction(times, values, 0.9) == pytest.approx(9.0)

    def test_half_reduction(self):
        times = list(range(20))
        values = [1.0 / (k + 1) for k in range(20)]
        assert time_to_fraction(times, values, 0.5) == pytest.approx(1.0)

    def test_never_reached(self):
        assert time_to_fraction([0, 1, 2], [1.0, 0.5, 0.2], 0.9) is None

    def test_interpolated_crossing(self):
        # drops from 0.2 to 0.0 between t=10 and t=20; crosses 0.1 at 15
        got = time_to_fraction([0, 10, 20], [1.0, 0.2, 0.0], 0.9)
        assert got == pytest.approx(15.0)

    def test_monotone_in_fraction(self):
        times = [0, 3, 7, 11, 20, 31]
        values = [1.0, 0.6, 0.4, 0.2, 0.06, 0.01]
        previous = 0.0
        for fraction in (0.5, 0.6, 0.8, 0.9, 0.95):
            t = time_to_fraction(times, values, fraction)
            assert t is not None and t >= previous
            previous = t

    def test_initial_sample_below_threshold(self):
        assert time_to_fraction([4.0, 5.0], [0.05, 0.01], 0.9) == pytest.approx(4.0)


class TestGroupShares:
    def test_four_equal_jobs(self):
        plan = AllocationPlan(0, {0: 2, 1: 2, 2: 2, 3: 2}, 8)
        shares = group_shares({0: 0.9, 1: 0.6, 2: 0.3, 3: 0.1}, plan)
        assert shares == GroupShare(0.25, 0.25, 0.5)

    def test_single_job_all_high(self):
        plan = AllocationPlan(0, {4: 6}, 6)
        shares = group_shares({4: 0.5}, plan)
        assert shares == GroupShare(1.0, 0.0, 0.0)

    def test_shares_sum_to_one(self):
        plan = AllocationPlan(0, {j: j + 1 for j in range(7)}, 100)
        shares = group_shares({j: j / 10 for j in range(7)}, plan)
        assert shares.high_share + shares.medium_share + shares.low_share == pytest.approx(1.0)

    def test_boundary_tie_broken_by_id(self):
        plan = AllocationPlan(0, {0: 5, 1: 1, 2: 1, 3: 1}, 8)
        shares = group_shares({0: 0.5, 1: 0.5, 2: 0.5, 3: 0.5}, plan)
        # all tied: id 0 lands in the high group
        assert shares.high_share == pytest.approx(5 / 8)

    def test_zero_allocation(self):
        plan = AllocationPlan(0, {0: 0}, 4)
        assert group_shares({0: 1.0}, plan) == GroupShare(0.0, 0.0, 0.0)


def sample_bundle():
    return MetricsBundle(
        time_series=[
            TimeSample(2.0, 0.751234567, 3, GroupShare(0.5, 0.25, 0.25)),
            TimeSample(4.0, 0.5, 4, GroupShare(0.6, 0.2, 0.2)),
        ],
        job_summaries=[
            JobSummary(1, 0.5, Family.SUBLINEAR, 12.25, 30.125, 55.0, 123.456789),
            JobSummary(0, 0.0, Family.EXPONENTIAL, 7.0, None, None, 42.0),
        ],
        scheduler_latencies=[(0, 1.53), (1, 0.87)],
    )


class TestExportCsv:
    def test_empty_bundle_headers_only(self, tmp_path):
        paths = export_csv(MetricsBundle(), str(tmp_path))
        assert len(paths) == 3
        for path in paths:
            with open(path) as fh:
                lines = fh.read().splitlines()
            assert len(lines) == 1
            assert "," in lines[0]

    def test_headers_exact(self, tmp_path):
        export_csv(MetricsBundle(), str(tmp_path))
        with open(tmp_path / "timeseries.csv") as fh:
            assert fh.readline().strip() == (
                "sim_time_s,avg_normalized_loss,running_jobs,"
                "share_high,share_medium,share_low"
            )
        with open(tmp_path / "jobs.csv") as fh:
            assert fh.readline().strip() == (
                "job_id,arrival_s,family,time_to_90pct_s,time_to_95pct_s,"
                "completion_s,total_core_seconds"
            )
        with open(tmp_path / "sched_latency.csv") as fh:
            assert fh.readline().strip() == "epoch,millis"

    def test_round_trip_at_six_significant_digits(self, tmp_path):
        bundle = sample_bundle()
        export_csv(bundle, str(tmp_path))
        with open(tmp_path / "timeseries.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        for row, sample in zip(rows, bundle.time_series):
            for name, expected in (
                ("sim_time_s", sample.sim_time),
                ("avg_normalized_loss", sample.avg_normalized_loss),
                ("share_high", sample.shares.high_share),
            ):
                parsed = float(row[name])
                assert parsed == pytest.approx(expected, rel=1e-5)
                # re-export must print the identical text
                assert f"{parsed:.6g}" == row[name]
            assert int(row["running_jobs"]) == sample.running_jobs

    def test_undefined_duration_is_empty_field(self, tmp_path):
        export_csv(sample_bundle(), str(tmp_path))
        with open(tmp_path / "jobs.csv") as fh:
            rows = list(csv.DictReader(fh))
        # rows are sorted by job id; job 0 has no 95pct or completion time
        assert rows[0]["job_id"] == "0"
        assert rows[0]["time_to_95pct_s"] == ""
        assert rows[0]["completion_s"] == ""
        assert rows[1]["time_to_95pct_s"] == "30.125"

    def test_unwritable_directory_raises(self, tmp_path):
        blocker = tmp_path / "blocked"
        blocker.write_text("file, not a directory")
        with pytest.raises(OSError):
            export_csv(MetricsBundle(), str(blocker))
