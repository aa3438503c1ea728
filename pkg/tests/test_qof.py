import json

import numpy as np
import pytest

from airgap.qof import (EpisodeRecord, GapReport, QofReport, aggregate,
                        mitigation_report, perf_gap, render_gap,
                        render_mitigation, render_report, trajectory_svg)


def record(outcome="success", flight=20.0, dist=25.0, energy=18.0, steps=40,
           sum_t2=0.44):
    return EpisodeRecord(outcome=outcome, flight_time=flight, distance=dist,
                         energy_kj=energy, steps=steps, sum_t2_s=sum_t2)


def report(flight, dist, energy, latency_ms, success, env_hash="e1", cid=""):
    return QofReport(n_episodes=100, success_rate=success,
                     mean_flight_time=flight, mean_distance=dist,
                     mean_energy_kj=energy, mean_latency_ms=latency_ms,
                     env_hash=env_hash, checkpoint_id=cid)


class TestAggregate:
    def test_success_rate(self):
        records = [record() for _ in range(91)] + \
                  [record(outcome="collision") for _ in range(9)]
        rep = aggregate(records)
        assert rep.success_rate == pytest.approx(91.0)
        assert rep.n_episodes == 100

    def test_all_failures_have_absent_means(self):
        rep = aggregate([record(outcome="collision"),
                         record(outcome="step_exhausted")])
        assert rep.success_rate == 0.0
        assert rep.mean_flight_time is None
        assert rep.mean_distance is None
        assert rep.mean_energy_kj is None

    def test_singleton_mean(self):
        rep = aggregate([record(flight=25.29)])
        assert rep.mean_flight_time == pytest.approx(25.29)

    def test_means_over_successes_only(self):
        records = [record(flight=10.0), record(flight=20.0),
                   record(outcome="collision", flight=500.0)]
        rep = aggregate(records)
        assert rep.mean_flight_time == pytest.approx(15.0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        records = [record(flight=float(rng.uniform(10, 50)),
                          dist=float(rng.uniform(20, 60)),
                          outcome="success" if rng.random() < 0.7 else "collision")
                   for _ in range(60)]
        a = aggregate(records)
        shuffled = list(records)
        rng.shuffle(shuffled)
        b = aggregate(shuffled)
        assert a.success_rate == b.success_rate
        assert a.mean_flight_time == pytest.approx(b.mean_flight_time)

    def test_mean_latency_weighted_by_steps(self):
        records = [record(steps=10, sum_t2=1.0), record(steps=30, sum_t2=1.0)]
        rep = aggregate(records)
        assert rep.mean_latency_ms == pytest.approx(2.0 / 40 * 1e3)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_bad_outcome_rejected(self):
        with pytest.raises(ValueError):
            record(outcome="exploded")


class TestPerfGap:
    def test_flight_time_cell(self):
        gap = perf_gap(report(25.29, 27.59, 19.68, 11.0, 91.0),
                       report(37.37, 33.06, 25.483, 396.0, 80.0))
        assert gap.flight_time_pct == pytest.approx(47.76, abs=0.05)
        assert gap.distance_pct == pytest.approx(19.82, abs=0.05)
        assert gap.energy_pct == pytest.approx(29.48, abs=0.05)
        assert gap.latency_pct == pytest.approx(3500.0, abs=0.05)
        assert gap.success_rate_points == pytest.approx(11.0)

    def test_identity_gap_zero(self):
        a = report(30.0, 28.0, 19.0, 10.0, 84.0)
        gap = perf_gap(a, a)
        assert gap.flight_time_pct == 0.0
        assert gap.distance_pct == 0.0
        assert gap.energy_pct == 0.0
        assert gap.success_rate_points == 0.0

    def test_env_hash_mismatch(self):
        with pytest.raises(ValueError):
            perf_gap(report(1, 1, 1, 1, 50, env_hash="a"),
                     report(1, 1, 1, 1, 50, env_hash="b"))

    def test_absent_means_give_absent_gaps(self):
        a = report(None, None, None, 10.0, 0.0)
        b = report(30.0, 28.0, 19.0, 300.0, 50.0)
        gap = perf_gap(a, b)
        assert gap.flight_time_pct is None
        assert gap.success_rate_points == pytest.approx(-50.0)

    def test_json_roundtrip(self):
        gap = perf_gap(report(25.29, 27.59, 19.68, 11.0, 91.0),
                       report(37.37, 33.06, 25.483, 396.0, 80.0))
        again = GapReport.from_dict(json.loads(gap.to_json()))
        assert again == gap


class TestMitigationReport:
    def test_paper_style_columns(self):
        train_host = report(32.62, 29.43, 24.59, 400.0, 85.0)
        with_mit = report(32.44, 29.031, 24.57, 396.0, 83.0)
        without = report(44.93, 34.15, 28.40, 396.0, 73.0)
        rep = mitigation_report(train_host, with_mit, without)
        assert abs(rep.gap_with.flight_time_pct) == pytest.approx(0.5, abs=0.06)
        assert rep.gap_without.flight_time_pct == pytest.approx(37.73, abs=0.05)
        assert abs(rep.gap_with.distance_pct) == pytest.approx(1.37, abs=0.05)
        assert rep.gap_without.distance_pct == pytest.approx(16.03, abs=0.05)
        assert rep.ratio["flight_time"] < 0.5

    def test_equal_inputs_equal_columns(self):
        base = report(30.0, 28.0, 19.0, 11.0, 84.0)
        target = report(34.0, 30.0, 21.0, 300.0, 80.0)
        rep = mitigation_report(base, target, target)
        assert rep.gap_with.flight_time_pct == rep.gap_without.flight_time_pct
        assert rep.gap_with.success_rate_points == rep.gap_without.success_rate_points
        assert rep.ratio["flight_time"] == pytest.approx(1.0)


class TestRendering:
    def test_report_render_contains_fields(self):
        text = render_report(report(30.0, 28.0, 19.0, 11.0, 84.0), title="t")
        assert "success rate" in text and "84.00" in text

    def test_gap_render(self):
        gap = perf_gap(report(25.0, 27.0, 19.0, 11.0, 91.0),
                       report(30.0, 30.0, 22.0, 300.0, 80.0))
        text = render_gap(gap)
        assert "flight time" in text and "points" in text

    def test_mitigation_render(self):
        base = report(30.0, 28.0, 19.0, 11.0, 84.0)
        rep = mitigation_report(base, base, base)
        assert "with mitigation" in render_mitigation(rep)

    def test_trajectory_svg(self, tmp_path):
        path = tmp_path / "traj.svg"
        trajectory_svg([[(0, 0), (1, 1), (2, 1.5)], [(0, 0), (-1, 2)]],
                       (25.0, 25.0), path, labels=["fast host", "slow host"])
        text = path.read_text()
        assert text.startswith("<svg") and text.count("<polyline") == 2
        assert "slow host" in text


def test_report_save_load_roundtrip(tmp_path):
    rep = report(30.0, 28.0, 19.0, 11.0, 84.0)
    path = tmp_path / "eval_report.json"
    rep.save(path)
    again = QofReport.load(path)
    assert again == rep
