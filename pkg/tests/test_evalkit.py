import csv
import math
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maps.errors import EmptySamples, InconsistentStages, UndefinedAccuracy
from maps.evalkit import (
    CSV_COLUMNS,
    RunProfile,
    accuracy,
    cdf_points,
    evaluate_scenario,
    generate_content_share,
    percentile,
    profile_report,
    write_cdf,
    write_csv,
    write_profile_table,
)
from maps.sls import PerceivedUser, RelativePoint, ServiceLevelSpec, ThroughputLevel

samples = st.lists(st.floats(0, 1e4, allow_nan=False), min_size=1, max_size=60)


@pytest.mark.parametrize("detected, gt, pct", [(14, 20, 70.0), (20, 20, 100.0), (0, 0, 100.0), (25, 20, 125.0), (0, 5, 0.0)])
def test_accuracy_examples(detected, gt, pct):
    assert accuracy(detected, gt) == pct


def test_accuracy_undefined():
    with pytest.raises(UndefinedAccuracy):
        accuracy(5, 0)
    with pytest.raises(ZeroDivisionError):
        accuracy(1, 0)


@given(st.integers(0, 1000), st.integers(1, 1000), st.integers(1, 50))
def test_accuracy_scale_free(a, b, k):
    assert accuracy(k * a, k * b) == pytest.approx(accuracy(a, b))


def test_percentile_examples():
    assert percentile(list(range(1, 11)), 90) == 9
    assert percentile([7.5], 1) == 7.5
    assert percentile([7.5], 100) == 7.5
    assert percentile(list(range(1, 11)), 100) == 10
    assert percentile([3, 1, 2], 50) == 2


def test_percentile_errors():
    with pytest.raises(EmptySamples):
        percentile([], 90)
    with pytest.raises(ValueError):
        percentile([1], 0)


@given(samples)
def test_percentile_matches_sort_oracle(xs):
    ordered = sorted(xs)
    for q in (10, 50, 90, 100):
        rank = -(-q * len(xs) // 100)
        assert percentile(xs, q) == ordered[rank - 1]


@given(samples, st.floats(0.1, 100), st.floats(0.1, 100))
def test_percentile_monotone_in_q(xs, q1, q2):
    lo, hi = sorted((q1, q2))
    assert percentile(xs, lo) <= percentile(xs, hi)


def test_cdf_examples():
    assert cdf_points([2, 1, 2]) == [(1, pytest.approx(1 / 3)), (2, 1.0)]
    assert [f for _, f in cdf_points([3, 1, 2])][-1] == 1.0
    with pytest.raises(EmptySamples):
        cdf_points([])


@given(samples)
def test_cdf_properties(xs):
    points = cdf_points(xs)
    assert len(points) == len(set(xs))
    assert points[-1][1] == 1.0
    assert all(a[0] < b[0] and a[1] < b[1] for a, b in zip(points, points[1:]))


def test_run_profile_totals():
    p = RunProfile((("a", 1.0), ("b", 2.5)))
    assert p.total_seconds == 3.5
    assert RunProfile.from_tree(p.to_tree()) == p
    with pytest.raises(ValueError):
        RunProfile((("a", 1.0),), 2.0)
    with pytest.raises(ValueError):
        RunProfile((("a", -1.0),))


def test_profile_report_eighty_twenty():
    report = profile_report([RunProfile((("backend", 80.0), ("other", 20.0)))])
    assert report == {"backend": pytest.approx(0.8), "other": pytest.approx(0.2)}


def test_profile_report_recovers_known_split():
    profiles = []
    for k in range(20):
        total = 50.0 + 7 * k
        jitter = 0.01 * ((k % 3) - 1)
        profiles.append(RunProfile((("generate_content.image", (0.8 + jitter) * total), ("rest", (0.2 - jitter) * total))))
    report = profile_report(profiles)
    assert abs(report["generate_content.image"] - 0.8) <= 0.02
    assert math.fsum(report.values()) == pytest.approx(1.0, abs=1e-9)
    assert generate_content_share(report) == report["generate_content.image"]


def test_profile_report_inconsistent():
    with pytest.raises(InconsistentStages):
        profile_report([RunProfile((("a", 1.0),)), RunProfile((("b", 1.0),))])
    with pytest.raises(EmptySamples):
        profile_report([])


@settings(max_examples=100)
@given(st.lists(st.lists(st.floats(0.001, 1e3), min_size=3, max_size=3), min_size=1, max_size=20))
def test_profile_fractions_sum_to_one(rows):
    report = profile_report([RunProfile(tuple(zip(("x", "y", "z"), r))) for r in rows])
    assert math.fsum(report.values()) == pytest.approx(1.0, abs=1e-9)


def spec_with(n_image, n_audio, n_both):
    users = []
    for k in range(n_image + n_audio + n_both):
        prov = {"image"} if k < n_image else {"audio"} if k < n_image + n_audio else {"image", "audio"}
        users.append(
            PerceivedUser(f"user_{k + 1}", RelativePoint(0.1, 0.1), ThroughputLevel.LOW, "", 0.5, frozenset(prov))
        )
    return ServiceLevelSpec("s", datetime(2025, 1, 1, tzinfo=timezone.utc), tuple(users), "b", "v")


def test_evaluate_scenario():
    record = evaluate_scenario(spec_with(5, 1, 1), 10, {"image": 6, "audio": 2})
    assert record.accuracy_pct == 70.0
    assert record.per_agent == {"image": 6, "audio": 2, "fused": 7}
    assert record.per_agent["fused"] <= record.per_agent["image"] + record.per_agent["audio"]


def test_evaluate_empty_spec():
    assert evaluate_scenario(spec_with(0, 0, 0), 5).accuracy_pct == 0.0


def test_evaluate_counts_from_provenance():
    record = evaluate_scenario(spec_with(2, 1, 3), 6)
    assert record.per_agent == {"image": 5, "audio": 4, "fused": 6}


def test_report_writers(tmp_path):
    record = evaluate_scenario(spec_with(3, 0, 0), 4)
    write_csv(tmp_path / "eval.csv", [record.csv_row(12.5)], CSV_COLUMNS)
    with open(tmp_path / "eval.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == CSV_COLUMNS
    assert rows[0]["accuracy_pct"] == "75.0000" and rows[0]["total_seconds"] == "12.500000"

    write_cdf(tmp_path / "cdf.csv", [3.0, 1.0, 2.0, 2.0])
    with open(tmp_path / "cdf.csv") as fh:
        cdf = list(csv.DictReader(fh))
    assert [r["seconds"] for r in cdf] == ["1.000000", "2.000000", "3.000000"]
    assert float(cdf[-1]["cum_fraction"]) == 1.0

    write_profile_table(tmp_path / "profile.csv", {"a": 0.8, "b": 0.2})
    assert (tmp_path / "profile.csv").read_text().splitlines()[1] == "a,0.800000,80.00"
