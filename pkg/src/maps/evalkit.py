"""Accuracy, latency distribution and stage profiling over pipeline runs."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import EmptySamples, InconsistentStages, UndefinedAccuracy
from .forge import GroundTruth
from .sls import ServiceLevelSpec

GENERATE_CONTENT_PREFIX = "generate_content."

CSV_COLUMNS = [
    "scenario_id",
    "n_gt",
    "n_detected",
    "accuracy_pct",
    "image_count",
    "audio_count",
    "fused_count",
    "total_seconds",
]


def accuracy(n_detected: int, n_ground_truth: int) -> float:
    """Detected users as a percentage of annotated users; may exceed 100."""
    if n_detected < 0 or n_ground_truth < 0:
        raise ValueError("counts must be non-negative")
    if n_ground_truth == 0:
        if n_detected == 0:
            return 100.0
        raise UndefinedAccuracy(f"{n_detected} users detected against an empty ground truth")
    return 100.0 * n_detected / n_ground_truth


def percentile(samples: Sequence[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n/100)-th smallest sample."""
    if not samples:
        raise EmptySamples("percentile of no samples")
    if not 0 < q <= 100:
        raise ValueError(f"q must be in (0, 100], got {q}")
    ordered = sorted(samples)
    rank = math.ceil(Fraction(str(q)) * len(ordered) / 100)
    return ordered[max(rank, 1) - 1]


def cdf_points(samples: Sequence[float]) -> list[tuple[float, float]]:
    if not samples:
        raise EmptySamples("CDF of no samples")
    counts = Counter(samples)
    n, seen, points = len(samples), 0, []
    for value in sorted(counts):
        seen += counts[value]
        points.append((value, seen / n))
    return points


@dataclass(frozen=True)
class RunProfile:
    stages: tuple[tuple[str, float], ...]
    total_seconds: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple((str(n), float(s)) for n, s in self.stages))
        total = math.fsum(s for _, s in self.stages)
        if self.total_seconds is None:
            object.__setattr__(self, "total_seconds", total)
        elif not math.isclose(self.total_seconds, total, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"total {self.total_seconds} != sum of stages {total}")
        if any(s < 0 for _, s in self.stages):
            raise ValueError("stage durations must be non-negative")

    @property
    def stage_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.stages)

    def to_tree(self) -> dict:
        return {
            "stages": [{"stage": n, "seconds": s} for n, s in self.stages],
            "total_seconds": self.total_seconds,
        }

    @classmethod
    def from_tree(cls, tree: Mapping) -> "RunProfile":
        return cls(tuple((s["stage"], s["seconds"]) for s in tree["stages"]), tree.get("total_seconds"))


def profile_report(profiles: Sequence[RunProfile]) -> dict[str, float]:
    """Mean per-stage share of total run time, in stage order."""
    if not profiles:
        raise EmptySamples("no profiles to report on")
    names = profiles[0].stage_names
    for p in profiles[1:]:
        if p.stage_names != names:
            raise InconsistentStages(f"stage names {p.stage_names} differ from {names}")
    sums = dict.fromkeys(names, 0.0)
    for p in profiles:
        if p.total_seconds <= 0:
            raise ValueError("cannot compute stage shares of a zero-length run")
        for name, seconds in p.stages:
            sums[name] += seconds / p.total_seconds
    return {name: total / len(profiles) for name, total in sums.items()}


def generate_content_share(report: Mapping[str, float]) -> float:
    return math.fsum(v for k, v in report.items() if k.startswith(GENERATE_CONTENT_PREFIX))


@dataclass(frozen=True)
class EvaluationRecord:
    scenario_id: str
    n_detected: int
    n_ground_truth: int
    accuracy_pct: float
    per_agent: Mapping[str, int]

    def __post_init__(self):
        if self.n_detected < 0 or self.n_ground_truth < 0:
            raise ValueError("counts must be non-negative")

    def csv_row(self, total_seconds: float | None = None) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "n_gt": self.n_ground_truth,
            "n_detected": self.n_detected,
            "accuracy_pct": f"{self.accuracy_pct:.4f}",
            "image_count": self.per_agent.get("image", ""),
            "audio_count": self.per_agent.get("audio", ""),
            "fused_count": self.per_agent.get("fused", ""),
            "total_seconds": "" if total_seconds is None else f"{total_seconds:.6f}",
        }


def counts_from_provenance(sls: ServiceLevelSpec) -> dict[str, int]:
    """Per-agent counts reconstructed from an SLS alone (lower bounds for image/audio)."""
    return {
        "image": sum(1 for u in sls.users if "image" in u.provenance),
        "audio": sum(1 for u in sls.users if "audio" in u.provenance),
        "fused": len(sls.users),
    }


def evaluate_scenario(
    sls: ServiceLevelSpec, gt: GroundTruth | int, fragments: Mapping[str, int] | None = None
) -> EvaluationRecord:
    n_gt = gt if isinstance(gt, int) else gt.n_ground_truth
    n_detected = len(sls.users)
    per_agent = dict(fragments) if fragments is not None else counts_from_provenance(sls)
    per_agent["fused"] = n_detected
    return EvaluationRecord(sls.scenario_id, n_detected, n_gt, accuracy(n_detected, n_gt), per_agent)


# --- report files ------------------------------------------------------------


def write_csv(path: str | Path, rows: Iterable[Mapping], columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in columns})


def write_cdf(path: str | Path, samples: Sequence[float]) -> list[tuple[float, float]]:
    points = cdf_points(samples)
    write_csv(
        path,
        ({"seconds": f"{s:.6f}", "cum_fraction": repr(f)} for s, f in points),
        ["seconds", "cum_fraction"],
    )
    return points


def write_profile_table(path: str | Path, report: Mapping[str, float]) -> None:
    write_csv(
        path,
        ({"stage": k, "fraction": f"{v:.6f}", "percent": f"{100 * v:.2f}"} for k, v in report.items()),
        ["stage", "fraction", "percent"],
    )
