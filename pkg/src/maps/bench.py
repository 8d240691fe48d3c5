"""Batch execution over a scenario dataset with evaluation and timing reports."""

from __future__ import annotations

import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .evalkit import (
    CSV_COLUMNS,
    EvaluationRecord,
    RunProfile,
    evaluate_scenario,
    generate_content_share,
    percentile,
    profile_report,
    write_cdf,
    write_csv,
    write_profile_table,
)
from .forge import ScenarioManifest
from .pipeline import PipelineConfig, make_clock, make_model_backend, run_pipeline
from .sls import canonical_dumps

logger = logging.getLogger(__name__)


@dataclass
class BenchRun:
    scenario_id: str
    run: int
    status: str
    record: EvaluationRecord | None = None
    profile: RunProfile | None = None
    n_gt: int | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def csv_row(self) -> dict:
        if self.record is not None:
            row = self.record.csv_row(self.profile.total_seconds if self.profile else None)
        else:
            row = {"scenario_id": self.scenario_id, "n_gt": "" if self.n_gt is None else self.n_gt}
            if self.profile is not None:
                row["total_seconds"] = f"{self.profile.total_seconds:.6f}"
        row.update(run=self.run, status=self.status)
        return row


def _one(manifest: ScenarioManifest, config: PipelineConfig, run: int) -> BenchRun:
    clock = make_clock(config)
    try:
        backend = make_model_backend(config, clock)
        result = run_pipeline(manifest, config, backend=backend, clock=clock)
    except Exception as exc:  # noqa: BLE001 - batch never aborts on one run
        logger.warning("%s run %d failed: %s", manifest.scenario_id, run, exc)
        return BenchRun(manifest.scenario_id, run, f"error:{type(exc).__name__}")
    try:
        gt = manifest.ground_truth()
        record = evaluate_scenario(result.sls, gt, result.per_agent)
    except Exception as exc:  # noqa: BLE001
        logger.warning("%s run %d not evaluable: %s", manifest.scenario_id, run, exc)
        return BenchRun(manifest.scenario_id, run, f"unevaluated:{type(exc).__name__}", profile=result.profile)
    return BenchRun(manifest.scenario_id, run, "ok", record, result.profile, gt.n_ground_truth)


def run_bench(
    manifests: Sequence[ScenarioManifest], config: PipelineConfig, runs_per_scenario: int = 10, jobs: int = 1
) -> list[BenchRun]:
    if not manifests:
        raise ValueError("dataset contains no scenarios")
    if runs_per_scenario < 1:
        raise ValueError("runs_per_scenario must be >= 1")
    tasks = [(m, r) for m in manifests for r in range(1, runs_per_scenario + 1)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda t: _one(t[0], config, t[1]), tasks))
    return [_one(m, config, r) for m, r in tasks]


def summarize(runs: Sequence[BenchRun]) -> dict:
    timed = [r.profile.total_seconds for r in runs if r.profile is not None]
    ok_profiles = [r.profile for r in runs if r.profile is not None]
    accuracies = [r.record.accuracy_pct for r in runs if r.ok]
    summary = {
        "runs": len(runs),
        "failed": sum(1 for r in runs if not r.ok),
        "p90_seconds": percentile(timed, 90) if timed else None,
        "mean_accuracy_pct": statistics.fmean(accuracies) if accuracies else None,
    }
    if ok_profiles:
        report = profile_report(ok_profiles)
        summary["stage_fractions"] = report
        summary["generate_content_fraction"] = generate_content_share(report)
    return summary


def write_bench_reports(runs: Sequence[BenchRun], out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "evaluation": out / "evaluation.csv",
        "summary": out / "scenario_summary.csv",
        "per_agent": out / "per_agent.csv",
        "cdf": out / "cdf.csv",
        "profile": out / "profile_table.csv",
        "bench": out / "bench.json",
    }
    write_csv(paths["evaluation"], (r.csv_row() for r in runs), CSV_COLUMNS + ["run", "status"])

    by_scenario: dict[str, list[BenchRun]] = {}
    for r in runs:
        by_scenario.setdefault(r.scenario_id, []).append(r)
    summary_rows, agent_rows = [], []
    for sid, group in by_scenario.items():
        ok = [r for r in group if r.ok]
        if not ok:
            summary_rows.append({"scenario_id": sid, "runs_ok": 0})
            continue
        detected = [r.record.n_detected for r in ok]
        summary_rows.append(
            {
                "scenario_id": sid,
                "n_gt": ok[0].record.n_ground_truth,
                "mean_detected": f"{statistics.fmean(detected):.4f}",
                "std_detected": f"{statistics.pstdev(detected):.4f}",
                "mean_accuracy_pct": f"{statistics.fmean(r.record.accuracy_pct for r in ok):.4f}",
                "runs_ok": len(ok),
            }
        )
        first = ok[0].record.per_agent
        agent_rows.append(
            {"scenario_id": sid, "image_count": first["image"], "audio_count": first["audio"], "fused_count": first["fused"]}
        )
    write_csv(
        paths["summary"],
        summary_rows,
        ["scenario_id", "n_gt", "mean_detected", "std_detected", "mean_accuracy_pct", "runs_ok"],
    )
    write_csv(paths["per_agent"], agent_rows, ["scenario_id", "image_count", "audio_count", "fused_count"])

    timed = [r.profile.total_seconds for r in runs if r.profile is not None]
    if timed:
        write_cdf(paths["cdf"], timed)
        write_profile_table(paths["profile"], profile_report([r.profile for r in runs if r.profile is not None]))
    paths["bench"].write_text(canonical_dumps(summarize(runs)), encoding="utf-8")
    return paths
