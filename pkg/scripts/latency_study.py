"""Benchmark a forged dataset with injected model latency and report the
execution-time distribution and stage profile.

Delays are accounted on a virtual clock by default, so a 30 s per-call delay
over 20 scenarios finishes in about a second.

    python scripts/latency_study.py --delay 30 --scenarios 20 --out runs/latency
"""

import argparse
import tempfile
from pathlib import Path

import numpy as np

from maps.bench import run_bench, summarize, write_bench_reports
from maps.forge import generate_dataset
from maps.fusion import FusionConfig
from maps.pipeline import PipelineConfig


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--delay", type=float, default=30.0, help="mean seconds per model call")
    parser.add_argument("--jitter", type=float, default=0.0, help="std dev of per-scenario delay (s)")
    parser.add_argument("--scenarios", type=int, default=20)
    parser.add_argument("--runs", type=int, default=1)
    parser.add_argument("--seed", type=int, default=70)
    parser.add_argument("--real-time", action="store_true", help="actually sleep instead of virtual time")
    parser.add_argument("--deterministic-fusion", action="store_true", help="fuse by rule instead of a model call")
    parser.add_argument("--out", type=Path, default=Path("runs/latency"))
    args = parser.parse_args()

    mode = "deterministic" if args.deterministic_fusion else "model_delegated"
    rng = np.random.default_rng(args.seed)
    with tempfile.TemporaryDirectory() as tmp:
        manifests = generate_dataset(Path(tmp) / "data", seed=args.seed, scenarios=args.scenarios)
        runs = []
        for manifest in manifests:
            delay = max(0.0, float(rng.normal(args.delay, args.jitter))) if args.jitter else args.delay
            config = PipelineConfig(delay_s=delay, virtual_time=not args.real_time, fusion=FusionConfig(mode=mode))
            runs.extend(run_bench([manifest], config, args.runs))
        paths = write_bench_reports(runs, args.out)

    summary = summarize(runs)
    print(f"runs: {summary['runs']}  failed: {summary['failed']}")
    print(f"p90 total: {summary['p90_seconds']:.3f} s")
    print(f"generate_content share: {100 * summary['generate_content_fraction']:.2f}%")
    for stage, fraction in summary["stage_fractions"].items():
        print(f"  {stage:<26} {100 * fraction:7.3f}%")
    print(f"reports in {paths['bench'].parent}")


if __name__ == "__main__":
    main()
