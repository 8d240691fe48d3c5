"""``maps`` command line.

Exit codes: 0 success, 1 pipeline or domain error, 2 usage error. Errors are
reported on stderr as a single JSON line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bench import run_bench, summarize, write_bench_reports
from .errors import MapsError, MissingPart
from .evalkit import CSV_COLUMNS, evaluate_scenario, write_csv
from .forge import GroundTruth, generate_dataset, load_dataset, load_manifest
from .fusion import FusionConfig
from .pipeline import PipelineConfig, run_pipeline, write_outputs
from .sls import canonical_dumps, parse_sls

logger = logging.getLogger("maps")


def _config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    fusion = config.fusion
    if args.fusion_mode or args.epsilon is not None:
        fusion = FusionConfig(
            epsilon=args.epsilon if args.epsilon is not None else fusion.epsilon,
            escalation_uplift=fusion.escalation_uplift,
            mode=args.fusion_mode or fusion.mode,
        )
    return config.with_overrides(
        model=args.model,
        detector=args.detector,
        delay_s=args.delay,
        virtual_time=True if args.virtual_time else None,
        replay_dir=Path(args.fixtures) if args.fixtures else None,
        fusion=fusion,
    )


def cmd_run(args) -> int:
    config = _config(args)
    required = ["frame"] + (["transcript"] if args.require_audio else [])
    if config.detector == "simulated":
        required.append("ground_truth")
    manifest = load_manifest(args.manifest, required)
    result = run_pipeline(manifest, config, require_audio=args.require_audio)
    out = args.out or config.output_dir or Path(".")
    paths = write_outputs(result, out)
    if args.verbose:
        for name, seconds in result.profile.stages:
            print(f"{name}\t{seconds:.6f}s", file=sys.stderr)
    print(paths["sls"])
    return 0


def cmd_evaluate(args) -> int:
    sls = parse_sls(Path(args.sls).read_bytes())
    gt = GroundTruth.load(args.ground_truth)
    record = evaluate_scenario(sls, gt)
    row = record.csv_row()
    if args.csv:
        write_csv(args.csv, [row], CSV_COLUMNS)
    print(json.dumps(row, sort_keys=True))
    return 0


def cmd_generate(args) -> int:
    manifests = generate_dataset(
        args.out,
        seed=args.seed,
        scenarios=args.scenarios,
        users_min=args.users_min,
        users_max=args.users_max,
        miss_rate=args.miss_rate,
        fp_rate=args.fp_rate,
        dialogue=not args.no_dialogue,
        n_distractors=args.distractors,
    )
    print(f"wrote {len(manifests)} scenarios to {args.out}")
    return 0


def cmd_bench(args) -> int:
    config = _config(args)
    manifests = load_dataset(args.dataset, required=["frame"])
    if not manifests:
        raise MissingPart("scenarios", args.dataset)
    runs = run_bench(manifests, config, args.runs, args.jobs)
    out = Path(args.out) if args.out else Path(args.dataset) / "bench"
    write_bench_reports(runs, out)
    summary = summarize(runs)
    print(canonical_dumps(summary), end="")
    return 0 if summary["failed"] < summary["runs"] else 1


def cmd_validate(args) -> int:
    spec = parse_sls(Path(args.sls).read_bytes())
    print(f"valid: {spec.scenario_id} ({len(spec.users)} users)")
    return 0


def _pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config (JSON)")
    p.add_argument("--model", choices=["simulated", "replay", "live"])
    p.add_argument("--detector", choices=["file", "simulated", "http"])
    p.add_argument("--fixtures", help="replay fixture root")
    p.add_argument("--delay", type=float, help="injected delay per simulated model call (s)")
    p.add_argument("--virtual-time", action="store_true", help="account injected delays without sleeping")
    p.add_argument("--fusion-mode", choices=["deterministic", "model_delegated"])
    p.add_argument("--epsilon", type=float, help="fusion matching distance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maps", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="print stage timings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario through the pipeline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--require-audio", action="store_true")
    _pipeline_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="score an SLS against ground truth")
    p.add_argument("--sls", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate-dataset", help="forge a synthetic scenario dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenarios", type=int, default=20)
    p.add_argument("--users-min", type=int, default=5)
    p.add_argument("--users-max", type=int, default=45)
    p.add_argument("--miss-rate", type=float, default=0.0)
    p.add_argument("--fp-rate", type=float, default=0.0)
    p.add_argument("--distractors", type=int, default=0)
    p.add_argument("--no-dialogue", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="run every scenario repeatedly and report accuracy and timing")
    p.add_argument("--dataset", required=True)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    _pipeline_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("validate", help="check an SLS file against the schema")
    p.add_argument("--sls", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MapsError, ValueError, OSError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
