"""Run a scenario once through a model backend and record every agent response
as a replay fixture, optionally writing the resulting SLS as a golden file.

    python scripts/record_fixtures.py --manifest path/to/scenario \
        --config path/to/live.json --fixtures path/to/replay --golden golden_sls.json

With a live config the API key is read from the environment variable named in
the config (MAPS_API_KEY by default); it is never written to the fixtures.
"""

import argparse
from pathlib import Path

from maps.forge import load_manifest
from maps.pipeline import PipelineConfig, make_clock, make_model_backend, run_pipeline
from maps.sls import serialize_sls


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--manifest", required=True, type=Path)
    parser.add_argument("--config", type=Path, help="pipeline config; defaults to simulated backends")
    parser.add_argument("--fixtures", required=True, type=Path, help="replay root to record into")
    parser.add_argument("--golden", type=Path, help="also write the fused SLS here")
    args = parser.parse_args()

    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    args.fixtures.mkdir(parents=True, exist_ok=True)
    config = config.with_overrides(record_dir=args.fixtures)
    manifest = load_manifest(args.manifest, required=["frame"])
    clock = make_clock(config)
    result = run_pipeline(manifest, config, backend=make_model_backend(config, clock), clock=clock)

    recorded = sorted((args.fixtures / manifest.scenario_id).glob("*_agent.json"))
    for path in recorded:
        print(f"recorded {path}")
    if args.golden:
        args.golden.write_bytes(serialize_sls(result.sls))
        print(f"wrote {args.golden} ({len(result.sls.users)} users)")


if __name__ == "__main__":
    main()
