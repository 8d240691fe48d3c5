"""Sweep detector miss rates over forged datasets and compare mean accuracy
with the binomial expectation 100*(1 - m).

    python scripts/accuracy_study.py --scenarios 200 --out runs/accuracy
"""

import argparse
import math
import statistics
import tempfile
from pathlib import Path

from maps.evalkit import evaluate_scenario, write_csv
from maps.forge import generate_dataset
from maps.pipeline import PipelineConfig, run_pipeline


def study(miss_rate: float, scenarios: int, seed: int, dialogue: bool, workdir: Path) -> dict:
    manifests = generate_dataset(
        workdir / f"miss_{miss_rate:.2f}", seed=seed, scenarios=scenarios, miss_rate=miss_rate, dialogue=dialogue
    )
    config = PipelineConfig()
    accuracies, variances, per_agent = [], [], []
    for manifest in manifests:
        n = manifest.ground_truth().n_ground_truth
        result = run_pipeline(manifest, config)
        accuracies.append(evaluate_scenario(result.sls, n).accuracy_pct)
        variances.append(100.0**2 * miss_rate * (1 - miss_rate) / n)
        per_agent.append(result.per_agent)
    se = math.sqrt(sum(variances)) / len(variances)
    mean = statistics.fmean(accuracies)
    expected = 100 * (1 - miss_rate)
    return {
        "miss_rate": miss_rate,
        "dialogue": dialogue,
        "scenarios": scenarios,
        "mean_accuracy_pct": f"{mean:.3f}",
        "expected_pct": f"{expected:.3f}",
        "std_error": f"{se:.3f}",
        "z": f"{(mean - expected) / se:.2f}" if se > 0 else "",
        "share_at_least_70": f"{sum(a >= 70 for a in accuracies) / len(accuracies):.3f}",
        "mean_audio_users": f"{statistics.fmean(p['audio'] for p in per_agent):.2f}",
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--miss-rates", type=float, nargs="+", default=[0.0, 0.1, 0.25, 0.4])
    parser.add_argument("--scenarios", type=int, default=200)
    parser.add_argument("--seed", type=int, default=500)
    parser.add_argument("--with-dialogue", action="store_true", help="let audio users recover missed detections")
    parser.add_argument("--out", type=Path, default=Path("runs/accuracy"))
    args = parser.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    with tempfile.TemporaryDirectory() as tmp:
        for m in args.miss_rates:
            row = study(m, args.scenarios, args.seed, args.with_dialogue, Path(tmp))
            rows.append(row)
            print(
                f"miss={m:.2f}  mean={row['mean_accuracy_pct']}%  expected={row['expected_pct']}%  "
                f"se={row['std_error']}  z={row['z']}  >=70%: {row['share_at_least_70']}"
            )
    write_csv(args.out / "accuracy_sweep.csv", rows, list(rows[0]))
    print(f"wrote {args.out / 'accuracy_sweep.csv'}")


if __name__ == "__main__":
    main()
