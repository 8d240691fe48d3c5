"""Seeded synthetic scenarios: planted users, noisy detections, radio dialogue.

A scenario is a directory holding ``manifest.json``, ``detections.json``,
``transcript.json`` and ``ground_truth.json``. Every file is a pure function of
the seed and the generation parameters.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import MissingPart, ParseError, PlacementFailure
from .perception import DetectionFrame
from .sls import BoundingBox, Detection, Transcript, Utterance, canonical_dumps

logger = logging.getLogger(__name__)

FRAME_SIZE = (1920, 1080)
MAX_PLACEMENT_ATTEMPTS = 1000

# Nominal pixel footprint (w, h) of each category at survey altitude.
CATEGORY_SIZES = {
    "person": (24, 48),
    "motorcycle": (40, 30),
    "car": (80, 44),
    "truck": (120, 56),
    "bus": (150, 60),
    "airplane": (220, 160),
    "tree": (90, 90),
    "tent": (60, 60),
}
DEFAULT_CATEGORY_MIX = {
    "person": 0.5,
    "car": 0.2,
    "truck": 0.1,
    "motorcycle": 0.1,
    "bus": 0.05,
    "airplane": 0.05,
}
DISTRACTOR_CATEGORIES = ("tree", "tent")

# (mean, spread): confidences are uniform on [mean - spread, mean + spread].
# The defaults stay clear of the filter thresholds so that only misses lose users.
DEFAULT_CONFIDENCE_LAW = {
    "person": (0.65, 0.25),
    "motorcycle": (0.65, 0.25),
    "car": (0.75, 0.2),
    "truck": (0.75, 0.2),
    "bus": (0.75, 0.2),
    "airplane": (0.8, 0.15),
}
FALLBACK_CONFIDENCE = (0.5, 0.3)


@dataclass(frozen=True)
class NoiseModel:
    miss_rate: float = 0.0
    false_positive_rate: float = 0.0
    confidence_law: Mapping[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_CONFIDENCE_LAW))
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError(f"miss_rate must be in [0, 1], got {self.miss_rate}")
        if self.false_positive_rate < 0:
            raise ValueError(f"false_positive_rate must be >= 0, got {self.false_positive_rate}")
        for category, (mean, spread) in self.confidence_law.items():
            if not 0.0 <= mean <= 1.0 or spread < 0:
                raise ValueError(f"bad confidence law for {category!r}: ({mean}, {spread})")

    def sample_confidence(self, category: str, rng: np.random.Generator) -> float:
        mean, spread = self.confidence_law.get(category, FALLBACK_CONFIDENCE)
        value = rng.uniform(mean - spread, mean + spread)
        return round(float(min(1.0, max(0.0, value))), 4)

    def to_tree(self) -> dict:
        return {
            "miss_rate": self.miss_rate,
            "false_positive_rate": self.false_positive_rate,
            "confidence_law": {k: list(v) for k, v in self.confidence_law.items()},
            "seed": self.seed,
        }

    @classmethod
    def from_tree(cls, tree: Mapping[str, Any]) -> "NoiseModel":
        law = tree.get("confidence_law")
        return cls(
            miss_rate=tree.get("miss_rate", 0.0),
            false_positive_rate=tree.get("false_positive_rate", 0.0),
            confidence_law={k: tuple(v) for k, v in law.items()} if law else dict(DEFAULT_CONFIDENCE_LAW),
            seed=tree.get("seed", 0),
        )


@dataclass(frozen=True)
class GroundTruthBox:
    box: BoundingBox
    category: str
    user_bearing: bool = True


@dataclass(frozen=True)
class GroundTruth:
    frame_id: str
    width: int
    height: int
    boxes: tuple[GroundTruthBox, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        for gt in self.boxes:
            if gt.box.x_max > self.width or gt.box.y_max > self.height:
                raise ValueError(f"ground-truth box {gt.box.as_list()} outside frame")

    @property
    def n_ground_truth(self) -> int:
        return sum(1 for gt in self.boxes if gt.user_bearing)

    def to_tree(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "width": self.width,
            "height": self.height,
            "seed": self.seed,
            "boxes": [
                {"box": gt.box.as_list(), "category": gt.category, "user_bearing": gt.user_bearing}
                for gt in self.boxes
            ],
        }

    @classmethod
    def from_tree(cls, tree: Mapping[str, Any]) -> "GroundTruth":
        boxes = tuple(
            GroundTruthBox(BoundingBox.of(b["box"]), b["category"], bool(b.get("user_bearing", True)))
            for b in tree["boxes"]
        )
        return cls(tree["frame_id"], int(tree["width"]), int(tree["height"]), boxes, int(tree.get("seed", 0)))

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        tree = _read_json(path, "ground_truth")
        try:
            return cls.from_tree(tree)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: malformed ground truth ({exc})") from None


@dataclass(frozen=True)
class PhraseBank:
    phrases: tuple[str, ...]
    demand_cues: tuple[str, ...]
    call_signs: tuple[str, ...]

    @classmethod
    def load(cls, path: str | Path | None = None) -> "PhraseBank":
        if path is None:
            text = resources.files("maps.data").joinpath("phrases.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        tree = json.loads(text)
        return cls(tuple(tree["phrases"]), tuple(tree.get("demand_cues", ())), tuple(tree.get("call_signs", ("Unit",))))


def _place(
    rng: np.random.Generator, category: str, placed: list[BoundingBox], frame: tuple[int, int]
) -> BoundingBox:
    base_w, base_h = CATEGORY_SIZES.get(category, (40, 40))
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        scale = rng.uniform(0.8, 1.2)
        w, h = max(2, int(round(base_w * scale))), max(2, int(round(base_h * scale)))
        if w > frame[0] or h > frame[1]:
            continue
        x = int(rng.integers(0, frame[0] - w + 1))
        y = int(rng.integers(0, frame[1] - h + 1))
        box = BoundingBox(x, y, x + w, y + h)
        if not any(box.overlaps(other) for other in placed):
            return box
    raise PlacementFailure(
        f"could not place a {category} without overlap after {MAX_PLACEMENT_ATTEMPTS} attempts "
        f"({len(placed)} boxes already placed)"
    )


def plant_ground_truth(
    seed: int,
    n_users: int,
    category_mix: Mapping[str, float] | None = None,
    frame_size: tuple[int, int] = FRAME_SIZE,
    n_distractors: int = 0,
    frame_id: str = "frame",
) -> GroundTruth:
    if n_users < 0 or n_distractors < 0:
        raise ValueError("counts must be non-negative")
    mix = dict(category_mix or DEFAULT_CATEGORY_MIX)
    categories = sorted(mix)
    weights = np.array([mix[c] for c in categories], dtype=float)
    weights /= weights.sum()
    rng = np.random.default_rng([seed, 1])
    placed: list[BoundingBox] = []
    boxes = []
    for _ in range(n_users):
        category = categories[int(rng.choice(len(categories), p=weights))]
        box = _place(rng, category, placed, frame_size)
        placed.append(box)
        boxes.append(GroundTruthBox(box, category, True))
    for _ in range(n_distractors):
        category = DISTRACTOR_CATEGORIES[int(rng.integers(len(DISTRACTOR_CATEGORIES)))]
        box = _place(rng, category, placed, frame_size)
        placed.append(box)
        boxes.append(GroundTruthBox(box, category, False))
    return GroundTruth(frame_id, frame_size[0], frame_size[1], tuple(boxes), seed)


def realize_detections(gt: GroundTruth, noise: NoiseModel, image: str | None = None) -> DetectionFrame:
    """Pass planted boxes through the detector noise model.

    Each box survives with probability ``1 - miss_rate``; a Poisson number of
    spurious user-category boxes is added on top.
    """
    rng = np.random.default_rng([gt.seed, noise.seed, 2])
    detections = []
    for planted in gt.boxes:
        missed = rng.random() < noise.miss_rate
        confidence = noise.sample_confidence(planted.category, rng)
        if not missed:
            detections.append(Detection(planted.category, confidence, planted.box))
    n_spurious = int(rng.poisson(noise.false_positive_rate)) if noise.false_positive_rate > 0 else 0
    categories = sorted(DEFAULT_CATEGORY_MIX)
    for _ in range(n_spurious):
        category = categories[int(rng.integers(len(categories)))]
        w, h = CATEGORY_SIZES[category]
        x = int(rng.integers(0, gt.width - w + 1))
        y = int(rng.integers(0, gt.height - h + 1))
        detections.append(
            Detection(category, noise.sample_confidence(category, rng), BoundingBox(x, y, x + w, y + h))
        )
    return DetectionFrame(gt.frame_id, gt.width, gt.height, tuple(detections), image)


def synthesize_transcript(gt: GroundTruth, seed: int, phrase_bank: PhraseBank) -> Transcript:
    """1-4 utterances from one or two located speakers among the planted users.

    Each speaker states its relative position once, and every utterance ends
    with a demand cue.
    """
    users = [gt_box for gt_box in gt.boxes if gt_box.user_bearing]
    if not users:
        return Transcript(())
    if not phrase_bank.phrases:
        raise ValueError("phrase bank is empty")
    rng = np.random.default_rng([seed, 3])
    n_speakers = int(rng.integers(1, min(2, len(users)) + 1))
    n_utterances = int(rng.integers(max(1, n_speakers), 5))
    speaker_idx = sorted(int(i) for i in rng.choice(len(users), size=n_speakers, replace=False))
    signs = rng.choice(len(phrase_bank.call_signs), size=n_speakers, replace=n_speakers > len(phrase_bank.call_signs))
    speakers = [f"Rescue {phrase_bank.call_signs[int(s)]}" for s in signs]
    if len(set(speakers)) < len(speakers):
        speakers = [f"{name} {k + 1}" for k, name in enumerate(speakers)]

    order = list(range(n_speakers)) + [int(rng.integers(n_speakers)) for _ in range(n_utterances - n_speakers)]
    located: set[int] = set()
    utterances = []
    for k in order:
        phrase = phrase_bank.phrases[int(rng.integers(len(phrase_bank.phrases)))].format(speaker=speakers[k])
        parts = [phrase]
        if k not in located:
            box = users[speaker_idx[k]].box
            cx = (box.x_min + box.x_max) / 2 / gt.width
            cy = (box.y_min + box.y_max) / 2 / gt.height
            parts.append(f"Position {cx:.3f}, {cy:.3f}.")
            located.add(k)
        if phrase_bank.demand_cues:
            parts.append(phrase_bank.demand_cues[int(rng.integers(len(phrase_bank.demand_cues)))])
        utterances.append(Utterance(" ".join(parts), speakers[k]))
    return Transcript(tuple(utterances))


@dataclass(frozen=True)
class ScenarioManifest:
    scenario_id: str
    frame: str
    transcript_path: str | None
    ground_truth_path: str | None
    metadata: Mapping[str, Any]
    root: Path = Path(".")

    def _resolve(self, rel: str | None, part: str) -> Path:
        if rel is None:
            raise MissingPart(part, None)
        path = self.root / rel
        if not path.is_file():
            raise MissingPart(part, path)
        return path

    @property
    def frame_path(self) -> Path:
        return self._resolve(self.frame, "frame")

    def detections(self) -> DetectionFrame:
        path = self.frame_path
        return DetectionFrame.from_tree(_read_json(path, "frame"), str(path))

    def transcript(self) -> Transcript:
        path = self._resolve(self.transcript_path, "transcript")
        try:
            return Transcript.from_tree(_read_json(path, "transcript"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: malformed transcript ({exc})") from None

    def ground_truth(self) -> GroundTruth:
        return GroundTruth.load(self._resolve(self.ground_truth_path, "ground_truth"))

    def has_part(self, part: str) -> bool:
        rel = {"frame": self.frame, "transcript": self.transcript_path, "ground_truth": self.ground_truth_path}[part]
        return rel is not None and (self.root / rel).is_file()

    def to_tree(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "frame": self.frame,
            "transcript": self.transcript_path,
            "ground_truth": self.ground_truth_path,
            "metadata": dict(self.metadata),
        }


PARTS = ("frame", "transcript", "ground_truth")


def load_manifest(path: str | Path, required: Iterable[str] = PARTS) -> ScenarioManifest:
    """Load ``manifest.json`` (or a directory containing one).

    Parts listed in ``required`` must exist now; the rest are checked on access.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise MissingPart("manifest", path)
    tree = _read_json(path, "manifest")
    try:
        manifest = ScenarioManifest(
            scenario_id=str(tree["scenario_id"]),
            frame=tree["frame"],
            transcript_path=tree.get("transcript"),
            ground_truth_path=tree.get("ground_truth"),
            metadata=dict(tree.get("metadata") or {}),
            root=path.parent,
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed manifest ({exc})") from None
    for part in required:
        if not manifest.has_part(part):
            rel = {"frame": manifest.frame, "transcript": manifest.transcript_path,
                   "ground_truth": manifest.ground_truth_path}[part]
            raise MissingPart(part, manifest.root / rel if rel else None)
    return manifest


def load_dataset(directory: str | Path, required: Iterable[str] = PARTS) -> list[ScenarioManifest]:
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingPart("dataset", directory)
    return [load_manifest(d, required) for d in sorted(directory.iterdir()) if (d / "manifest.json").is_file()]


def _write(path: Path, tree: Any) -> None:
    path.write_text(canonical_dumps(tree), encoding="utf-8")


def generate_scenario(
    out_dir: str | Path,
    seed: int,
    n_users: int,
    category_mix: Mapping[str, float] | None = None,
    noise: NoiseModel | None = None,
    phrase_bank: PhraseBank | None = None,
    dialogue: bool = True,
    scenario_id: str | None = None,
    frame_size: tuple[int, int] = FRAME_SIZE,
    n_distractors: int = 0,
) -> ScenarioManifest:
    noise = noise or NoiseModel()
    scenario_id = scenario_id or f"scenario_seed{seed}"
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    gt = plant_ground_truth(seed, n_users, category_mix, frame_size, n_distractors, frame_id=scenario_id)
    frame = realize_detections(gt, noise)
    _write(out / "ground_truth.json", gt.to_tree())
    _write(out / "detections.json", frame.to_tree())

    transcript_rel = None
    if dialogue:
        bank = phrase_bank or PhraseBank.load()
        _write(out / "transcript.json", synthesize_transcript(gt, seed, bank).to_tree())
        transcript_rel = "transcript.json"

    manifest = ScenarioManifest(
        scenario_id=scenario_id,
        frame="detections.json",
        transcript_path=transcript_rel,
        ground_truth_path="ground_truth.json",
        metadata={
            "seed": seed,
            "n_users": n_users,
            "n_distractors": n_distractors,
            "noise": noise.to_tree(),
            "category_mix": dict(category_mix or DEFAULT_CATEGORY_MIX),
        },
        root=out,
    )
    _write(out / "manifest.json", manifest.to_tree())
    return manifest


def generate_dataset(
    out_dir: str | Path,
    seed: int,
    scenarios: int,
    users_min: int = 5,
    users_max: int = 45,
    miss_rate: float = 0.0,
    fp_rate: float = 0.0,
    dialogue: bool = True,
    **kwargs,
) -> list[ScenarioManifest]:
    """Scenario ``k`` (0-based) uses seed ``seed + k``; user counts are uniform on [users_min, users_max]."""
    if users_min < 0 or users_max < users_min:
        raise ValueError(f"bad user range [{users_min}, {users_max}]")
    counts = np.random.default_rng([seed, 0]).integers(users_min, users_max + 1, size=scenarios)
    noise = NoiseModel(miss_rate=miss_rate, false_positive_rate=fp_rate)
    width = max(2, len(str(scenarios)))
    manifests = []
    for k in range(scenarios):
        scenario_id = f"scenario_{k + 1:0{width}d}"
        manifests.append(
            generate_scenario(
                Path(out_dir) / scenario_id,
                seed + k,
                int(counts[k]),
                noise=noise,
                dialogue=dialogue,
                scenario_id=scenario_id,
                **kwargs,
            )
        )
    return manifests


def _read_json(path: str | Path, part: str) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise MissingPart(part, path) from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
