"""Detector boundary and detection post-processing.

Raw detections are filtered per category, reduced to relative box centers and
assembled into a :class:`DetectionReport`, which is what the image agent sees.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence
from xml.sax.saxutils import escape, quoteattr

import httpx

from .errors import DegenerateBox, OutOfFrame, ParseError, TransportError
from .sls import BoundingBox, Detection, RelativePoint, canonical_dumps, format_number, quantize

logger = logging.getLogger(__name__)

LARGE_OBJECTS = ("car", "airplane", "truck", "bus")
SMALL_OBJECTS = ("person", "motorcycle")
DEFAULT_THRESHOLDS = {
    **{c: 0.40 for c in LARGE_OBJECTS},
    **{c: 0.20 for c in SMALL_OBJECTS},
}


@dataclass(frozen=True)
class FilterPolicy:
    """Per-category confidence thresholds.

    ``unknown_threshold`` of ``None`` drops categories not in ``thresholds``;
    a number keeps them when confidence exceeds it.
    """

    thresholds: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    unknown_threshold: float | None = None

    def __post_init__(self):
        for category, t in self.thresholds.items():
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"threshold for {category!r} outside [0, 1]: {t}")
        if self.unknown_threshold is not None and not 0.0 <= self.unknown_threshold <= 1.0:
            raise ValueError(f"unknown-category threshold outside [0, 1]: {self.unknown_threshold}")

    def threshold_for(self, category: str) -> float | None:
        return self.thresholds.get(category, self.unknown_threshold)

    def keeps(self, detection: Detection) -> bool:
        threshold = self.threshold_for(detection.category)
        return threshold is not None and detection.confidence > threshold

    @classmethod
    def from_tree(cls, tree: Mapping[str, Any]) -> "FilterPolicy":
        unknown = tree.get("unknown", "drop")
        if unknown == "drop":
            unknown = None
        elif isinstance(unknown, bool) or not isinstance(unknown, (int, float)):
            raise ParseError(f"policy 'unknown' must be \"drop\" or a number, got {unknown!r}")
        return cls(thresholds=dict(tree.get("thresholds", DEFAULT_THRESHOLDS)), unknown_threshold=unknown)

    @classmethod
    def load(cls, path: str | Path) -> "FilterPolicy":
        return cls.from_tree(_read_json(path))

    def to_tree(self) -> dict:
        return {
            "thresholds": dict(self.thresholds),
            "unknown": "drop" if self.unknown_threshold is None else self.unknown_threshold,
        }


def filter_detections(detections: Sequence[Detection], policy: FilterPolicy | None = None) -> list[Detection]:
    """Keep detections whose confidence strictly exceeds their category threshold."""
    policy = policy or FilterPolicy()
    return [d for d in detections if policy.keeps(d)]


def bbox_center(box: BoundingBox | Sequence[float], frame_width: float, frame_height: float) -> RelativePoint:
    if frame_width <= 0 or frame_height <= 0:
        raise ValueError(f"frame dimensions must be positive, got {frame_width}x{frame_height}")
    box = BoundingBox.of(box)
    if box.x_max > frame_width or box.y_max > frame_height:
        raise OutOfFrame(f"box {box.as_list()} exceeds {frame_width}x{frame_height} frame")
    return RelativePoint(
        (box.x_min + box.x_max) / 2 / frame_width,
        (box.y_min + box.y_max) / 2 / frame_height,
    )


@dataclass(frozen=True)
class ReportEntry:
    tag: str
    category: str
    confidence: float
    center: RelativePoint
    box: BoundingBox

    def __post_init__(self):
        object.__setattr__(self, "confidence", quantize(self.confidence))

    def to_tree(self) -> dict:
        return {
            "tag": self.tag,
            "category": self.category,
            "confidence": self.confidence,
            "x": self.center.x,
            "y": self.center.y,
            "box": self.box.as_list(),
        }


@dataclass(frozen=True)
class DetectionReport:
    frame_id: str
    frame_width: int
    frame_height: int
    entries: tuple[ReportEntry, ...] = ()
    frame_ref: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        tags = [e.tag for e in self.entries]
        if len(set(tags)) != len(tags):
            raise ValueError("report tags must be distinct")

    @property
    def tags(self) -> list[str]:
        return [e.tag for e in self.entries]

    def to_tree(self) -> dict:
        return {
            "kind": "detection_report",
            "frame_id": self.frame_id,
            "width": self.frame_width,
            "height": self.frame_height,
            "frame_ref": self.frame_ref,
            "entries": [e.to_tree() for e in self.entries],
        }

    @classmethod
    def from_tree(cls, tree: Mapping[str, Any]) -> "DetectionReport":
        entries = tuple(
            ReportEntry(
                tag=e["tag"],
                category=e["category"],
                confidence=e["confidence"],
                center=RelativePoint(e["x"], e["y"]),
                box=BoundingBox.of(e["box"]),
            )
            for e in tree["entries"]
        )
        return cls(tree["frame_id"], tree["width"], tree["height"], entries, tree.get("frame_ref"))

    def dumps(self) -> str:
        return canonical_dumps(self.to_tree())


def build_detection_report(
    frame_id: str,
    frame_dims: tuple[int, int],
    detections: Sequence[Detection],
    frame_ref: str | None = None,
) -> DetectionReport:
    """Tag detections ``obj_1..obj_n`` in reading order (y, then x, then input index)."""
    width, height = frame_dims
    centered = [(bbox_center(d.box, width, height), i, d) for i, d in enumerate(detections)]
    centered.sort(key=lambda item: (item[0].y, item[0].x, item[1]))
    entries = tuple(
        ReportEntry(f"obj_{k}", d.category, d.confidence, center, d.box)
        for k, (center, _, d) in enumerate(centered, start=1)
    )
    return DetectionReport(frame_id, width, height, entries, frame_ref)


def emit_overlay(report: DetectionReport) -> str:
    """SVG overlay with one labeled rectangle per entry.

    The source frame is referenced through an ``<image>`` element, not embedded.
    """
    w, h = report.frame_width, report.frame_height
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
        f'width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f"  <title>{escape(report.frame_id)}</title>",
    ]
    if report.frame_ref:
        lines.append(f'  <image href={quoteattr(report.frame_ref)} x="0" y="0" width="{w}" height="{h}"/>')
    for e in report.entries:
        b = e.box
        fmt = format_number
        lines.append(
            f'  <rect x="{fmt(b.x_min)}" y="{fmt(b.y_min)}" width="{fmt(b.width)}" height="{fmt(b.height)}" '
            f'fill="none" stroke="#ff3b30" stroke-width="2"/>'
        )
        label = f"{e.tag} {e.category} {e.confidence:.2f}"
        lines.append(
            f'  <text x="{fmt(b.x_min)}" y="{fmt(max(b.y_min - 4, 10))}" font-family="monospace" '
            f'font-size="12" fill="#ff3b30">{escape(label)}</text>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# --- detector backends -------------------------------------------------------


@dataclass(frozen=True)
class DetectionFrame:
    """Detector output for one frame, in the detection fixture shape."""

    frame_id: str
    width: int
    height: int
    detections: tuple[Detection, ...]
    image: str | None = None

    def to_tree(self) -> dict:
        tree = {
            "frame_id": self.frame_id,
            "width": self.width,
            "height": self.height,
            "detections": [
                {"category": d.category, "confidence": d.confidence, "box": d.box.as_list()} for d in self.detections
            ],
        }
        if self.image is not None:
            tree["image"] = self.image
        return tree

    @classmethod
    def from_tree(cls, tree: Any, source: str = "<tree>") -> "DetectionFrame":
        try:
            width, height = int(tree["width"]), int(tree["height"])
            detections = []
            for d in tree["detections"]:
                detections.append(Detection(str(d["category"]), float(d["confidence"]), BoundingBox.of(d["box"])))
            return cls(str(tree["frame_id"]), width, height, tuple(detections), tree.get("image"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{source}: malformed detection fixture ({exc})") from None

    def dumps(self) -> str:
        return canonical_dumps(self.to_tree())


class DetectorBackend(Protocol):
    identity: str
    concurrent: bool

    def detect(self, frame_ref: Any) -> DetectionFrame: ...


class FileDetector:
    """Loads precomputed detections (e.g. exported from an external YOLO run)."""

    identity = "file"
    concurrent = True

    def detect(self, frame_ref: str | Path) -> DetectionFrame:
        return DetectionFrame.from_tree(_read_json(frame_ref), str(frame_ref))


class SimulatedDetector:
    """Realizes detections from planted ground truth through a noise model."""

    concurrent = True

    def __init__(self, noise=None):
        from .forge import NoiseModel  # forge depends on this module

        self.noise = noise or NoiseModel()
        self.identity = f"simulated(miss={self.noise.miss_rate},fp={self.noise.false_positive_rate})"

    def detect(self, frame_ref) -> DetectionFrame:
        """``frame_ref`` is a :class:`~maps.forge.GroundTruth` or a path to one."""
        from .forge import GroundTruth, realize_detections

        gt = frame_ref if isinstance(frame_ref, GroundTruth) else GroundTruth.load(frame_ref)
        return realize_detections(gt, self.noise)


class HttpDetector:
    """Posts ``{"frame": ref}`` and expects the detection fixture format back."""

    concurrent = True

    def __init__(self, url: str, timeout: float = 30.0, transport=None):
        self.url = url
        self.identity = f"http({url})"
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def detect(self, frame_ref) -> DetectionFrame:
        try:
            response = self._client.post(self.url, json={"frame": str(frame_ref)})
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise TransportError(f"detector request failed: {exc}") from None
        return DetectionFrame.from_tree(response.json(), self.url)


def _read_json(path: str | Path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None


__all__ = [
    "DEFAULT_THRESHOLDS",
    "DegenerateBox",
    "DetectionFrame",
    "DetectionReport",
    "DetectorBackend",
    "FileDetector",
    "FilterPolicy",
    "HttpDetector",
    "OutOfFrame",
    "ReportEntry",
    "SimulatedDetector",
    "bbox_center",
    "build_detection_report",
    "emit_overlay",
    "filter_detections",
]
