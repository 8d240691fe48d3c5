"""Domain types, the SLS document schema, and its canonical serialization.

Everything here is an immutable value. ``validate_sls`` turns any parsed JSON
tree into a typed :class:`ServiceLevelSpec` or raises one of the
:class:`~maps.errors.SLSValidationError` subclasses naming the offending path.
"""

from __future__ import annotations

import enum
import functools
import json
import logging
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterable, Mapping, Sequence

from .errors import (
    BadEnum,
    BadType,
    DegenerateBox,
    DuplicateLabel,
    MissingField,
    OutOfRange,
    SLSValidationError,
)

logger = logging.getLogger(__name__)

# Reals are stored and rendered with at most this many fractional digits.
DECIMALS = 6

SOURCES = ("audio", "image")


@functools.total_ordering
class ThroughputLevel(enum.Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"

    @property
    def rank(self) -> int:
        return _LEVEL_ORDER.index(self)

    def __lt__(self, other):
        if not isinstance(other, ThroughputLevel):
            return NotImplemented
        return self.rank < other.rank

    def step_up(self) -> "ThroughputLevel":
        return _LEVEL_ORDER[min(self.rank + 1, len(_LEVEL_ORDER) - 1)]

    @classmethod
    def parse(cls, value: Any, path: str = "throughput_level") -> "ThroughputLevel":
        if isinstance(value, ThroughputLevel):
            return value
        try:
            return cls(value)
        except ValueError:
            raise BadEnum(path, value) from None


_LEVEL_ORDER = (ThroughputLevel.LOW, ThroughputLevel.MEDIUM, ThroughputLevel.HIGH)

# Upper demand bound (Mbit/s) per level; exceeding it is advisory only.
DEFAULT_DEMAND_BANDS: dict[ThroughputLevel, float] = {
    ThroughputLevel.LOW: 1.0,
    ThroughputLevel.MEDIUM: 10.0,
    ThroughputLevel.HIGH: 50.0,
}


def band_midpoint(level: ThroughputLevel, bands: Mapping[ThroughputLevel, float] = DEFAULT_DEMAND_BANDS) -> float:
    """Midpoint of a level's demand band (lower edge is the previous level's bound)."""
    lower = 0.0 if level.rank == 0 else bands[_LEVEL_ORDER[level.rank - 1]]
    return (lower + bands[level]) / 2


def quantize(value: float) -> float:
    q = round(float(value), DECIMALS)
    return 0.0 if q == 0 else q


@dataclass(frozen=True)
class BoundingBox:
    """Pixel box, origin top-left."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if min(self.x_min, self.y_min, self.x_max, self.y_max) < 0:
            raise ValueError(f"negative box coordinate in {self.as_list()}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise DegenerateBox(f"box {self.as_list()} has zero area")

    @classmethod
    def of(cls, box: "BoundingBox | Sequence[float]") -> "BoundingBox":
        if isinstance(box, BoundingBox):
            return box
        if len(box) != 4:
            raise ValueError(f"box needs 4 coordinates, got {len(box)}")
        return cls(*box)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    def overlaps(self, other: "BoundingBox") -> bool:
        return not (
            self.x_max <= other.x_min
            or other.x_max <= self.x_min
            or self.y_max <= other.y_min
            or other.y_max <= self.y_min
        )


@dataclass(frozen=True)
class Detection:
    category: str
    confidence: float
    box: BoundingBox

    def __post_init__(self):
        if not self.category:
            raise ValueError("detection category must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class RelativePoint:
    """Fractions of frame width/height; origin top-left, y grows downward."""

    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", quantize(self.x))
        object.__setattr__(self, "y", quantize(self.y))
        if not (0.0 <= self.x <= 1.0):
            raise OutOfRange("x", self.x)
        if not (0.0 <= self.y <= 1.0):
            raise OutOfRange("y", self.y)

    def distance(self, other: "RelativePoint") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class PerceivedUser:
    label: str
    position: RelativePoint | None
    throughput_level: ThroughputLevel
    context: str
    traffic_demand: float
    provenance: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "throughput_level", ThroughputLevel.parse(self.throughput_level))
        object.__setattr__(self, "provenance", frozenset(self.provenance))
        if not self.label:
            raise OutOfRange("label", self.label)
        if not math.isfinite(self.traffic_demand) or self.traffic_demand < 0:
            raise OutOfRange("traffic_demand", self.traffic_demand)
        object.__setattr__(self, "traffic_demand", quantize(self.traffic_demand))
        if not self.provenance:
            raise OutOfRange("provenance", [])
        for source in self.provenance:
            if source not in SOURCES:
                raise BadEnum("provenance", source)
        if self.provenance == {"image"} and self.position is None:
            raise MissingField("x")


@dataclass(frozen=True)
class ServiceLevelSpec:
    scenario_id: str
    generated_at: datetime
    users: tuple[PerceivedUser, ...]
    backend_id: str
    pipeline_version: str

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        if self.generated_at.tzinfo is None:
            raise ValueError("generated_at must be timezone-aware")
        object.__setattr__(self, "generated_at", self.generated_at.astimezone(timezone.utc))
        seen: set[str] = set()
        for user in self.users:
            if user.label in seen:
                raise DuplicateLabel(user.label)
            seen.add(user.label)


@dataclass(frozen=True)
class Utterance:
    text: str
    speaker: str | None = None

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("utterance text must be non-empty")


@dataclass(frozen=True)
class Transcript:
    utterances: tuple[Utterance, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))

    @classmethod
    def from_tree(cls, tree: Any) -> "Transcript":
        if isinstance(tree, Mapping):
            tree = tree.get("utterances", [])
        return cls(tuple(Utterance(text=u["text"], speaker=u.get("speaker")) for u in tree))

    def to_tree(self) -> dict:
        return {"utterances": [{"speaker": u.speaker, "text": u.text} for u in self.utterances]}


# --- canonical JSON ----------------------------------------------------------


def format_number(value: float | int) -> str:
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, int):
        return str(value)
    if not math.isfinite(value):
        raise ValueError(f"cannot serialize non-finite number {value}")
    text = f"{value:.{DECIMALS}f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


def canonical_dumps(tree: Any, indent: int = 2) -> str:
    """Render a JSON tree with sorted keys and fixed decimal rendering."""
    out: list[str] = []
    _render(tree, 0, indent, out)
    out.append("\n")
    return "".join(out)


def _render(node: Any, depth: int, indent: int, out: list[str]) -> None:
    pad = " " * (indent * (depth + 1))
    end_pad = " " * (indent * depth)
    if node is None or isinstance(node, bool) or isinstance(node, str):
        out.append(json.dumps(node, ensure_ascii=False))
    elif isinstance(node, (int, float)):
        out.append(format_number(node))
    elif isinstance(node, Mapping):
        if not node:
            out.append("{}")
            return
        out.append("{\n")
        for i, key in enumerate(sorted(node)):
            if not isinstance(key, str):
                raise TypeError(f"object keys must be strings, got {key!r}")
            out.append(pad + json.dumps(key, ensure_ascii=False) + ": ")
            _render(node[key], depth + 1, indent, out)
            out.append(",\n" if i < len(node) - 1 else "\n")
        out.append(end_pad + "}")
    elif isinstance(node, (list, tuple)):
        if not node:
            out.append("[]")
            return
        out.append("[\n")
        for i, item in enumerate(node):
            out.append(pad)
            _render(item, depth + 1, indent, out)
            out.append(",\n" if i < len(node) - 1 else "\n")
        out.append(end_pad + "]")
    else:
        raise TypeError(f"cannot serialize {type(node).__name__}")


def format_timestamp(dt: datetime) -> str:
    dt = dt.astimezone(timezone.utc)
    text = dt.strftime("%Y-%m-%dT%H:%M:%S")
    if dt.microsecond:
        text += f".{dt.microsecond:06d}".rstrip("0")
    return text + "Z"


_FRACTION = re.compile(r"\.(\d+)(?=[+-]\d\d:\d\d$)")


def parse_timestamp(text: str, path: str = "generated_at") -> datetime:
    if not isinstance(text, str):
        raise BadType(path, text, "RFC 3339 string")
    raw = text[:-1] + "+00:00" if text.endswith(("Z", "z")) else text
    # fromisoformat on 3.10 only takes 3 or 6 fraction digits
    raw = _FRACTION.sub(lambda m: "." + m.group(1)[:6].ljust(6, "0"), raw, count=1)
    try:
        dt = datetime.fromisoformat(raw)
    except ValueError:
        raise OutOfRange(path, text) from None
    if dt.tzinfo is None:
        raise OutOfRange(path, text)
    return dt.astimezone(timezone.utc)


# --- trees <-> types ---------------------------------------------------------


def user_to_tree(user: PerceivedUser) -> dict:
    return {
        "label": user.label,
        "x": None if user.position is None else user.position.x,
        "y": None if user.position is None else user.position.y,
        "throughput_level": user.throughput_level.value,
        "context": user.context,
        "traffic_demand": user.traffic_demand,
        "provenance": sorted(user.provenance),
    }


def spec_to_tree(spec: ServiceLevelSpec) -> dict:
    return {
        "scenario_id": spec.scenario_id,
        "generated_at": format_timestamp(spec.generated_at),
        "backend_id": spec.backend_id,
        "pipeline_version": spec.pipeline_version,
        "users": [user_to_tree(u) for u in spec.users],
    }


def serialize_sls(spec: ServiceLevelSpec) -> bytes:
    return canonical_dumps(spec_to_tree(spec)).encode("utf-8")


def _require(tree: Mapping, key: str, path: str) -> Any:
    if key not in tree:
        raise MissingField(f"{path}.{key}" if path else key)
    return tree[key]


def _string(tree: Mapping, key: str, path: str) -> str:
    value = _require(tree, key, path)
    if not isinstance(value, str):
        raise BadType(f"{path}.{key}" if path else key, value, "string")
    return value


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise BadType(path, value, "number")
    if not math.isfinite(value):
        raise OutOfRange(path, value)
    return float(value)


def parse_user(tree: Any, path: str = "user", provenance: Iterable[str] | None = None) -> PerceivedUser:
    """Parse one user entry.

    When ``provenance`` is given it overrides (and need not be present in)
    the tree; agents use this since models never report provenance.
    """
    if not isinstance(tree, Mapping):
        raise BadType(path, tree, "object")
    label = _string(tree, "label", path)
    if not label:
        raise OutOfRange(f"{path}.label", label)
    raw_x = _require(tree, "x", path)
    raw_y = _require(tree, "y", path)
    if (raw_x is None) != (raw_y is None):
        raise MissingField(f"{path}.{'x' if raw_x is None else 'y'}")
    position = None
    if raw_x is not None:
        x = _number(raw_x, f"{path}.x")
        y = _number(raw_y, f"{path}.y")
        for name, v in (("x", x), ("y", y)):
            if not 0.0 <= v <= 1.0:
                raise OutOfRange(f"{path}.{name}", v)
        position = RelativePoint(x, y)
    level = ThroughputLevel.parse(_require(tree, "throughput_level", path), f"{path}.throughput_level")
    context = _string(tree, "context", path)
    demand = _number(_require(tree, "traffic_demand", path), f"{path}.traffic_demand")
    if demand < 0:
        raise OutOfRange(f"{path}.traffic_demand", demand)

    if provenance is None:
        raw_prov = _require(tree, "provenance", path)
        if not isinstance(raw_prov, list):
            raise BadType(f"{path}.provenance", raw_prov, "array")
        if not raw_prov:
            raise OutOfRange(f"{path}.provenance", raw_prov)
        for i, source in enumerate(raw_prov):
            if source not in SOURCES:
                raise BadEnum(f"{path}.provenance[{i}]", source)
        provenance = raw_prov
    provenance = frozenset(provenance)
    if provenance == {"image"} and position is None:
        raise MissingField(f"{path}.x")
    return PerceivedUser(label, position, level, context, demand, provenance)


def parse_users(items: Any, path: str = "users", provenance: Iterable[str] | None = None) -> tuple[PerceivedUser, ...]:
    if not isinstance(items, list):
        raise BadType(path, items, "array")
    users = tuple(parse_user(item, f"{path}[{i}]", provenance) for i, item in enumerate(items))
    seen: set[str] = set()
    for user in users:
        if user.label in seen:
            raise DuplicateLabel(user.label)
        seen.add(user.label)
    return users


def demand_band_warnings(
    spec: ServiceLevelSpec, bands: Mapping[ThroughputLevel, float] = DEFAULT_DEMAND_BANDS
) -> list[str]:
    """Users whose demand exceeds the upper bound of their level's band."""
    messages = []
    for user in spec.users:
        bound = bands[user.throughput_level]
        if user.traffic_demand > bound:
            messages.append(
                f"{user.label}: {user.traffic_demand} Mbit/s exceeds the "
                f"{user.throughput_level.value} band ({bound} Mbit/s)"
            )
    return messages


def validate_sls(
    document: Any, bands: Mapping[ThroughputLevel, float] | None = DEFAULT_DEMAND_BANDS
) -> ServiceLevelSpec:
    """Validate a parsed SLS tree and return the typed spec.

    Band inconsistencies are logged as warnings; pass ``bands=None`` to skip.
    """
    if not isinstance(document, Mapping):
        raise BadType("$", document, "object")
    scenario_id = _string(document, "scenario_id", "")
    generated_at = parse_timestamp(_require(document, "generated_at", ""))
    backend_id = _string(document, "backend_id", "")
    pipeline_version = _string(document, "pipeline_version", "")
    users = parse_users(_require(document, "users", ""))
    spec = ServiceLevelSpec(scenario_id, generated_at, users, backend_id, pipeline_version)
    if bands is not None:
        for message in demand_band_warnings(spec, bands):
            logger.warning("demand/level mismatch: %s", message)
    return spec


def parse_sls(data: bytes | str, **kwargs) -> ServiceLevelSpec:
    try:
        tree = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SLSValidationError("$", f"not valid JSON ({exc})") from None
    return validate_sls(tree, **kwargs)
