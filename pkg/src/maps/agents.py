"""Image and audio agents, and the model-backend abstraction behind them.

Agents build a prompt, hand it to a :class:`ModelBackend`, and turn the
returned tree into an :class:`AgentFragment`. Prompts embed their structured
input as a fenced JSON block so that the simulated backend can act on exactly
what a live model would see.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

from .clock import MonotonicClock
from .errors import BackendError, FixtureIoError, SchemaViolation, SLSValidationError
from .perception import DetectionReport
from .sls import (
    PerceivedUser,
    ThroughputLevel,
    Transcript,
    band_midpoint,
    canonical_dumps,
    parse_users,
    user_to_tree,
)

logger = logging.getLogger(__name__)

_USER_PROPERTIES = {
    "label": {"type": "string", "minLength": 1},
    "x": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
    "y": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
    "throughput_level": {"type": "string", "enum": ["low", "medium", "high"]},
    "context": {"type": "string"},
    "traffic_demand": {"type": "number", "minimum": 0},
}

AGENT_OUTPUT_SCHEMA: dict = {
    "type": "object",
    "required": ["users"],
    "properties": {
        "users": {
            "type": "array",
            "items": {
                "type": "object",
                "required": list(_USER_PROPERTIES),
                "properties": _USER_PROPERTIES,
            },
        }
    },
}

FUSION_OUTPUT_SCHEMA: dict = copy.deepcopy(AGENT_OUTPUT_SCHEMA)
FUSION_OUTPUT_SCHEMA["properties"]["users"]["items"]["required"].append("provenance")
FUSION_OUTPUT_SCHEMA["properties"]["users"]["items"]["properties"]["provenance"] = {
    "type": "array",
    "minItems": 1,
    "items": {"type": "string", "enum": ["image", "audio"]},
}


@dataclass(frozen=True)
class Attachment:
    kind: str
    uri: str


@dataclass(frozen=True)
class GenerationRequest:
    agent: str  # "image" | "audio" | "fusion"
    prompt: str
    output_schema: Mapping[str, Any]
    attachments: tuple[Attachment, ...] = ()
    scenario_id: str = ""

    @property
    def prompt_sha256(self) -> str:
        return hashlib.sha256(self.prompt.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Generation:
    tree: Any
    latency: float
    token_usage: Mapping[str, int] | None = None


class ModelBackend(Protocol):
    identity: str
    concurrent: bool

    def generate_structured(self, request: GenerationRequest) -> Generation: ...


@dataclass(frozen=True)
class AgentFragment:
    source: str  # "image" | "audio"
    users: tuple[PerceivedUser, ...]
    raw_latency: float

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        if self.source not in ("image", "audio"):
            raise ValueError(f"unknown fragment source {self.source!r}")
        for user in self.users:
            if self.source not in user.provenance:
                raise ValueError(f"{user.label} lacks provenance {self.source!r}")
            if self.source == "image" and user.position is None:
                raise ValueError(f"image user {user.label} has no position")

    @classmethod
    def empty(cls, source: str) -> "AgentFragment":
        return cls(source, (), 0.0)


# --- prompts -----------------------------------------------------------------

_INPUT_BLOCK = re.compile(r"```json\n(.*?)\n```", re.DOTALL)

_IMAGE_TEMPLATE = """\
You are the operator of an aerial camera, looking down at an emergency scene \
through a UAV feed. A detector has already located the objects below. Each \
object has a tag, a category, a confidence, and a center (x, y) given as \
fractions of frame width and height, measured from the top-left corner.

For every object that is, or likely carries, a network user, report:
- label: the object's tag, unchanged
- x, y: its center, unchanged
- throughput_level: one of low, medium, high
- traffic_demand: estimated demand in Mbit/s
- context: one sentence on the visual cues behind the estimate
{detections_clause}
Answer only with JSON matching the response schema.

Input:
```json
{payload}
```
"""

_AUDIO_TEMPLATE = """\
You are listening to radio traffic from responders at an emergency scene. \
Transcribed utterances follow, each with its speaker when known.

{utterance_lines}
Group the utterances by speaker. For each speaker, infer intent and urgency \
and report one user with:
- label: audio_<speaker>, or audio_unattributed for unknown speakers
- x, y: relative position if the speaker states one, otherwise null
- throughput_level: one of low, medium, high
- traffic_demand: estimated demand in Mbit/s
- context: the spoken cues behind the estimate
Answer only with JSON matching the response schema.

Input:
```json
{payload}
```
"""


def embed_payload(tree: Any) -> str:
    return canonical_dumps(tree).rstrip("\n")


def extract_payload(prompt: str) -> Any:
    match = _INPUT_BLOCK.search(prompt)
    if match is None:
        raise ValueError("prompt carries no structured input block")
    return json.loads(match.group(1))


def build_image_prompt(report: DetectionReport) -> tuple[str, tuple[Attachment, ...]]:
    if report.entries:
        clause = f"\nThere are {len(report.entries)} detections in frame {report.frame_id}.\n"
    else:
        clause = f"\nThere are no detections in frame {report.frame_id}; return an empty user list.\n"
    prompt = _IMAGE_TEMPLATE.format(detections_clause=clause, payload=embed_payload(report.to_tree()))
    attachments = (Attachment("image", report.frame_ref),) if report.frame_ref else ()
    return prompt, attachments


def build_audio_prompt(transcript: Transcript) -> str:
    if transcript.utterances:
        lines = "".join(
            f"{i}. [{u.speaker or 'unknown'}] {u.text}\n" for i, u in enumerate(transcript.utterances, start=1)
        )
    else:
        lines = "No audio available for this cycle; return an empty user list.\n"
    payload = {"kind": "transcript", **transcript.to_tree()}
    return _AUDIO_TEMPLATE.format(utterance_lines=lines, payload=embed_payload(payload))


# --- simulation ---------------------------------------------------------------


@dataclass(frozen=True)
class KeywordRule:
    pattern: str
    level: ThroughputLevel
    mbps: float


@dataclass(frozen=True)
class Ruleset:
    category_demand: Mapping[str, tuple[ThroughputLevel, float]]
    keyword_levels: tuple[KeywordRule, ...]
    default_level: ThroughputLevel = ThroughputLevel.LOW
    default_mbps: float | None = None
    position_pattern: str | None = None

    def fallback(self) -> tuple[ThroughputLevel, float]:
        mbps = self.default_mbps if self.default_mbps is not None else band_midpoint(self.default_level)
        return self.default_level, mbps

    @classmethod
    def from_tree(cls, tree: Mapping[str, Any]) -> "Ruleset":
        return cls(
            category_demand={
                cat: (ThroughputLevel.parse(v["level"]), float(v["mbps"]))
                for cat, v in tree.get("category_demand", {}).items()
            },
            keyword_levels=tuple(
                KeywordRule(r["pattern"], ThroughputLevel.parse(r["level"]), float(r["mbps"]))
                for r in tree.get("keyword_levels", [])
            ),
            default_level=ThroughputLevel.parse(tree.get("default_level", "low")),
            default_mbps=tree.get("default_mbps"),
            position_pattern=tree.get("position_pattern"),
        )

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Ruleset":
        if path is None:
            text = resources.files("maps.data").joinpath("ruleset.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.from_tree(json.loads(text))


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_") or "speaker"


def _simulate_image(payload: Mapping[str, Any], rules: Ruleset) -> dict:
    users = []
    for entry in payload["entries"]:
        level, mbps = rules.category_demand.get(entry["category"], rules.fallback())
        users.append(
            {
                "label": entry["tag"],
                "x": entry["x"],
                "y": entry["y"],
                "throughput_level": level.value,
                "traffic_demand": mbps,
                "context": f"{entry['category']} detected with confidence {entry['confidence']:.2f}",
            }
        )
    return {"users": users}


def _simulate_audio(payload: Mapping[str, Any], rules: Ruleset) -> dict:
    groups: dict[str | None, list[str]] = {}
    for utterance in payload["utterances"]:
        groups.setdefault(utterance.get("speaker"), []).append(utterance["text"])

    compiled = [(re.compile(r.pattern, re.IGNORECASE), r) for r in rules.keyword_levels]
    position_re = re.compile(rules.position_pattern, re.IGNORECASE) if rules.position_pattern else None
    users, used_labels = [], set()
    for speaker, texts in groups.items():
        best: KeywordRule | None = None
        for pattern, rule in compiled:
            if any(pattern.search(t) for t in texts) and (best is None or rule.level > best.level):
                best = rule
        level, mbps = (best.level, best.mbps) if best else rules.fallback()

        x = y = None
        if position_re is not None:
            for text in texts:
                m = position_re.search(text)
                if m and 0 <= float(m.group(1)) <= 1 and 0 <= float(m.group(2)) <= 1:
                    x, y = float(m.group(1)), float(m.group(2))
                    break

        base = f"audio_{_slug(speaker) if speaker else 'unattributed'}"
        label, k = base, 2
        while label in used_labels:
            label, k = f"{base}_{k}", k + 1
        used_labels.add(label)
        who = speaker or "unattributed speaker"
        users.append(
            {
                "label": label,
                "x": x,
                "y": y,
                "throughput_level": level.value,
                "traffic_demand": mbps,
                "context": f"{who}: " + " / ".join(texts),
            }
        )
    return {"users": users}


def _simulate_fusion(payload: Mapping[str, Any]) -> dict:
    from .fusion import FusionConfig, fuse_users  # fusion imports this module

    image = AgentFragment("image", parse_users(payload["image_users"], provenance=["image"]), 0.0)
    audio = AgentFragment("audio", parse_users(payload["audio_users"], provenance=["audio"]), 0.0)
    config = FusionConfig(epsilon=payload["epsilon"], escalation_uplift=payload["escalation_uplift"])
    return {"users": [user_to_tree(u) for u in fuse_users(image, audio, config)]}


def _malform(tree: dict, mode: str) -> Any:
    name, _, arg = mode.partition(":")
    tree = copy.deepcopy(tree)
    if name == "drop_field":
        for user in tree["users"]:
            user.pop(arg, None)
    elif name == "bad_enum":
        for user in tree["users"]:
            user["throughput_level"] = arg or "extreme"
    elif name == "negative_demand":
        for user in tree["users"]:
            user["traffic_demand"] = -1
    elif name == "drop_users":
        tree.pop("users")
    elif name == "extra_users":
        extra = []
        for k in range(int(arg or 1)):
            template = dict(tree["users"][0]) if tree["users"] else {
                "x": 0.5, "y": 0.5, "throughput_level": "low", "traffic_demand": 0.5,
                "context": "phantom", "provenance": ["image"],
            }
            template["label"] = f"phantom_{k + 1}"
            extra.append(template)
        tree["users"].extend(extra)
    elif name == "not_object":
        return [tree]
    else:
        raise ValueError(f"unknown malformation mode {mode!r}")
    return tree


def simulate_generate(
    prompt: str,
    attachments: Sequence[Attachment] = (),
    rules: Ruleset | None = None,
    malformation: str | None = None,
) -> Any:
    """Deterministic stand-in for a live model.

    Image input yields one user per report entry with the category's demand;
    audio input yields one user per distinct speaker, leveled by the highest
    keyword hit; fusion input is resolved with the rule-based fuser.
    """
    rules = rules or Ruleset.load()
    payload = extract_payload(prompt)
    kind = payload.get("kind")
    if kind == "detection_report":
        tree = _simulate_image(payload, rules)
    elif kind == "transcript":
        tree = _simulate_audio(payload, rules)
    elif kind == "fusion_input":
        tree = _simulate_fusion(payload)
    else:
        raise ValueError(f"unknown payload kind {kind!r}")
    return _malform(tree, malformation) if malformation else tree


class SimulatedBackend:
    concurrent = True

    def __init__(
        self,
        rules: Ruleset | None = None,
        delay_s: float = 0.0,
        clock=None,
        malformation: str | Mapping[str, str] | None = None,
        name: str = "default",
    ):
        self.rules = rules or Ruleset.load()
        self.delay_s = delay_s
        self.clock = clock or MonotonicClock()
        self.malformation = malformation
        self.identity = f"simulated:{name}"
        self.calls: list[str] = []

    def generate_structured(self, request: GenerationRequest) -> Generation:
        start = self.clock.now()
        mode = self.malformation
        if isinstance(mode, Mapping):
            mode = mode.get(request.agent)
        tree = simulate_generate(request.prompt, request.attachments, self.rules, mode)
        self.clock.sleep(self.delay_s)
        self.calls.append(request.agent)
        return Generation(tree, self.clock.now() - start)


def fixture_path(root: str | Path, scenario_id: str, agent: str) -> Path:
    return Path(root) / scenario_id / f"{agent}_agent.json"


class ReplayBackend:
    """Returns responses recorded under ``root/<scenario_id>/<agent>_agent.json``.

    With ``strict`` the recorded prompt digest must match the live prompt, which
    catches fixtures that went stale after a prompt template change.
    """

    concurrent = True

    def __init__(self, root: str | Path, strict: bool = False, clock=None):
        self.root = Path(root)
        self.strict = strict
        self.clock = clock or MonotonicClock()
        self.identity = "replay"

    def generate_structured(self, request: GenerationRequest) -> Generation:
        start = self.clock.now()
        path = fixture_path(self.root, request.scenario_id, request.agent)
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise FixtureIoError(f"no replay fixture at {path}") from None
        except json.JSONDecodeError as exc:
            raise FixtureIoError(f"corrupt replay fixture {path}: {exc}") from None
        if self.strict and record.get("prompt_sha256") != request.prompt_sha256:
            raise BackendError(f"replay fixture {path} was recorded for a different prompt")
        return Generation(record["response"], self.clock.now() - start, record.get("token_usage"))


# --- agents ------------------------------------------------------------------


def call_backend(backend: ModelBackend, request: GenerationRequest) -> Generation:
    try:
        return backend.generate_structured(request)
    except (BackendError, SchemaViolation):
        raise
    except Exception as exc:  # noqa: BLE001 - any backend fault surfaces as BackendError
        raise BackendError(f"{backend.identity} failed on {request.agent} agent: {exc}") from exc


def parse_agent_users(tree: Any, source: str) -> tuple[PerceivedUser, ...]:
    if not isinstance(tree, Mapping) or "users" not in tree:
        raise SchemaViolation(f"{source} agent output lacks a 'users' array", tree)
    try:
        return parse_users(tree["users"], path="users", provenance=[source])
    except SLSValidationError as exc:
        raise SchemaViolation(f"{source} agent output invalid: {exc}", tree) from exc


def run_image_agent(report: DetectionReport, backend: ModelBackend, scenario_id: str = "") -> AgentFragment:
    prompt, attachments = build_image_prompt(report)
    request = GenerationRequest("image", prompt, AGENT_OUTPUT_SCHEMA, attachments, scenario_id)
    generation = call_backend(backend, request)
    users = parse_agent_users(generation.tree, "image")
    tags = set(report.tags)
    for user in users:
        if user.label not in tags:
            raise SchemaViolation(f"image user {user.label!r} does not reference a report tag", generation.tree)
        if user.position is None:
            raise SchemaViolation(f"image user {user.label!r} has no position", generation.tree)
    return AgentFragment("image", users, generation.latency)


def run_audio_agent(transcript: Transcript, backend: ModelBackend, scenario_id: str = "") -> AgentFragment:
    prompt = build_audio_prompt(transcript)
    request = GenerationRequest("audio", prompt, AGENT_OUTPUT_SCHEMA, (), scenario_id)
    generation = call_backend(backend, request)
    return AgentFragment("audio", parse_agent_users(generation.tree, "audio"), generation.latency)
