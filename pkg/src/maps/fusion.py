"""Fusion of image and audio fragments into one service level spec."""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Sequence

from .agents import (
    FUSION_OUTPUT_SCHEMA,
    AgentFragment,
    GenerationRequest,
    ModelBackend,
    call_backend,
    embed_payload,
)
from .errors import CountBoundViolation, SchemaViolation, SLSValidationError
from .sls import PerceivedUser, ServiceLevelSpec, parse_users, user_to_tree

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class FusionConfig:
    epsilon: float = 0.05
    escalation_uplift: float = 1.25
    mode: str = "deterministic"  # or "model_delegated"

    def __post_init__(self):
        if not 0 < self.epsilon <= math.sqrt(2):
            raise ValueError(f"epsilon must be in (0, sqrt(2)], got {self.epsilon}")
        if self.escalation_uplift < 1:
            raise ValueError(f"escalation_uplift must be >= 1, got {self.escalation_uplift}")
        if self.mode not in ("deterministic", "model_delegated"):
            raise ValueError(f"unknown fusion mode {self.mode!r}")


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[int, int], ...]  # (image index, audio index)
    unmatched_image: tuple[int, ...]
    unmatched_audio: tuple[int, ...]


def match_users(
    image_users: Sequence[PerceivedUser], audio_users: Sequence[PerceivedUser], epsilon: float
) -> Matching:
    """Greedy closest-first matching under a strict distance bound.

    Ties on distance go to the lower image index, then the lower audio index.
    Audio users without a position never match.
    """
    candidates = []
    for i, img in enumerate(image_users):
        for j, aud in enumerate(audio_users):
            if aud.position is None:
                continue
            d = img.position.distance(aud.position)
            if d < epsilon:
                candidates.append((d, i, j))
    candidates.sort()
    used_i, used_j, pairs = set(), set(), []
    for _, i, j in candidates:
        if i not in used_i and j not in used_j:
            used_i.add(i)
            used_j.add(j)
            pairs.append((i, j))
    pairs.sort()
    return Matching(
        tuple(pairs),
        tuple(i for i in range(len(image_users)) if i not in used_i),
        tuple(j for j in range(len(audio_users)) if j not in used_j),
    )


def merge_pair(image_user: PerceivedUser, audio_user: PerceivedUser, config: FusionConfig) -> PerceivedUser:
    level = max(image_user.throughput_level, audio_user.throughput_level)
    demand = max(image_user.traffic_demand, audio_user.traffic_demand)
    if min(image_user.throughput_level, audio_user.throughput_level).rank >= 1:
        level = level.step_up()
        demand *= config.escalation_uplift
    return PerceivedUser(
        label=image_user.label,
        position=image_user.position,
        throughput_level=level,
        context=f"{image_user.context}; {audio_user.context}",
        traffic_demand=demand,
        provenance=frozenset({"image", "audio"}),
    )


def _ordered(fragment_a: AgentFragment, fragment_b: AgentFragment) -> tuple[AgentFragment, AgentFragment]:
    pair = sorted((fragment_a, fragment_b), key=lambda f: f.source != "image")
    if [f.source for f in pair] != ["image", "audio"]:
        raise ValueError("fusion needs one image and one audio fragment")
    return pair[0], pair[1]


def relabel(users: Sequence[PerceivedUser]) -> tuple[PerceivedUser, ...]:
    """Label users ``user_1..user_n``: positioned users in reading order, then the rest."""
    positioned = [(u.position.y, u.position.x, k, u) for k, u in enumerate(users) if u.position is not None]
    positioned.sort(key=lambda item: item[:3])
    ordered = [item[3] for item in positioned] + [u for u in users if u.position is None]
    return tuple(
        PerceivedUser(f"user_{n}", u.position, u.throughput_level, u.context, u.traffic_demand, u.provenance)
        for n, u in enumerate(ordered, start=1)
    )


def fuse_users(
    image_fragment: AgentFragment, audio_fragment: AgentFragment, config: FusionConfig | None = None
) -> tuple[PerceivedUser, ...]:
    config = config or FusionConfig()
    image_fragment, audio_fragment = _ordered(image_fragment, audio_fragment)
    image, audio = image_fragment.users, audio_fragment.users
    matching = match_users(image, audio, config.epsilon)
    users = [merge_pair(image[i], audio[j], config) for i, j in matching.pairs]
    users += [image[i] for i in matching.unmatched_image]
    users += [audio[j] for j in matching.unmatched_audio]
    return relabel(users)


def build_fusion_prompt(image_fragment: AgentFragment, audio_fragment: AgentFragment, config: FusionConfig) -> str:
    payload = {
        "kind": "fusion_input",
        "epsilon": config.epsilon,
        "escalation_uplift": config.escalation_uplift,
        "image_users": [_fragment_user(u) for u in image_fragment.users],
        "audio_users": [_fragment_user(u) for u in audio_fragment.users],
    }
    return (
        "Two agents have described the same emergency scene: one from aerial "
        "imagery, one from radio transcripts. Merge their user lists into a "
        "single list.\n"
        f"- Treat an image user and an audio user closer than {config.epsilon} "
        "(relative units) as the same person and merge them.\n"
        "- When both sources indicate medium or high urgency, raise the merged "
        "user's level and demand.\n"
        "- Keep users seen by only one source. Never invent users.\n"
        "- provenance lists the sources (image, audio) supporting each user.\n"
        "Answer only with JSON matching the response schema.\n\n"
        f"Input:\n```json\n{embed_payload(payload)}\n```\n"
    )


def _fragment_user(user: PerceivedUser) -> dict:
    tree = user_to_tree(user)
    tree.pop("provenance")
    return tree


def fuse(
    image_fragment: AgentFragment,
    audio_fragment: AgentFragment,
    config: FusionConfig | None = None,
    *,
    scenario_id: str = "",
    generated_at: datetime = EPOCH,
    backend_id: str = "rule-based",
    pipeline_version: str = "",
    backend: ModelBackend | None = None,
) -> ServiceLevelSpec:
    config = config or FusionConfig()
    image_fragment, audio_fragment = _ordered(image_fragment, audio_fragment)
    if config.mode == "deterministic":
        users = fuse_users(image_fragment, audio_fragment, config)
    else:
        if backend is None:
            raise ValueError("model_delegated fusion needs a backend")
        users = _delegated(image_fragment, audio_fragment, config, backend, scenario_id)
    return ServiceLevelSpec(scenario_id, generated_at, users, backend_id, pipeline_version)


def _delegated(image_fragment, audio_fragment, config, backend, scenario_id) -> tuple[PerceivedUser, ...]:
    prompt = build_fusion_prompt(image_fragment, audio_fragment, config)
    request = GenerationRequest("fusion", prompt, FUSION_OUTPUT_SCHEMA, (), scenario_id)
    tree = call_backend(backend, request).tree
    if not isinstance(tree, dict) or "users" not in tree:
        raise SchemaViolation("fusion output lacks a 'users' array", tree)
    try:
        users = parse_users(tree["users"])
    except SLSValidationError as exc:
        raise SchemaViolation(f"fusion output invalid: {exc}", tree) from exc
    bound = len(image_fragment.users) + len(audio_fragment.users)
    if len(users) > bound:
        raise CountBoundViolation(len(users), bound)
    return relabel(users)
