"""Pipeline driver: perception, then the two agents, then fusion.

Stage boundaries are timed here rather than inside the modules so that the
core operations stay pure.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

from . import __version__
from .agents import AgentFragment, ReplayBackend, Ruleset, SimulatedBackend, run_audio_agent, run_image_agent
from .clock import MonotonicClock, VirtualClock
from .errors import MissingPart, ParseError
from .evalkit import RunProfile
from .forge import NoiseModel, ScenarioManifest
from .fusion import EPOCH, FusionConfig, fuse
from .http_backend import BackendConfig, HttpModelBackend, RecordingBackend
from .perception import (
    DetectionReport,
    FileDetector,
    FilterPolicy,
    HttpDetector,
    SimulatedDetector,
    build_detection_report,
    emit_overlay,
    filter_detections,
)
from .sls import ServiceLevelSpec, Transcript, parse_timestamp, serialize_sls

logger = logging.getLogger(__name__)

DETECTOR_KINDS = ("file", "simulated", "http")
MODEL_KINDS = ("simulated", "replay", "live")


@dataclass(frozen=True)
class PipelineConfig:
    detector: str = "file"
    policy_path: Path | None = None
    noise: NoiseModel = field(default_factory=NoiseModel)
    detector_url: str | None = None
    model: str = "simulated"
    ruleset_path: Path | None = None
    delay_s: float = 0.0
    virtual_time: bool = False
    malformation: Any = None
    replay_dir: Path | None = None
    record_dir: Path | None = None
    live: BackendConfig | None = None
    fusion: FusionConfig = field(default_factory=FusionConfig)
    parallel_agents: bool = False
    output_dir: Path | None = None

    def __post_init__(self):
        if self.detector not in DETECTOR_KINDS:
            raise ValueError(f"detector must be one of {DETECTOR_KINDS}, got {self.detector!r}")
        if self.model not in MODEL_KINDS:
            raise ValueError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.detector == "http" and not self.detector_url:
            raise ValueError("http detector needs detector.url")
        if self.model == "replay" and self.replay_dir is None:
            raise ValueError("replay model needs model.fixtures")
        if self.model == "live" and self.live is None:
            raise ValueError("live model needs endpoint settings")
        for p in (self.policy_path, self.ruleset_path, self.replay_dir):
            if p is not None and not Path(p).exists():
                raise MissingPart("config path", p)

    @property
    def deterministic(self) -> bool:
        return self.model != "live"

    @classmethod
    def from_tree(cls, tree: Mapping[str, Any], base: Path = Path(".")) -> "PipelineConfig":
        def path(value):
            return None if value is None else (base / value)

        det = tree.get("detector", {})
        mod = tree.get("model", {})
        fus = tree.get("fusion", {})
        live = None
        if mod.get("kind") == "live":
            live = BackendConfig.from_tree(mod)
        return cls(
            detector=det.get("kind", "file"),
            policy_path=path(det.get("policy")),
            noise=NoiseModel.from_tree(det.get("noise", {})),
            detector_url=det.get("url"),
            model=mod.get("kind", "simulated"),
            ruleset_path=path(mod.get("ruleset")),
            delay_s=float(mod.get("delay_s", 0.0)),
            virtual_time=bool(mod.get("virtual_time", False)),
            malformation=mod.get("malformation"),
            replay_dir=path(mod.get("fixtures")),
            record_dir=path(mod.get("record_dir")),
            live=live,
            fusion=FusionConfig(
                epsilon=fus.get("epsilon", 0.05),
                escalation_uplift=fus.get("escalation_uplift", 1.25),
                mode=fus.get("mode", "deterministic"),
            ),
            parallel_agents=bool(tree.get("parallel_agents", False)),
            output_dir=path(tree.get("output_dir")),
        )

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            tree = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise MissingPart("config", path) from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None
        return cls.from_tree(tree, path.parent)

    def with_overrides(self, **changes) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


@dataclass
class RunResult:
    sls: ServiceLevelSpec
    report: DetectionReport
    image: AgentFragment
    audio: AgentFragment
    profile: RunProfile
    overlay: str

    @property
    def per_agent(self) -> dict[str, int]:
        return {"image": len(self.image.users), "audio": len(self.audio.users), "fused": len(self.sls.users)}


class _Stages:
    def __init__(self, clock):
        self.clock = clock
        self.stages: list[tuple[str, float]] = []

    @contextmanager
    def stage(self, name: str):
        start = self.clock.now()
        try:
            yield
        finally:
            self.stages.append((name, self.clock.now() - start))


def make_clock(config: PipelineConfig):
    return VirtualClock() if config.virtual_time else MonotonicClock()


def make_model_backend(config: PipelineConfig, clock=None):
    clock = clock or make_clock(config)
    if config.model == "simulated":
        rules = Ruleset.load(config.ruleset_path)
        backend = SimulatedBackend(rules, config.delay_s, clock, config.malformation)
    elif config.model == "replay":
        backend = ReplayBackend(config.replay_dir, clock=clock)
    else:
        backend = HttpModelBackend(config.live)
    if config.record_dir is not None:
        backend = RecordingBackend(backend, config.record_dir)
    return backend


def make_detector(config: PipelineConfig):
    if config.detector == "file":
        return FileDetector()
    if config.detector == "simulated":
        return SimulatedDetector(config.noise)
    return HttpDetector(config.detector_url)


def _timestamp(manifest: ScenarioManifest, config: PipelineConfig) -> datetime:
    captured = manifest.metadata.get("captured_at")
    if captured:
        return parse_timestamp(captured, "metadata.captured_at")
    if config.deterministic:
        return EPOCH
    return datetime.now(timezone.utc)


def run_pipeline(
    manifest: ScenarioManifest,
    config: PipelineConfig,
    *,
    backend=None,
    detector=None,
    clock=None,
    require_audio: bool = False,
) -> RunResult:
    """Run one perception cycle over a scenario.

    A missing transcript is treated as silence unless ``require_audio``.
    """
    clock = clock or make_clock(config)
    backend = backend or make_model_backend(config, clock)
    detector = detector or make_detector(config)
    timer = _Stages(clock)
    scenario_id = manifest.scenario_id

    with timer.stage("load_inputs"):
        if config.detector == "simulated":
            frame = detector.detect(manifest.ground_truth())
        elif config.detector == "http":
            frame = detector.detect(manifest.metadata.get("image") or manifest.frame)
        else:
            frame = detector.detect(manifest.frame_path)
        if require_audio or manifest.has_part("transcript"):
            transcript = manifest.transcript()
        else:
            transcript = Transcript(())

    with timer.stage("perception"):
        policy = FilterPolicy.load(config.policy_path) if config.policy_path else FilterPolicy()
        kept = filter_detections(frame.detections, policy)
        report = build_detection_report(frame.frame_id, (frame.width, frame.height), kept, frame.image)
        overlay = emit_overlay(report)

    # Virtual time models sequential execution, so concurrency is only used on real clocks.
    if config.parallel_agents and backend.concurrent and not config.virtual_time:
        image, audio = _run_agents_parallel(report, transcript, backend, scenario_id, timer)
    else:
        with timer.stage("generate_content.image"):
            image = run_image_agent(report, backend, scenario_id)
        with timer.stage("generate_content.audio"):
            audio = run_audio_agent(transcript, backend, scenario_id)

    fusion_stage = "generate_content.fusion" if config.fusion.mode == "model_delegated" else "fusion"
    with timer.stage(fusion_stage):
        sls = fuse(
            image,
            audio,
            config.fusion,
            scenario_id=scenario_id,
            generated_at=_timestamp(manifest, config),
            backend_id=backend.identity,
            pipeline_version=__version__,
            backend=backend,
        )

    return RunResult(sls, report, image, audio, RunProfile(tuple(timer.stages)), overlay)


def _run_agents_parallel(report, transcript, backend, scenario_id, timer: _Stages):
    """Run both agents at once; the joint wall time is split between the two
    stages in proportion to each agent's own latency, so stages still sum to
    the run total."""
    start = timer.clock.now()
    with ThreadPoolExecutor(max_workers=2) as pool:
        image_future = pool.submit(run_image_agent, report, backend, scenario_id)
        audio_future = pool.submit(run_audio_agent, transcript, backend, scenario_id)
        image, audio = image_future.result(), audio_future.result()
    wall = timer.clock.now() - start
    both = image.raw_latency + audio.raw_latency
    share = image.raw_latency / both if both > 0 else 0.5
    timer.stages.append(("generate_content.image", wall * share))
    timer.stages.append(("generate_content.audio", wall * (1 - share)))
    return image, audio


def write_outputs(result: RunResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"sls": out / "sls.json", "profile": out / "profile.json", "overlay": out / "overlay.svg"}
    paths["sls"].write_bytes(serialize_sls(result.sls))
    paths["overlay"].write_text(result.overlay, encoding="utf-8")
    # full float precision so the reloaded stages still sum to the total
    profile = json.dumps(result.profile.to_tree(), sort_keys=True, indent=2) + "\n"
    paths["profile"].write_text(profile, encoding="utf-8")
    return paths
