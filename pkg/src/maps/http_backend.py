"""Structured-generation client over HTTP, plus fixture recording for replay."""

from __future__ import annotations

import base64
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import httpx
import jsonschema

from .agents import Attachment, Generation, GenerationRequest, fixture_path
from .errors import (
    AttachmentTooLarge,
    AuthError,
    BackendError,
    FixtureIoError,
    RateLimited,
    SchemaViolation,
    TransportError,
)
from .sls import canonical_dumps

logger = logging.getLogger(__name__)

MAX_ATTACHMENT_BYTES = 20 * 1024 * 1024
REDACTED = "***"


@dataclass(frozen=True)
class BackendConfig:
    endpoint_url: str
    model_name: str
    api_key_env: str = "MAPS_API_KEY"
    timeout_s: float = 120.0
    max_retries: int = 3
    backoff_base_s: float = 2.0
    max_inflight: int = 3
    vendor: str = "generic"  # or "gemini"
    uri_attachments: bool = True

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_inflight < 1:
            raise ValueError("max_inflight must be >= 1")
        if self.vendor not in ADAPTERS:
            raise ValueError(f"unknown vendor {self.vendor!r}")

    @classmethod
    def from_tree(cls, tree: Mapping[str, Any]) -> "BackendConfig":
        return cls(
            endpoint_url=tree["endpoint_url"],
            model_name=tree["model_name"],
            api_key_env=tree.get("api_key_env", "MAPS_API_KEY"),
            timeout_s=tree.get("timeout_s", 120.0),
            max_retries=tree.get("max_retries", 3),
            backoff_base_s=tree.get("backoff_base_s", 2.0),
            max_inflight=tree.get("max_inflight", 3),
            vendor=tree.get("vendor", "generic"),
            uri_attachments=tree.get("uri_attachments", True),
        )

    def backoff_delay(self, attempt: int) -> float:
        """Delay after failed attempt ``attempt`` (1-based)."""
        return self.backoff_base_s * 2 ** (attempt - 1)


def encode_attachments(attachments: Sequence[Attachment], by_reference: bool) -> list[dict]:
    encoded = []
    for a in attachments:
        if by_reference:
            encoded.append({"kind": a.kind, "uri": a.uri})
            continue
        path = Path(a.uri.removeprefix("file://"))
        size = path.stat().st_size
        if size > MAX_ATTACHMENT_BYTES:
            raise AttachmentTooLarge(f"{path} is {size} bytes, cap is {MAX_ATTACHMENT_BYTES}")
        encoded.append({"kind": a.kind, "inline_base64": base64.b64encode(path.read_bytes()).decode("ascii")})
    return encoded


class GenericAdapter:
    """Vendor-neutral wire shape; the response envelope is ``{"output": tree, "usage": {...}}``."""

    def url(self, config: BackendConfig) -> str:
        return config.endpoint_url

    def headers(self, api_key: str | None) -> dict:
        return {"Authorization": f"Bearer {api_key}"} if api_key else {}

    def body(self, config: BackendConfig, request: GenerationRequest) -> dict:
        return {
            "model": config.model_name,
            "prompt": request.prompt,
            "response_schema": request.output_schema,
            "attachments": encode_attachments(request.attachments, config.uri_attachments),
        }

    def parse(self, payload: Any) -> tuple[Any, Mapping[str, int] | None]:
        if not isinstance(payload, Mapping) or "output" not in payload:
            raise SchemaViolation("response envelope lacks 'output'", payload)
        return payload["output"], payload.get("usage")


class GeminiAdapter(GenericAdapter):
    """``generateContent`` REST shape with JSON-mode structured output."""

    def url(self, config: BackendConfig) -> str:
        return f"{config.endpoint_url.rstrip('/')}/models/{config.model_name}:generateContent"

    def headers(self, api_key: str | None) -> dict:
        return {"x-goog-api-key": api_key} if api_key else {}

    def body(self, config: BackendConfig, request: GenerationRequest) -> dict:
        parts: list[dict] = [{"text": request.prompt}]
        for a in encode_attachments(request.attachments, config.uri_attachments):
            if "uri" in a:
                parts.append({"fileData": {"fileUri": a["uri"], "mimeType": "image/png"}})
            else:
                parts.append({"inlineData": {"data": a["inline_base64"], "mimeType": "image/png"}})
        return {
            "contents": [{"role": "user", "parts": parts}],
            "generationConfig": {
                "responseMimeType": "application/json",
                "responseSchema": request.output_schema,
            },
        }

    def parse(self, payload: Any) -> tuple[Any, Mapping[str, int] | None]:
        try:
            text = payload["candidates"][0]["content"]["parts"][0]["text"]
            tree = json.loads(text)
        except (KeyError, IndexError, TypeError, json.JSONDecodeError):
            raise SchemaViolation("unexpected generateContent response shape", payload) from None
        usage = payload.get("usageMetadata")
        return tree, usage


ADAPTERS = {"generic": GenericAdapter, "gemini": GeminiAdapter}


class HttpModelBackend:
    """Live backend. Retries transport faults and 429s with exponential backoff.

    Schema violations and auth failures are terminal. ``sleep`` and ``clock``
    are injectable so retry schedules can be checked without waiting.
    """

    concurrent = True

    def __init__(
        self,
        config: BackendConfig,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.perf_counter,
        env: Mapping[str, str] | None = None,
    ):
        self.config = config
        self.adapter = ADAPTERS[config.vendor]()
        self.identity = f"live:{config.model_name}"
        self._sleep = sleep
        self._clock = clock
        self._env = os.environ if env is None else env
        self._client = httpx.Client(timeout=config.timeout_s, transport=transport)
        self._inflight = threading.BoundedSemaphore(config.max_inflight)
        self.attempts = 0
        self.delays: list[float] = []

    @property
    def _api_key(self) -> str | None:
        return self._env.get(self.config.api_key_env) or None

    def _redact(self, text: str) -> str:
        key = self._api_key
        return text.replace(key, REDACTED) if key else text

    def close(self) -> None:
        self._client.close()

    def generate_structured(self, request: GenerationRequest) -> Generation:
        start = self._clock()
        url = self.adapter.url(self.config)
        body = self.adapter.body(self.config, request)
        headers = {"Content-Type": "application/json", **self.adapter.headers(self._api_key)}
        attempt = 0
        while True:
            attempt += 1
            self.attempts += 1
            try:
                with self._inflight:
                    response = self._client.post(url, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                failure: BackendError = TransportError(self._redact(f"timeout calling {url}: {exc}"))
            except httpx.TransportError as exc:
                failure = TransportError(self._redact(f"transport failure calling {url}: {exc}"))
            else:
                status = response.status_code
                if status in (401, 403):
                    raise AuthError(f"{url} rejected credentials (HTTP {status})")
                if status == 429:
                    failure = RateLimited(f"{url} rate limited the request")
                elif status >= 500:
                    failure = TransportError(f"{url} answered HTTP {status}")
                elif status >= 400:
                    raise BackendError(self._redact(f"{url} answered HTTP {status}: {response.text[:200]}"))
                else:
                    tree, usage = self._decode(response, request.output_schema)
                    return Generation(tree, self._clock() - start, usage)

            if attempt > self.config.max_retries:
                logger.warning("%s giving up after %d attempts: %s", request.agent, attempt, failure)
                raise failure
            delay = self.config.backoff_delay(attempt)
            self.delays.append(delay)
            logger.info("%s attempt %d failed (%s); retrying in %.1fs", request.agent, attempt, failure, delay)
            self._sleep(delay)

    def _decode(self, response: httpx.Response, schema: Mapping[str, Any]) -> tuple[Any, Any]:
        try:
            payload = response.json()
        except json.JSONDecodeError:
            raise SchemaViolation("response body is not JSON", response.text[:200]) from None
        tree, usage = self.adapter.parse(payload)
        _validate_against(schema, tree)
        return tree, usage


def _validate_against(schema: Mapping[str, Any], tree: Any) -> None:
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(tree), key=str)
    if errors:
        raise SchemaViolation(f"response violates schema: {errors[0].message}", tree)


def record_fixture(
    root: str | Path,
    scenario_id: str,
    agent_name: str,
    request: GenerationRequest,
    response: Generation | Any,
) -> Path:
    """Persist a response at the replay layout path, replacing any old one atomically."""
    path = fixture_path(root, scenario_id, agent_name)
    generation = response if isinstance(response, Generation) else Generation(response, 0.0)
    record = {
        "agent": agent_name,
        "scenario_id": scenario_id,
        "prompt_sha256": request.prompt_sha256,
        "response": generation.tree,
        "token_usage": dict(generation.token_usage) if generation.token_usage else None,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(canonical_dumps(record))
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
    except OSError as exc:
        raise FixtureIoError(f"could not record fixture {path}: {exc}") from exc
    return path


class RecordingBackend:
    """Wraps a backend and records every successful response for later replay."""

    def __init__(self, inner, root: str | Path):
        self.inner = inner
        self.root = Path(root)
        self.identity = inner.identity
        self.concurrent = inner.concurrent

    def generate_structured(self, request: GenerationRequest) -> Generation:
        generation = self.inner.generate_structured(request)
        record_fixture(self.root, request.scenario_id, request.agent, request, generation)
        return generation
