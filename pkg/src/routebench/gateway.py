"""Backend adapters: OpenAI-compatible HTTP backends and a deterministic simulator.

Both adapters return a :class:`BackendResponse` whose ``latency_ms`` is the
full-response time; streamed chunks never stop the clock.
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import math
import os
import threading
import time
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import httpx
import numpy as np

from routebench.compact_codec import emit_compact
from routebench.control_schema import ControlRecord, FailureClass, RouteLabel
from routebench.pool import TaskPrompt
from routebench.profiles import ComboSpec, RequestPayload, Serialization

logger = logging.getLogger(__name__)

ROUTES = tuple(RouteLabel)
DEFAULT_TIMEOUT_S = 30.0


class GatewayError(RuntimeError):
    """Hard failure: the adapter cannot serve the combo at all."""


@dataclass
class BackendResponse:
    raw_text: str
    latency_ms: float
    prompt_tokens: int
    completion_tokens: int
    http_status: int | None = None
    failure: FailureClass = FailureClass.OK
    attempt_count: int = 1


@dataclass(frozen=True)
class RequestContext:
    """What the runner knows about a request; HTTP backends ignore it."""

    combo: ComboSpec
    prompt: TaskPrompt
    request_index: int
    # (group id, position within group, group size) for stratified simulation
    stratum: tuple[str, int, int] | None = None


def estimate_tokens(text: str) -> int:
    """Local token estimate (about four characters per token)."""
    return max(1, math.ceil(len(text) / 4)) if text else 0


def payload_prompt_tokens(payload: RequestPayload) -> int:
    return sum(estimate_tokens(m["content"]) + 4 for m in payload.messages)


# --------------------------------------------------------------------- SSE


def iter_sse_data(lines: Iterable[str]) -> Iterator[dict[str, Any]]:
    """Yield decoded ``data:`` JSON events until ``data: [DONE]``."""
    for line in lines:
        line = line.strip()
        if not line or line.startswith(":") or not line.startswith("data:"):
            continue
        data = line[len("data:"):].strip()
        if data == "[DONE]":
            return
        yield json.loads(data)


def assemble_stream(lines: Iterable[str]) -> tuple[str, dict[str, int] | None]:
    """Concatenate content deltas in arrival order; also return usage if sent."""
    parts: list[str] = []
    usage = None
    for event in iter_sse_data(lines):
        for choice in event.get("choices") or ():
            delta = choice.get("delta") or {}
            content = delta.get("content")
            if content:
                parts.append(content)
        if event.get("usage"):
            usage = event["usage"]
    return "".join(parts), usage


def sse_lines(text: str, chunk_chars: int = 8, usage: dict[str, int] | None = None) -> list[str]:
    """Encode ``text`` as an SSE chunk stream (used by the simulator and tests)."""
    out = []
    for i in range(0, len(text), chunk_chars):
        event = {"choices": [{"index": 0, "delta": {"content": text[i:i + chunk_chars]}}]}
        out.append("data: " + json.dumps(event))
        out.append("")
    if usage is not None:
        out.append("data: " + json.dumps({"choices": [], "usage": usage}))
        out.append("")
    out.append("data: [DONE]")
    return out


# -------------------------------------------------------------------- HTTP


def classify_status(status: int) -> FailureClass:
    if status < 400:
        return FailureClass.OK
    if status == 400:
        return FailureClass.HTTP_400
    if status == 429:
        return FailureClass.RATE_LIMITED
    if status in (408, 504):
        return FailureClass.TIMEOUT
    return FailureClass.TRANSPORT_ERROR


@dataclass
class HTTPBackend:
    """OpenAI-compatible ``POST /v1/chat/completions`` adapter."""

    base_url: str
    model: str
    api_key: str | None = None
    path: str = "/v1/chat/completions"
    timeout_s: float = DEFAULT_TIMEOUT_S
    max_concurrency: int = 4
    max_attempts: int = 3
    backoff_s: float = 1.0
    transport: httpx.BaseTransport | None = None
    sleep: Callable[[float], None] = time.sleep
    clock: Callable[[], float] = time.perf_counter
    _client: httpx.Client = field(init=False, repr=False)
    _slots: threading.BoundedSemaphore = field(init=False, repr=False)

    def __post_init__(self) -> None:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        self._client = httpx.Client(base_url=self.base_url, headers=headers,
                                    timeout=self.timeout_s, transport=self.transport)
        self._slots = threading.BoundedSemaphore(self.max_concurrency)

    @classmethod
    def from_config(cls, cfg: dict[str, Any]) -> HTTPBackend:
        cfg = dict(cfg)
        key_env = cfg.pop("api_key_env", None)
        if key_env and "api_key" not in cfg:
            cfg["api_key"] = os.environ.get(key_env)
        return cls(**cfg)

    def close(self) -> None:
        self._client.close()

    def complete(self, payload: RequestPayload, ctx: RequestContext | None = None) -> BackendResponse:
        """Send one request, retrying only on rate limiting (bounded backoff)."""
        start = self.clock()
        attempt = 0
        while True:
            attempt += 1
            with self._slots:
                resp = self._attempt(payload, start)
            resp.attempt_count = attempt
            logger.info("%s attempt %d -> %s (status=%s)", self.model, attempt,
                        resp.failure.value, resp.http_status)
            if resp.failure is not FailureClass.RATE_LIMITED or attempt >= self.max_attempts:
                return resp
            self.sleep(self.backoff_s * 2 ** (attempt - 1))

    def _attempt(self, payload: RequestPayload, start: float) -> BackendResponse:
        body = payload.body(self.model)

        def failed(failure: FailureClass, status: int | None = None) -> BackendResponse:
            return BackendResponse("", (self.clock() - start) * 1000.0, 0, 0, status, failure)

        try:
            if payload.stream:
                with self._client.stream("POST", self.path, json=body) as r:
                    if r.status_code >= 400:
                        r.read()
                        return failed(classify_status(r.status_code), r.status_code)
                    lines = self._deadline_lines(r.iter_lines(), start)
                    text, usage = assemble_stream(lines)
                    status = r.status_code
            else:
                r = self._client.post(self.path, json=body)
                if r.status_code >= 400:
                    return failed(classify_status(r.status_code), r.status_code)
                data = r.json()
                text = (data["choices"][0]["message"].get("content") or "")
                usage = data.get("usage")
                status = r.status_code
        except httpx.TimeoutException:
            return failed(FailureClass.TIMEOUT)
        except (httpx.TransportError, httpx.StreamError, json.JSONDecodeError, KeyError, IndexError):
            return failed(FailureClass.TRANSPORT_ERROR)

        latency_ms = (self.clock() - start) * 1000.0
        if usage and "prompt_tokens" in usage:
            prompt_tokens = int(usage["prompt_tokens"])
            completion_tokens = int(usage.get("completion_tokens", 0))
        else:
            prompt_tokens = payload_prompt_tokens(payload)
            completion_tokens = estimate_tokens(text)
        return BackendResponse(text, latency_ms, prompt_tokens, completion_tokens, status)

    def _deadline_lines(self, lines: Iterable[str], start: float) -> Iterator[str]:
        for line in lines:
            if self.clock() - start > self.timeout_s:
                raise httpx.ReadTimeout("stream exceeded deadline")
            yield line


# --------------------------------------------------------------- simulator


@dataclass(frozen=True)
class SimulatorProfile:
    fc_rate: float
    route_confusion: tuple[tuple[float, ...], ...]
    sr_success: float
    latency_median_ms: float
    latency_sigma: float
    tokens_per_request: int
    parse_error_share: float = 523 / 623
    http_400_rate: float = 0.0
    rate_limit_rate: float = 0.0

    def __post_init__(self) -> None:
        for name in ("fc_rate", "sr_success", "parse_error_share", "http_400_rate", "rate_limit_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        m = np.asarray(self.route_confusion, dtype=float)
        if m.shape != (4, 4) or (m < 0).any():
            raise ValueError("route_confusion must be a non-negative 4x4 matrix")
        if not np.allclose(m.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise ValueError("route_confusion rows must sum to 1")
        if self.latency_median_ms < 0 or self.latency_sigma < 0:
            raise ValueError("latency parameters must be non-negative")
        if self.tokens_per_request <= 0:
            raise ValueError("tokens_per_request must be positive")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SimulatorProfile:
        data = dict(data)
        data["route_confusion"] = tuple(tuple(float(x) for x in row) for row in data["route_confusion"])
        latency = data.pop("latency", None)
        if latency is not None:
            data["latency_median_ms"] = latency["median_ms"]
            data["latency_sigma"] = latency["sigma"]
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return {
            "fc_rate": self.fc_rate,
            "route_confusion": [list(r) for r in self.route_confusion],
            "sr_success": self.sr_success,
            "latency": {"median_ms": self.latency_median_ms, "sigma": self.latency_sigma},
            "tokens_per_request": self.tokens_per_request,
            "parse_error_share": self.parse_error_share,
            "http_400_rate": self.http_400_rate,
            "rate_limit_rate": self.rate_limit_rate,
        }


ProfileTable = dict[tuple[str, str], SimulatorProfile]


def load_simulator_profiles(path: str | Path | None = None) -> ProfileTable:
    """Read a profile document keyed by backend_id then mode_name."""
    if path is None:
        text = resources.files("routebench.data").joinpath("simulator_profiles.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    doc.pop("_meta", None)
    return {(b, m): SimulatorProfile.from_dict(p) for b, modes in doc.items() for m, p in modes.items()}


def dump_simulator_profiles(profiles: ProfileTable, meta: dict[str, Any] | None = None) -> str:
    doc: dict[str, Any] = {"_meta": meta} if meta else {}
    for (backend, mode), prof in profiles.items():
        doc.setdefault(backend, {})[mode] = prof.to_dict()
    return json.dumps(doc, indent=2) + "\n"


def identity_confusion(accuracy: float = 1.0) -> tuple[tuple[float, ...], ...]:
    off = (1.0 - accuracy) / 3
    return tuple(tuple(accuracy if i == j else off for j in range(4)) for i in range(4))


def _key_words(*parts: object) -> list[int]:
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def _rng(seed: int, *parts: object) -> np.random.Generator:
    # counter-based: every draw is a pure function of (seed, key, index)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *_key_words(*parts)])))


@functools.lru_cache(maxsize=256)
def _strata(seed: int, content_key: tuple, group: str, n: int, dims: int) -> np.ndarray:
    """One random permutation of range(n) per uniform dimension (Latin hypercube rows)."""
    rng = _rng(seed, "strata", *content_key, group, n)
    return np.stack([rng.permutation(n) for _ in range(dims)], axis=1)


_UNIFORMS = 7

_REASONS = {
    RouteLabel.CHAT: "conversational request",
    RouteLabel.TASK: "personal task management",
    RouteLabel.DEV: "software debugging request",
    RouteLabel.DOC: "documentation lookup",
}
_TYPO_ROUTES = {RouteLabel.CHAT: "chitchat", RouteLabel.TASK: "tasks",
                RouteLabel.DEV: "develop", RouteLabel.DOC: "docs"}


@dataclass
class SimulatedBackend:
    """Deterministic backend driven by per-(backend, mode) behaviour profiles.

    Output content is keyed by (seed, mode, backend, constraint, request index);
    transport only changes the delivery path, and latency jitter is keyed by the
    full combo. When the context carries a stratum, each uniform is stratified
    across the prompts of that group (Latin hypercube), so per-combo rates sit
    close to the profile instead of carrying full binomial noise.
    """

    profiles: ProfileTable
    seed: int = 0
    chunk_chars: int = 8

    def complete(self, payload: RequestPayload, ctx: RequestContext) -> BackendResponse:
        combo = ctx.combo
        profile = self.profiles.get((combo.backend_id, combo.mode))
        if profile is None:
            raise GatewayError(f"no simulator profile for {combo.backend_id}/{combo.mode}")
        return self.simulate(payload, ctx, profile)

    def simulate(self, payload: RequestPayload, ctx: RequestContext,
                 profile: SimulatorProfile) -> BackendResponse:
        combo, prompt = ctx.combo, ctx.prompt
        rng = _rng(self.seed, "content", *combo.content_key, ctx.request_index)
        u = rng.random(_UNIFORMS)
        if ctx.stratum is not None:
            group, pos, n = ctx.stratum
            u = (_strata(self.seed, combo.content_key, group, n, _UNIFORMS)[pos] + u) / n
        u_infra, u_valid, u_kind, u_state, u_route, u_conf, u_mem = u.tolist()
        total_tokens = max(1, round(profile.tokens_per_request * (1 + 0.05 * float(rng.standard_normal()))))

        lat_rng = _rng(self.seed, "latency", *combo.key, ctx.request_index)
        latency = profile.latency_median_ms * math.exp(profile.latency_sigma * float(lat_rng.standard_normal()))

        if u_infra < profile.http_400_rate:
            return BackendResponse("", latency, 0, 0, 400, FailureClass.HTTP_400)
        if u_infra < profile.http_400_rate + profile.rate_limit_rate:
            return BackendResponse("", latency, 0, 0, 429, FailureClass.RATE_LIMITED)

        record = self._draw_record(profile, prompt, u_state, u_route, u_conf, u_mem)
        compact = combo.profile.serialization is Serialization.COMPACT_CODE
        text = emit_compact(record) if compact else record.to_json()
        if u_valid >= profile.fc_rate:
            text = self._corrupt(text, record, compact, parse_error=u_kind < profile.parse_error_share)

        completion = min(estimate_tokens(text), payload.max_tokens)
        prompt_tokens = max(0, total_tokens - completion)
        if payload.stream:
            usage = {"prompt_tokens": prompt_tokens, "completion_tokens": completion}
            text, got = assemble_stream(sse_lines(text, self.chunk_chars, usage))
            prompt_tokens, completion = got["prompt_tokens"], got["completion_tokens"]
        return BackendResponse(text, latency, prompt_tokens, completion, 200)

    @staticmethod
    def _draw_record(profile: SimulatorProfile, prompt: TaskPrompt, u_state: float,
                     u_route: float, u_conf: float, u_mem: float) -> ControlRecord:
        truth = ROUTES.index(prompt.ground_truth_route)
        row = np.cumsum(profile.route_confusion[truth])
        route = ROUTES[min(int(np.searchsorted(row, u_route, side="right")), 3)]
        memory = u_mem < 0.1
        expected = prompt.expected_state_behavior
        if prompt.state_sensitive and expected is not None:
            if u_state < profile.sr_success:
                route, memory = expected.route, expected.memory
            else:
                memory = not expected.memory
        confidence = (50 + int(u_conf * 50)) / 100
        return ControlRecord(route, confidence, memory, route in (RouteLabel.TASK, RouteLabel.DEV),
                             _REASONS[route])

    @staticmethod
    def _corrupt(text: str, record: ControlRecord, compact: bool, parse_error: bool) -> str:
        if parse_error:
            if compact:
                return f"The route is {record.route.value}, fairly confident."
            return text[: len(text) // 2]
        if compact:
            return text.replace(f"R={record.route.value}", f"R={_TYPO_ROUTES[record.route]}", 1)
        bad = record.to_dict()
        bad["route"] = _TYPO_ROUTES[record.route]
        return json.dumps(bad, separators=(",", ":"))


class Gateway:
    """Maps backend ids to adapters."""

    def __init__(self, backends: dict[str, Any] | None = None, default: Any = None):
        self.backends = dict(backends or {})
        self.default = default

    @classmethod
    def simulated(cls, profiles: ProfileTable | None = None, seed: int = 0) -> Gateway:
        return cls(default=SimulatedBackend(profiles if profiles is not None
                                            else load_simulator_profiles(), seed))

    @classmethod
    def live(cls, config: dict[str, dict[str, Any]]) -> Gateway:
        return cls({bid: HTTPBackend.from_config(cfg) for bid, cfg in config.items()})

    def backend(self, backend_id: str) -> Any:
        adapter = self.backends.get(backend_id, self.default)
        if adapter is None:
            raise GatewayError(f"no adapter configured for backend {backend_id!r}")
        return adapter

    def complete(self, payload: RequestPayload, ctx: RequestContext) -> BackendResponse:
        return self.backend(ctx.combo.backend_id).complete(payload, ctx)

    def close(self) -> None:
        for adapter in self.backends.values():
            close = getattr(adapter, "close", None)
            if close:
                close()
