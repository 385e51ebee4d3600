"""Executes the factorial matrix and writes the append-only outcome log."""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Any

from routebench import SCHEMA_VERSIONS
from routebench.control_schema import ControlRecord, FailureClass, ParseFailure, RouteLabel
from routebench.gateway import BackendResponse, Gateway, GatewayError, RequestContext
from routebench.pool import TaskPrompt, judge_state_retention, validate_pool
from routebench.profiles import ComboSpec, MatrixConfig, assemble_request, enumerate_matrix, realize

logger = logging.getLogger(__name__)

LOG_SCHEMA_VERSION = SCHEMA_VERSIONS["outcome_log"]


class LogError(ValueError):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


@dataclass
class RequestOutcome:
    mode: str
    backend: str
    constraint: str
    transport: str
    combo_index: int
    request_index: int
    prompt_id: str
    stratum: str
    ground_truth_route: RouteLabel
    state_sensitive: bool
    failure_class: FailureClass
    record: ControlRecord | None = None
    route_correct: bool | None = None
    state_retained: bool | None = None
    latency_ms: float | None = None
    prompt_tokens: int = 0
    completion_tokens: int = 0
    attempt_count: int = 1
    aborted: bool = False
    timestamp: str = field(default_factory=_now)

    def __post_init__(self) -> None:
        self.ground_truth_route = RouteLabel(self.ground_truth_route)
        self.failure_class = FailureClass(self.failure_class)
        ok = self.failure_class is FailureClass.OK
        if ok != (self.record is not None):
            raise ValueError("record must be present exactly when failure_class is ok")
        if not ok and self.route_correct is not None:
            raise ValueError("route_correct must be absent on failed rows")
        if ok and self.route_correct != (self.record.route == self.ground_truth_route):
            raise ValueError("route_correct disagrees with record")
        if (self.state_retained is not None) != (ok and self.state_sensitive):
            raise ValueError("state_retained present iff state-sensitive and ok")

    @property
    def cell(self) -> tuple[str, str]:
        return (self.backend, self.mode)

    @property
    def combo_key(self) -> tuple[str, str, str, str]:
        return (self.mode, self.backend, self.constraint, self.transport)

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "outcome",
            "combo_index": self.combo_index,
            "mode": self.mode,
            "backend": self.backend,
            "constraint": self.constraint,
            "transport": self.transport,
            "request_index": self.request_index,
            "prompt_id": self.prompt_id,
            "stratum": self.stratum,
            "ground_truth_route": self.ground_truth_route.value,
            "state_sensitive": self.state_sensitive,
            "failure_class": self.failure_class.value,
            "record": self.record.to_dict() if self.record else None,
            "route_correct": self.route_correct,
            "state_retained": self.state_retained,
            "latency_ms": self.latency_ms,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "attempt_count": self.attempt_count,
            "aborted": self.aborted,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RequestOutcome:
        data = {k: v for k, v in data.items() if k != "kind"}
        if data.get("record") is not None:
            data["record"] = ControlRecord.from_dict(data["record"])
        return cls(**data)


def outcome_from_response(combo: ComboSpec, combo_index: int, request_index: int,
                          prompt: TaskPrompt, resp: BackendResponse) -> RequestOutcome:
    record = None
    failure = resp.failure
    if failure is FailureClass.OK:
        try:
            record = realize(combo, resp.raw_text)
        except ParseFailure as exc:
            failure = exc.failure_class
    ok = record is not None
    return RequestOutcome(
        mode=combo.mode, backend=combo.backend_id, constraint=combo.constraint,
        transport=combo.transport, combo_index=combo_index, request_index=request_index,
        prompt_id=prompt.id, stratum=prompt.stratum,
        ground_truth_route=prompt.ground_truth_route, state_sensitive=prompt.state_sensitive,
        failure_class=failure, record=record,
        route_correct=(record.route == prompt.ground_truth_route) if ok else None,
        state_retained=judge_state_retention(prompt, record) if ok and prompt.state_sensitive else None,
        latency_ms=resp.latency_ms, prompt_tokens=resp.prompt_tokens,
        completion_tokens=resp.completion_tokens, attempt_count=resp.attempt_count,
    )


def aborted_outcome(combo: ComboSpec, combo_index: int, request_index: int,
                    prompt: TaskPrompt) -> RequestOutcome:
    return RequestOutcome(
        mode=combo.mode, backend=combo.backend_id, constraint=combo.constraint,
        transport=combo.transport, combo_index=combo_index, request_index=request_index,
        prompt_id=prompt.id, stratum=prompt.stratum,
        ground_truth_route=prompt.ground_truth_route, state_sensitive=prompt.state_sensitive,
        failure_class=FailureClass.TRANSPORT_ERROR, attempt_count=0, aborted=True,
    )


def make_header(config: MatrixConfig, seed: int, pool_size: int, gateway_kind: str) -> dict[str, Any]:
    return {
        "kind": "header",
        "schema_version": LOG_SCHEMA_VERSION,
        "config_hash": config.config_hash(),
        "seed": seed,
        "gateway": gateway_kind,
        "pool_size": pool_size,
        "config": config.to_dict(),
        "timestamp": _now(),
    }


def _dumps(obj: dict[str, Any]) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n"


def prompt_strata(pool: list[TaskPrompt]) -> list[tuple[str, int, int]]:
    """Group prompts by (ground-truth route, state sensitivity) for stratified simulation."""
    groups: dict[str, list[int]] = {}
    for i, p in enumerate(pool):
        groups.setdefault(f"{p.ground_truth_route.value}/{int(p.state_sensitive)}", []).append(i)
    out: list[tuple[str, int, int]] = [("", 0, 0)] * len(pool)
    for key, members in groups.items():
        for pos, i in enumerate(members):
            out[i] = (key, pos, len(members))
    return out


def run_matrix(config: MatrixConfig, pool: list[TaskPrompt], gateway: Gateway, seed: int = 0, *,
               out: IO[str] | None = None, workers: int = 1, gateway_kind: str = "simulated",
               on_combo: Callable[[ComboSpec, list[RequestOutcome]], None] | None = None,
               ) -> list[RequestOutcome]:
    """Run every combo over the whole pool; rows come back in (combo, prompt) order.

    Requests may execute concurrently, but rows are written by this thread
    only, in deterministic order.
    """
    validate_pool(pool, config.requests_per_combo)
    combos = enumerate_matrix(config)
    strata = prompt_strata(pool)
    if out is not None:
        out.write(_dumps(make_header(config, seed, len(pool), gateway_kind)))

    def call(combo: ComboSpec, idx: int, prompt: TaskPrompt) -> BackendResponse:
        payload = assemble_request(combo, prompt, config)
        return gateway.complete(payload, RequestContext(combo, prompt, idx, strata[idx]))

    rows: list[RequestOutcome] = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool_exec:
        for ci, combo in enumerate(combos):
            futures = [pool_exec.submit(call, combo, ri, p) for ri, p in enumerate(pool)]
            try:
                combo_rows = [outcome_from_response(combo, ci, ri, p, f.result())
                              for ri, (p, f) in enumerate(zip(pool, futures))]
            except GatewayError as exc:
                logger.error("combo %s aborted: %s", combo.label(), exc)
                for f in futures:
                    f.cancel()
                combo_rows = [aborted_outcome(combo, ci, ri, p) for ri, p in enumerate(pool)]
            if out is not None:
                out.writelines(_dumps(r.to_dict()) for r in combo_rows)
                out.flush()
            rows.extend(combo_rows)
            if on_combo is not None:
                on_combo(combo, combo_rows)
    return rows


def read_log(path: str | Path) -> tuple[dict[str, Any], list[RequestOutcome]]:
    """Load an outcome log; corrupt rows are reported with their line numbers."""
    header = None
    rows = []
    errors = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if obj.get("kind") == "header":
                    if header is not None:
                        raise ValueError("second header")
                    header = obj
                else:
                    rows.append(RequestOutcome.from_dict(obj))
            except (ValueError, KeyError, TypeError) as exc:
                errors.append(f"line {lineno}: {exc}")
    if errors:
        raise LogError("corrupt outcome log:\n  " + "\n  ".join(errors[:20]))
    if header is None:
        raise LogError("outcome log has no header row")
    return header, rows


def iter_masked_lines(path: str | Path) -> Iterator[str]:
    """Log lines with timestamps removed, for byte-level comparisons."""
    with open(path) as fh:
        for line in fh:
            obj = json.loads(line)
            obj.pop("timestamp", None)
            yield _dumps(obj)
