"""Routing control record: types, strict validation and failure taxonomy."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any

REASON_MAX_CHARS = 512
FIELD_NAMES = ("route", "confidence", "memory", "tool", "reason")


class RouteLabel(str, Enum):
    CHAT = "chat"
    TASK = "task"
    DEV = "dev"
    DOC = "doc"

    @classmethod
    def values(cls) -> tuple[str, ...]:
        return tuple(r.value for r in cls)


class FailureClass(str, Enum):
    OK = "ok"
    JSON_PARSE_ERROR = "json_parse_error"
    SCHEMA_INVALID = "schema_invalid"
    HTTP_400 = "http_400"
    RATE_LIMITED = "rate_limited"
    TIMEOUT = "timeout"
    TRANSPORT_ERROR = "transport_error"


@dataclass(frozen=True)
class ControlRecord:
    route: RouteLabel
    confidence: float
    memory: bool
    tool: bool
    reason: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "route", RouteLabel(self.route))
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence!r} outside [0, 1]")
        if not self.reason.strip():
            raise ValueError("reason must be non-empty")
        if len(self.reason) > REASON_MAX_CHARS:
            object.__setattr__(self, "reason", self.reason[:REASON_MAX_CHARS])

    def to_dict(self) -> dict[str, Any]:
        return {
            "route": self.route.value,
            "confidence": self.confidence,
            "memory": self.memory,
            "tool": self.tool,
            "reason": self.reason,
        }

    def to_json(self) -> str:
        """Canonical serialization (fixed key order, no whitespace)."""
        return json.dumps(self.to_dict(), separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ControlRecord:
        return cls(
            route=RouteLabel(data["route"]),
            confidence=float(data["confidence"]),
            memory=bool(data["memory"]),
            tool=bool(data["tool"]),
            reason=str(data["reason"]),
        )


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


class ParseFailure(Exception):
    """Raw model output could not be realized into a ControlRecord."""

    def __init__(self, failure_class: FailureClass, detail: str,
                 violations: list[Violation] | None = None):
        super().__init__(f"{failure_class.value}: {detail}")
        self.failure_class = failure_class
        self.detail = detail
        self.violations = violations or []


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def validate_schema(candidate: Any) -> list[Violation]:
    """Return every schema violation of ``candidate``; an empty list means valid."""
    if not isinstance(candidate, dict):
        return [Violation(".", f"expected object, got {type(candidate).__name__}")]

    violations: list[Violation] = []
    for name in FIELD_NAMES:
        if name not in candidate:
            violations.append(Violation(f".{name}", "absent"))

    for key in candidate:
        if key not in FIELD_NAMES:
            violations.append(Violation(f".{key}", "unexpected field"))

    if "route" in candidate:
        route = candidate["route"]
        if not isinstance(route, str):
            violations.append(Violation(".route", "expected string"))
        elif route not in RouteLabel.values():
            allowed = ",".join(RouteLabel.values())
            violations.append(Violation(".route", f"{route!r} not in {{{allowed}}}"))

    if "confidence" in candidate:
        conf = candidate["confidence"]
        if not _is_number(conf):
            violations.append(Violation(".confidence", "expected number"))
        elif not math.isfinite(conf) or not 0.0 <= conf <= 1.0:
            violations.append(Violation(".confidence", f"{conf!r} outside [0, 1]"))

    for flag in ("memory", "tool"):
        if flag in candidate and not isinstance(candidate[flag], bool):
            violations.append(Violation(f".{flag}", "expected boolean"))

    if "reason" in candidate:
        reason = candidate["reason"]
        if not isinstance(reason, str):
            violations.append(Violation(".reason", "expected string"))
        elif not reason.strip():
            violations.append(Violation(".reason", "empty"))

    return violations


def _reject_constant(token: str) -> Any:
    raise ValueError(f"non-standard JSON constant {token}")


_DECODER = json.JSONDecoder(parse_constant=_reject_constant)


def extract_json_value(raw: str) -> Any:
    """Decode ``raw`` as JSON, falling back to the first ``{...}`` object in prose.

    Raises ParseFailure(json_parse_error) when nothing decodes.
    """
    text = raw.strip()
    try:
        value, end = _DECODER.raw_decode(text)
        if end == len(text):
            return value
    except ValueError:
        pass

    start = text.find("{")
    if start < 0:
        raise ParseFailure(FailureClass.JSON_PARSE_ERROR, "no JSON object found")
    try:
        value, _ = _DECODER.raw_decode(text, start)
    except ValueError as exc:
        raise ParseFailure(FailureClass.JSON_PARSE_ERROR, f"malformed JSON object: {exc}") from None
    return value


def parse_control_record(raw: str) -> ControlRecord:
    """Parse a complete model output into a validated ControlRecord.

    Syntax is checked before the schema, so an input is never both a parse
    error and schema-invalid.
    """
    value = extract_json_value(raw)
    violations = validate_schema(value)
    if violations:
        detail = "; ".join(str(v) for v in violations)
        raise ParseFailure(FailureClass.SCHEMA_INVALID, detail, violations)
    return ControlRecord(
        route=RouteLabel(value["route"]),
        confidence=float(value["confidence"]),
        memory=value["memory"],
        tool=value["tool"],
        reason=value["reason"],
    )


def classify(raw: str) -> FailureClass:
    """Failure class of ``raw`` under the JSON realization path."""
    try:
        parse_control_record(raw)
    except ParseFailure as exc:
        return exc.failure_class
    return FailureClass.OK
