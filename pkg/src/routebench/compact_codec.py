"""Compact line code emitted under the MCLR package and its local reconstruction.

Grammar (one line)::

    R=<route>;C=<int 0..100>;M=<0|1>;T=<0|1>;X=<free text>

Keys are case-insensitive and whitespace around ``;`` and ``=`` is ignored.
``X`` runs to the end of the line, so the reason may itself contain ``;``.
Only ``R`` is mandatory; the other fields take defaults at reconstruction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from routebench.control_schema import (
    ControlRecord,
    FailureClass,
    ParseFailure,
    RouteLabel,
    REASON_MAX_CHARS,
)

GRAMMAR = "R=<route>;C=<int 0..100>;M=<0|1>;T=<0|1>;X=<free text>"

DEFAULT_CONFIDENCE = 0.5
DEFAULT_REASON = "(compact)"

_KEYS = frozenset("RCMTX")
_SEGMENT = re.compile(r"\s*([A-Za-z])\s*=\s*")


@dataclass(frozen=True)
class CompactCode:
    route_token: str | None
    confidence_token: str | None = None
    memory_token: str | None = None
    tool_token: str | None = None
    reason_token: str | None = None


def _parse_line(line: str) -> dict[str, str] | None:
    """Split one line into key tokens, or None if it is not a grammar line."""
    fields: dict[str, str] = {}
    pos = 0
    text = line.rstrip()
    while pos < len(text):
        m = _SEGMENT.match(text, pos)
        if m is None:
            return None
        key = m.group(1).upper()
        if key not in _KEYS or key in fields:
            return None
        pos = m.end()
        if key == "X":
            fields[key] = text[pos:].strip()
            break
        end = text.find(";", pos)
        if end < 0:
            end = len(text)
        fields[key] = text[pos:end].strip()
        pos = end + 1
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return fields or None


def parse_compact(raw: str) -> CompactCode:
    """Find the first grammar line in ``raw`` and return its raw tokens.

    No grammar line at all is a ``json_parse_error``; a grammar line without
    an ``R`` field is ``schema_invalid``.
    """
    for line in raw.splitlines():
        fields = _parse_line(line)
        if fields is None:
            continue
        if not fields.get("R"):
            raise ParseFailure(FailureClass.SCHEMA_INVALID, "compact code missing R field")

        def opt(key: str) -> str | None:
            return fields.get(key) or None

        return CompactCode(
            route_token=fields["R"],
            confidence_token=opt("C"),
            memory_token=opt("M"),
            tool_token=opt("T"),
            reason_token=opt("X"),
        )
    raise ParseFailure(FailureClass.JSON_PARSE_ERROR, "no compact grammar line found")


def _flag(token: str | None, name: str) -> bool:
    if token is None:
        return False
    if token in ("0", "1"):
        return token == "1"
    raise ParseFailure(FailureClass.SCHEMA_INVALID, f"{name} token {token!r} is not 0 or 1")


def reconstruct(code: CompactCode) -> ControlRecord:
    """Deterministically expand a compact code into the full ControlRecord."""
    token = (code.route_token or "").strip().lower()
    if token not in RouteLabel.values():
        raise ParseFailure(FailureClass.SCHEMA_INVALID, f"unknown route token {code.route_token!r}")

    if code.confidence_token is None:
        confidence = DEFAULT_CONFIDENCE
    else:
        try:
            value = int(code.confidence_token)
        except ValueError:
            raise ParseFailure(
                FailureClass.SCHEMA_INVALID,
                f"C token {code.confidence_token!r} is not an integer",
            ) from None
        confidence = min(1.0, max(0.0, value / 100))

    reason = code.reason_token if code.reason_token else DEFAULT_REASON
    return ControlRecord(
        route=RouteLabel(token),
        confidence=confidence,
        memory=_flag(code.memory_token, "M"),
        tool=_flag(code.tool_token, "T"),
        reason=reason[:REASON_MAX_CHARS],
    )


def emit_compact(record: ControlRecord) -> str:
    """Inverse of parse+reconstruct for records whose confidence is on the 1/100 grid."""
    reason = " ".join(record.reason.split())
    return (
        f"R={record.route.value};C={round(record.confidence * 100)};"
        f"M={int(record.memory)};T={int(record.tool)};X={reason}"
    )


def decode_compact(raw: str) -> ControlRecord:
    return reconstruct(parse_compact(raw))
