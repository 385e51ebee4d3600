"""Stratified prompt pool ingestion and state-retention judging."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from routebench.control_schema import ControlRecord, RouteLabel

STRATA = ("simple", "complex", "edge")


class PoolError(ValueError):
    pass


@dataclass(frozen=True)
class StateExpectation:
    route: RouteLabel
    memory: bool


@dataclass(frozen=True)
class TaskPrompt:
    id: str
    text: str
    ground_truth_route: RouteLabel
    stratum: str
    state_sensitive: bool = False
    expected_state_behavior: StateExpectation | None = None

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TaskPrompt:
        expected = data.get("expected_state_behavior")
        return cls(
            id=str(data["id"]),
            text=data["text"],
            ground_truth_route=RouteLabel(data["ground_truth_route"]),
            stratum=data["stratum"],
            state_sensitive=bool(data.get("state_sensitive", False)),
            expected_state_behavior=(
                StateExpectation(RouteLabel(expected["route"]), bool(expected["memory"]))
                if expected else None
            ),
        )

    def to_dict(self) -> dict[str, Any]:
        exp = self.expected_state_behavior
        return {
            "id": self.id,
            "text": self.text,
            "ground_truth_route": self.ground_truth_route.value,
            "stratum": self.stratum,
            "state_sensitive": self.state_sensitive,
            "expected_state_behavior": (
                {"route": exp.route.value, "memory": exp.memory} if exp else None
            ),
        }


def _check_prompt(p: TaskPrompt, where: str) -> None:
    if p.stratum not in STRATA:
        raise PoolError(f"{where}: unknown stratum {p.stratum!r}")
    if not p.text.strip():
        raise PoolError(f"{where}: empty prompt text")
    if p.state_sensitive and p.expected_state_behavior is None:
        raise PoolError(f"{where}: state_sensitive prompt lacks expected_state_behavior")


def validate_pool(prompts: list[TaskPrompt], expected_size: int | None = 324) -> None:
    if not prompts:
        raise PoolError("prompt pool is empty")
    if expected_size is not None and len(prompts) != expected_size:
        raise PoolError(f"pool has {len(prompts)} prompts, config expects {expected_size}")
    ids = [p.id for p in prompts]
    if len(set(ids)) != len(ids):
        raise PoolError("duplicate prompt ids")
    present = {(p.stratum, p.ground_truth_route) for p in prompts}
    for stratum in STRATA:
        for route in RouteLabel:
            if (stratum, route) not in present:
                raise PoolError(f"coverage gap: no {route.value!r} prompts in stratum {stratum!r}")


def load_pool(path: str | Path | None = None, expected_size: int | None = 324) -> list[TaskPrompt]:
    """Read a JSONL pool (one TaskPrompt per line) and validate it.

    With ``path=None`` the shipped 324-prompt pool is loaded.
    """
    if path is None:
        text = resources.files("routebench.data").joinpath("prompt_pool.jsonl").read_text()
    else:
        text = Path(path).read_text()

    prompts = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            prompt = TaskPrompt.from_dict(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            raise PoolError(f"line {lineno}: malformed prompt row ({exc})") from None
        _check_prompt(prompt, f"line {lineno}")
        prompts.append(prompt)
    validate_pool(prompts, expected_size)
    return prompts


def judge_state_retention(prompt: TaskPrompt, record: ControlRecord) -> bool:
    """Rule check: the record keeps the expected route and memory flag."""
    expected = prompt.expected_state_behavior
    if expected is None:
        raise ValueError(f"prompt {prompt.id} is not state-sensitive")
    return record.route == expected.route and record.memory == expected.memory
