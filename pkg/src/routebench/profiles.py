"""Runtime packages (burden profiles), the factorial matrix and request assembly."""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from string import Template
from typing import TYPE_CHECKING, Any

from routebench.compact_codec import GRAMMAR, decode_compact
from routebench.control_schema import ControlRecord, RouteLabel, parse_control_record

if TYPE_CHECKING:
    from routebench.pool import TaskPrompt

SMALL_BUDGET = 64
RELAXED_BUDGET = 256
UNLIMITED_CAP = 1024

MODES = ("MJ", "SJ", "MJS", "MCLR")
BACKENDS = ("gemini", "llama", "openai")
CONSTRAINTS = ("limited", "unlimited")
TRANSPORTS = ("non_stream", "stream")

FACTORS = ("mode", "backend", "constraint", "transport")


class Serialization(str, Enum):
    FINAL_JSON = "final_json"
    COMPACT_CODE = "compact_code"


class RealizationLocus(str, Enum):
    MODEL = "model"
    LOCAL_RECONSTRUCTION = "local_reconstruction"


@dataclass(frozen=True)
class BurdenProfile:
    mode_name: str
    serialization: Serialization
    realization_locus: RealizationLocus
    output_token_budget: int
    prompt_template_id: str

    def __post_init__(self) -> None:
        compact = self.serialization is Serialization.COMPACT_CODE
        local = self.realization_locus is RealizationLocus.LOCAL_RECONSTRUCTION
        if compact != local:
            raise ValueError(f"{self.mode_name}: compact serialization requires local reconstruction")
        if self.output_token_budget <= 0:
            raise ValueError(f"{self.mode_name}: output_token_budget must be positive")


def default_profiles(small: int = SMALL_BUDGET, relaxed: int = RELAXED_BUDGET) -> dict[str, BurdenProfile]:
    json_pkg = dict(serialization=Serialization.FINAL_JSON,
                    realization_locus=RealizationLocus.MODEL,
                    prompt_template_id="json_v1")
    return {
        "MJ": BurdenProfile("MJ", output_token_budget=small, **json_pkg),
        "SJ": BurdenProfile("SJ", output_token_budget=relaxed, **json_pkg),
        # the "S" is a historical label; transport is the separate overlay factor
        "MJS": BurdenProfile("MJS", output_token_budget=relaxed, **json_pkg),
        "MCLR": BurdenProfile(
            "MCLR",
            serialization=Serialization.COMPACT_CODE,
            realization_locus=RealizationLocus.LOCAL_RECONSTRUCTION,
            output_token_budget=small,
            prompt_template_id="compact_v1",
        ),
    }


@dataclass(frozen=True)
class ComboSpec:
    profile: BurdenProfile
    backend_id: str
    constraint: str
    transport: str

    @property
    def mode(self) -> str:
        return self.profile.mode_name

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.mode, self.backend_id, self.constraint, self.transport)

    @property
    def content_key(self) -> tuple[str, str, str]:
        """Identity of the package as the model sees it (transport excluded)."""
        return (self.mode, self.backend_id, self.constraint)

    def label(self) -> str:
        return "/".join(self.key)

    def to_dict(self) -> dict[str, str]:
        return dict(zip(FACTORS, self.key))


@dataclass
class MatrixConfig:
    modes: list[str] = field(default_factory=lambda: list(MODES))
    backends: list[str] = field(default_factory=lambda: list(BACKENDS))
    constraints: list[str] = field(default_factory=lambda: list(CONSTRAINTS))
    transports: list[str] = field(default_factory=lambda: list(TRANSPORTS))
    requests_per_combo: int = 324
    small_budget: int = SMALL_BUDGET
    relaxed_budget: int = RELAXED_BUDGET
    unlimited_cap: int = UNLIMITED_CAP

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MatrixConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown matrix config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> MatrixConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def profiles(self) -> dict[str, BurdenProfile]:
        return default_profiles(self.small_budget, self.relaxed_budget)

    def filtered(self, **levels: list[str]) -> MatrixConfig:
        """Restrict factor levels, e.g. ``filtered(backends=["gemini"])``."""
        for name, keep in levels.items():
            unknown = set(keep) - set(getattr(self, name))
            if unknown:
                raise ValueError(f"filter levels {sorted(unknown)} not in {name}")
        return replace(self, **{k: [lvl for lvl in getattr(self, k) if lvl in v]
                                for k, v in levels.items()})


def enumerate_matrix(config: MatrixConfig) -> list[ComboSpec]:
    """All combos in lexicographic (mode, backend, constraint, transport) order."""
    for name in ("modes", "backends", "constraints", "transports"):
        if not getattr(config, name):
            raise ValueError(f"factor {name!r} has no levels")
    profiles = config.profiles()
    missing = [m for m in config.modes if m not in profiles]
    if missing:
        raise ValueError(f"no burden profile for modes {missing}")
    return [
        ComboSpec(profiles[m], b, c, t)
        for m, b, c, t in itertools.product(
            config.modes, config.backends, config.constraints, config.transports)
    ]


def load_template(template_id: str, part: str) -> Template:
    name = f"{template_id}.{part}.txt"
    try:
        text = resources.files("routebench.data").joinpath("templates", name).read_text()
    except FileNotFoundError:
        raise KeyError(f"unknown template id {template_id!r}") from None
    return Template(text.rstrip("\n"))


@dataclass(frozen=True)
class RequestPayload:
    messages: tuple[dict[str, str], ...]
    max_tokens: int
    stream: bool

    def body(self, model: str | None = None) -> dict[str, Any]:
        """OpenAI-compatible chat-completions request body."""
        out: dict[str, Any] = {}
        if model is not None:
            out["model"] = model
        out["messages"] = [dict(m) for m in self.messages]
        out["max_tokens"] = self.max_tokens
        out["stream"] = self.stream
        out["temperature"] = 0
        return out

    def to_json(self) -> str:
        return json.dumps(self.body(), sort_keys=True, ensure_ascii=False, indent=2) + "\n"


def max_tokens_for(combo: ComboSpec, config: MatrixConfig | None = None) -> int:
    cap = config.unlimited_cap if config else UNLIMITED_CAP
    if combo.constraint == "limited":
        return combo.profile.output_token_budget
    if combo.constraint == "unlimited":
        return cap
    raise ValueError(f"unknown constraint {combo.constraint!r}")


def assemble_request(combo: ComboSpec, prompt: TaskPrompt | str,
                     config: MatrixConfig | None = None) -> RequestPayload:
    text = prompt if isinstance(prompt, str) else prompt.text
    fills = {
        "route_labels": "{" + ", ".join(RouteLabel.values()) + "}",
        "grammar": GRAMMAR,
        "request": text,
    }
    tid = combo.profile.prompt_template_id
    system = load_template(tid, "system").substitute(fills)
    user = load_template(tid, "user").substitute(fills)
    if combo.transport not in TRANSPORTS:
        raise ValueError(f"unknown transport {combo.transport!r}")
    return RequestPayload(
        messages=({"role": "system", "content": system}, {"role": "user", "content": user}),
        max_tokens=max_tokens_for(combo, config),
        stream=combo.transport == "stream",
    )


def realize(combo: ComboSpec, raw_output: str) -> ControlRecord:
    """Turn fully assembled model output into a record, by the package's serialization.

    Raises ParseFailure with the failure class on error.
    """
    if combo.profile.serialization is Serialization.COMPACT_CODE:
        return decode_compact(raw_output)
    return parse_control_record(raw_output)
