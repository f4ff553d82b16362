"""Registries of described experts and description-driven selection.

Diffuser experts stand for stylized generators, voice experts for voice
changers.  Selection is lexical (idf-weighted token overlap, deterministic)
or delegated to a language model with lexical fallback.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import cfgfile
from .errors import ContractViolation, UnknownEntryError, ValidationError
from .llm import DEFAULT_TIMEOUT, SelectionRequest, SerializedCall

KINDS = ("diffuser", "voice")
TAG_WEIGHT = 2.0
DESCRIPTION_WEIGHT = 1.0

_TOKEN_RE = re.compile(r"[^\W_]+")
_DATA_DIR = Path(__file__).with_name("data")


def tokenize(text: str) -> list[str]:
    """Lowercase, then split on anything that is not a letter or digit."""
    return _TOKEN_RE.findall(text.lower())


def parse_payload(text: str) -> dict[str, str]:
    """``"a=1; b=two"`` -> ``{"a": "1", "b": "two"}``."""
    out = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValidationError(f"payload entry {part!r} is not key=value")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def format_payload(payload: dict[str, str]) -> str:
    return "; ".join(f"{k}={v}" for k, v in payload.items())


@dataclass(frozen=True)
class Expert:
    id: str
    kind: str
    description: str
    tags: tuple[str, ...] = ()
    payload: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if not self.id or not self.id.strip():
            raise ContractViolation("expert id must be non-empty")
        if self.kind not in KINDS:
            raise ContractViolation(f"expert kind must be one of {KINDS}, got {self.kind!r}")
        object.__setattr__(self, "tags", tuple(t.strip().lower() for t in self.tags if t.strip()))
        object.__setattr__(self, "payload", dict(self.payload))

    @property
    def tag_tokens(self) -> set[str]:
        return {tok for tag in self.tags for tok in tokenize(tag)}

    @property
    def description_tokens(self) -> set[str]:
        return set(tokenize(self.description))

    def to_section(self) -> cfgfile.Section:
        return cfgfile.Section("expert", {
            "id": self.id,
            "kind": self.kind,
            "description": self.description,
            "tags": ", ".join(self.tags),
            "payload": format_payload(self.payload),
        })


@dataclass(frozen=True)
class Registry:
    kind: str
    experts: tuple[Expert, ...]

    def __post_init__(self):
        experts = tuple(self.experts)
        object.__setattr__(self, "experts", experts)
        if self.kind not in KINDS:
            raise ContractViolation(f"registry kind must be one of {KINDS}")
        if not experts:
            raise ContractViolation("registry must hold at least one expert")
        if any(e.kind != self.kind for e in experts):
            raise ContractViolation(f"every expert in a {self.kind} registry must have kind {self.kind}")
        ids = [e.id for e in experts]
        if len(set(ids)) != len(ids):
            raise ContractViolation("expert ids must be unique within a registry")

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.experts]

    def get(self, expert_id: str) -> Expert:
        for e in self.experts:
            if e.id == expert_id:
                return e
        raise UnknownEntryError(f"unknown {self.kind} id {expert_id!r}; available: {', '.join(self.ids)}")

    def idf(self) -> dict[str, float]:
        """Smoothed inverse document frequency, one document per expert."""
        n = len(self.experts)
        df = Counter()
        for e in self.experts:
            df.update(e.tag_tokens | e.description_tokens)
        return {tok: math.log((1 + n) / (1 + c)) + 1.0 for tok, c in df.items()}

    @classmethod
    def from_sections(cls, sections: Sequence[cfgfile.Section], kind: str | None = None) -> "Registry":
        experts = []
        for sec in sections:
            if sec.name != "expert":
                raise ValidationError(f"unexpected section [{sec.name}] in registry")
            extra = set(sec.values) - {"id", "kind", "description", "tags", "payload"}
            if extra:
                raise ValidationError(f"[expert] at line {sec.line} has unknown keys: {', '.join(sorted(extra))}")
            try:
                experts.append(Expert(sec.require("id"), sec.require("kind"), sec.get("description", ""),
                                      tuple(sec.get_list("tags")), parse_payload(sec.get("payload", ""))))
            except ContractViolation as exc:
                raise ValidationError(f"[expert] at line {sec.line}: {exc}") from None
        if not experts:
            raise ValidationError("registry file lists no [expert] blocks")
        kind = kind or experts[0].kind
        try:
            return cls(kind, tuple(experts))
        except ContractViolation as exc:
            raise ValidationError(str(exc)) from None

    @classmethod
    def load(cls, path, kind: str | None = None) -> "Registry":
        return cls.from_sections(cfgfile.load(path), kind)

    def dumps(self) -> str:
        return cfgfile.dump([e.to_section() for e in self.experts])


def default_registry(kind: str) -> Registry:
    if kind not in KINDS:
        raise ContractViolation(f"kind must be one of {KINDS}")
    return Registry.load(_DATA_DIR / f"{kind}s.cfg", kind)


def lexical_score(expert: Expert, description: str, idf: dict[str, float]) -> float:
    """Sum over description tokens (with repeats) of idf times match weight."""
    tags, words = expert.tag_tokens, expert.description_tokens
    total = 0.0
    for tok in tokenize(description):
        w = TAG_WEIGHT * (tok in tags) + DESCRIPTION_WEIGHT * (tok in words)
        if w:
            total += idf[tok] * w
    return total


def lexical_scores(registry: Registry, description: str) -> list[float]:
    idf = registry.idf()
    return [lexical_score(e, description, idf) for e in registry.experts]


@dataclass(frozen=True)
class Selection:
    expert: Expert
    selector: str
    fallback: bool = False
    reason: str = ""
    scores: tuple[float, ...] = ()

    @property
    def id(self) -> str:
        return self.expert.id


def _lexical(registry: Registry, description: str) -> tuple[Expert, tuple[float, ...]]:
    scores = lexical_scores(registry, description)
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))  # earliest wins ties
    return registry.experts[best], tuple(scores)


class LexicalSelector:
    name = "lexical"

    def __call__(self, registry: Registry, description: str) -> Selection:
        expert, scores = _lexical(registry, description)
        return Selection(expert, self.name, scores=scores)


SELECTION_SYSTEM = (
    "You route user requests to one expert from a fixed list. "
    "Reply with the id of the single best expert and nothing else."
)


def selection_request(registry: Registry, description: str) -> SelectionRequest:
    lines = [f"Experts ({registry.kind}):"]
    lines += [f"- {e.id}: {e.description}" for e in registry.experts]
    lines += ["", f"User description: {description}", "Answer with one id from the list."]
    return SelectionRequest(SELECTION_SYSTEM, "\n".join(lines), tuple(registry.ids))


def _match_id(reply, ids: Sequence[str]) -> str | None:
    if not isinstance(reply, str):
        return None
    text = reply.strip().strip("`'\". ")
    if text in ids:
        return text
    lowered = {i.lower(): i for i in ids}
    return lowered.get(text.lower())


class LLMSelector:
    """Selection by a language model; lexical choice on any failure."""

    name = "llm"

    def __init__(self, client, timeout: float | None = DEFAULT_TIMEOUT):
        self.client = client
        self._call = SerializedCall(timeout)

    def __call__(self, registry: Registry, description: str) -> Selection:
        lexical, scores = _lexical(registry, description)
        if self.client is None:
            return Selection(lexical, self.name, True, "no client configured", scores)
        request = selection_request(registry, description)
        try:
            reply = self._call(lambda: self.client.choose(request))
        except Exception as exc:
            return Selection(lexical, self.name, True, f"client error: {exc}", scores)
        chosen = _match_id(reply, registry.ids)
        if chosen is None:
            return Selection(lexical, self.name, True, f"reply {reply!r} is not a registry id", scores)
        return Selection(registry.get(chosen), self.name, False, "", scores)


def select(registry: Registry, description: str, selector=None) -> Selection:
    """Pick one expert for ``description``; ``selector`` defaults to lexical."""
    if not registry.experts:
        raise ContractViolation("registry must be non-empty")
    if selector is None or selector == "lexical":
        selector = LexicalSelector()
    elif isinstance(selector, str):
        raise ValidationError(f"unknown selector {selector!r}; pass 'lexical' or an LLMSelector")
    return selector(registry, description or "")
