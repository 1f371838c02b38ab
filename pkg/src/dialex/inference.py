"""Completion backends, prompt construction, and structured output parsing.

Both manager and expert responses use a line-oriented format:
one item per line, ``<name><TAB><value>``, with backslash escaping of tab,
newline, and backslash inside fields. Managers answer ``<type>\tyes|no``;
experts answer ``value\t<extracted>``. The format round-trips exactly, which
keeps parsing strict and testable.

A scripted mock backend (ordered match rules, first hit wins) makes the whole
pipeline runnable and deterministic without any model.
"""
from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import httpx

from .corpus import DomainSchema, EntityTypeDef
from .retriever import QueryParts, ScoredExample

EXPERT_VALUE_TAG = "value"


class ParseError(Exception):
    def __init__(self, message: str, raw: str):
        super().__init__(f"{message}; raw response: {raw!r}")
        self.raw = raw


class BackendError(Exception):
    pass


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    messages: tuple[tuple[str, str], ...]  # (role, text)
    temperature: float = 0.0
    max_tokens: int = 512

    def full_text(self) -> str:
        return "\n".join([self.system_text] + [t for _, t in self.messages])


class CompletionBackend(Protocol):
    name: str
    model: str

    def complete(self, prompt: PromptBundle) -> str: ...


# -- output format ------------------------------------------------------------

def escape_field(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def unescape_field(s: str) -> str:
    out = []
    i = 0
    while i < len(s):
        c = s[i]
        if c == "\\" and i + 1 < len(s):
            nxt = s[i + 1]
            if nxt == "t":
                out.append("\t")
            elif nxt == "n":
                out.append("\n")
            elif nxt == "\\":
                out.append("\\")
            else:
                out.append(nxt)
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def render_tagged_lines(pairs: Sequence[tuple[str, str]]) -> str:
    return "\n".join(f"{escape_field(n)}\t{escape_field(v)}" for n, v in pairs)


def parse_tagged_lines(raw: str) -> list[tuple[str, str]]:
    """Strict parse of the line format. Blank input yields []."""
    pairs = []
    for line in raw.splitlines():
        if not line.strip():
            continue
        if "\t" not in line:
            raise ParseError(f"line missing tab separator: {line!r}", raw)
        name, _, value = line.partition("\t")
        pairs.append((unescape_field(name.strip()), unescape_field(value)))
    return pairs


@dataclass(frozen=True)
class ManagerVerdict:
    judgments: dict[str, bool]
    empty_response: bool = False


def parse_manager_response(raw: str, expected_types: Sequence[str]) -> ManagerVerdict:
    """Parse per-type yes/no judgments. Types absent from the response default
    to false; undeclared type names are ignored; an empty response is all-false
    with the empty flag set."""
    pairs = parse_tagged_lines(raw)
    if not pairs:
        return ManagerVerdict({t: False for t in expected_types}, empty_response=True)
    judgments = {t: False for t in expected_types}
    for name, value in pairs:
        v = value.strip().lower()
        if v not in ("yes", "no"):
            raise ParseError(f"manager judgment for {name!r} is not yes/no: {value!r}", raw)
        if name in judgments:
            judgments[name] = v == "yes"
    return ManagerVerdict(judgments)


def parse_expert_response(raw: str) -> list[str]:
    """Extracted values in response order, duplicates collapsed keeping the
    first occurrence. Empty response means no extractable value."""
    values: list[str] = []
    seen: set[str] = set()
    for name, value in parse_tagged_lines(raw):
        if name != EXPERT_VALUE_TAG:
            raise ParseError(f"expected {EXPERT_VALUE_TAG!r} lines, got {name!r}", raw)
        if value not in seen:
            seen.add(value)
            values.append(value)
    return values


def render_expert_response(values: Sequence[str]) -> str:
    return render_tagged_lines([(EXPERT_VALUE_TAG, v) for v in values])


# -- prompt construction ------------------------------------------------------

def _dialogue_block(query: QueryParts) -> str:
    return (
        f"User messages: {query.all_user_text}\n"
        f"Assistant messages: {query.all_agent_text}\n"
        f"Latest user message: {query.last_user_text}"
    )


def build_manager_prompt(query: QueryParts, schema: DomainSchema) -> PromptBundle:
    """Binary per-type judgment prompt for one domain."""
    if not schema.entity_types:
        raise ValueError(f"schema for domain {schema.domain!r} has no entity types")
    type_lines = "\n".join(
        f"- {t.name}: {t.definition}" for t in schema.entity_types
    )
    system = (
        f"You judge which entity types are present in a conversation.\n"
        f"domain: {schema.domain}\n"
        f"Entity types:\n{type_lines}\n"
        "For every entity type above, answer exactly one line in the form\n"
        "<type_name><TAB>yes or <type_name><TAB>no. Output nothing else."
    )
    return PromptBundle(system_text=system, messages=(("user", _dialogue_block(query)),))


def render_exemplar(ex: ScoredExample, cot_flag: bool = False, cot: Optional[str] = None) -> str:
    ctx = " ".join(f"[{t.speaker}] {t.text}" for t in ex.example.local_context)
    lines = [f"Context: {ctx}", f"Extracted: {escape_field(ex.example.entity_value)}"]
    if cot_flag and cot:
        lines.insert(1, f"Reasoning: {cot}")
    return "\n".join(lines)


def build_expert_prompt(
    query: QueryParts,
    entity_type: EntityTypeDef,
    exemplars: Sequence[ScoredExample] = (),
    cot_flag: bool = False,
    cot_lookup: Optional[dict[str, str]] = None,
) -> PromptBundle:
    """Span extraction prompt for one entity type, few-shot exemplars in
    descending score order."""
    system = (
        f"You extract values for one entity type from a conversation.\n"
        f"entity type: {entity_type.name}\n"
        f"Definition: {entity_type.definition}\n"
        "Answer one line per extracted value in the form value<TAB><text>.\n"
        "If nothing matches, output nothing."
    )
    parts = []
    for ex in sorted(exemplars, key=lambda s: (-s.score, s.example.example_id)):
        cot = (cot_lookup or {}).get(ex.example.source_dialogue_id)
        parts.append("Example:\n" + render_exemplar(ex, cot_flag, cot))
    parts.append("Conversation:\n" + _dialogue_block(query))
    return PromptBundle(system_text=system, messages=(("user", "\n\n".join(parts)),))


def build_baseline_prompt(
    query: QueryParts, schemas: Sequence[DomainSchema]
) -> PromptBundle:
    """Single-shot prompt listing all entity types of all domains; used by the
    no-decomposition ablation mode."""
    type_lines = []
    for schema in schemas:
        for t in schema.entity_types:
            type_lines.append(f"- {schema.domain}/{t.name}: {t.definition}")
    system = (
        "You extract all entities from a conversation.\n"
        "All entity types:\n" + "\n".join(type_lines) + "\n"
        "Answer one line per entity in the form <domain>/<type_name><TAB><text>.\n"
        "If nothing matches, output nothing."
    )
    return PromptBundle(system_text=system, messages=(("user", _dialogue_block(query)),))


# -- backends -----------------------------------------------------------------

@dataclass(frozen=True)
class MockRule:
    contains: tuple[str, ...] = ()
    pattern: Optional[str] = None
    response: str = ""

    def matches(self, text: str) -> bool:
        if self.pattern is not None and re.search(self.pattern, text) is None:
            return False
        return all(s in text for s in self.contains)


@dataclass(frozen=True)
class ScriptedMock:
    """Deterministic backend: first matching rule wins, in rule order."""
    rules: tuple[MockRule, ...] = ()
    default: str = ""
    name: str = "mock"
    model: str = "scripted"
    call_log: list = field(default_factory=list, compare=False)

    def complete(self, prompt: PromptBundle) -> str:
        self.call_log.append(prompt)
        text = prompt.full_text()
        for rule in self.rules:
            if rule.matches(text):
                return rule.response
        return self.default

    @property
    def call_count(self) -> int:
        return len(self.call_log)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedMock":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        rules = tuple(
            MockRule(
                contains=tuple(r.get("contains", [])),
                pattern=r.get("pattern"),
                response=r["response"],
            )
            for r in doc.get("rules", [])
        )
        return cls(rules=rules, default=doc.get("default", ""))


class RemoteChatBackend:
    """Chat-completion HTTP backend with bounded retries.

    Retries (up to 3 attempts, exponential backoff from 500 ms) apply only to
    transport errors and 5xx responses; other failures are terminal.
    """

    MAX_ATTEMPTS = 3
    BACKOFF_BASE = 0.5

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "DIALEX_API_KEY",
        timeout: float = 60.0,
        max_in_flight: int = 4,
        backoff_base: Optional[float] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.name = f"remote:{model}"
        self.timeout = timeout
        self._api_key_env = api_key_env
        self._sem = threading.Semaphore(max_in_flight)
        self._backoff = self.BACKOFF_BASE if backoff_base is None else backoff_base

    def complete(self, prompt: PromptBundle) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "system", "content": prompt.system_text}]
            + [{"role": r, "content": t} for r, t in prompt.messages],
            "temperature": prompt.temperature,
            "max_tokens": prompt.max_tokens,
        }
        headers = {}
        key = os.environ.get(self._api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        last_err: Optional[str] = None
        for attempt in range(self.MAX_ATTEMPTS):
            if attempt:
                time.sleep(self._backoff * (2 ** (attempt - 1)))
            try:
                with self._sem:
                    resp = httpx.post(
                        f"{self.base_url}/chat/completions",
                        json=payload,
                        headers=headers,
                        timeout=self.timeout,
                    )
            except httpx.HTTPError as exc:
                last_err = f"transport error: {exc}"
                continue
            if resp.status_code >= 500:
                last_err = f"status {resp.status_code}: {resp.text[:200]}"
                continue
            if resp.status_code >= 400:
                raise BackendError(
                    f"{self.name}: status {resp.status_code}: {resp.text[:200]}"
                )
            return resp.json()["choices"][0]["message"]["content"]
        raise BackendError(
            f"{self.name}: retries exhausted after {self.MAX_ATTEMPTS} attempts ({last_err})"
        )
