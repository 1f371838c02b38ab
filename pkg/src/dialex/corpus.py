"""Dialogue corpus data model, validation, and entity-level example construction.

Storage is newline-delimited JSON, one dialogue record per line. Each record
carries the conversation turns, gold entity annotations, an optional free-text
reasoning string (stored verbatim, never interpreted), and the key-info
summaries used as retrieval signals.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional


class CorpusError(Exception):
    """Raised on malformed corpus or schema files."""


@dataclass(frozen=True)
class Turn:
    speaker: str  # "user" | "assistant"
    text: str
    index: int

    def to_dict(self) -> dict:
        return {"speaker": self.speaker, "text": self.text, "index": self.index}


@dataclass(frozen=True)
class EntityAnnotation:
    entity_type: str
    value: str
    normalized: Optional[str] = None
    turn_index: Optional[int] = None

    def to_dict(self) -> dict:
        d = {"entity_type": self.entity_type, "value": self.value}
        if self.normalized is not None:
            d["normalized"] = self.normalized
        if self.turn_index is not None:
            d["turn_index"] = self.turn_index
        return d


@dataclass(frozen=True)
class KeyInfo:
    user_key_info: tuple[str, ...] = ()
    assistant_key_info: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "user_key_info": list(self.user_key_info),
            "assistant_key_info": list(self.assistant_key_info),
        }


@dataclass(frozen=True)
class DialogueRecord:
    id: str
    domain: str
    turns: tuple[Turn, ...]
    entities: tuple[EntityAnnotation, ...] = ()
    cot: Optional[str] = None
    key_info: KeyInfo = field(default_factory=KeyInfo)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "domain": self.domain,
            "turns": [t.to_dict() for t in self.turns],
            "entities": [e.to_dict() for e in self.entities],
            "cot": self.cot,
            "key_info": self.key_info.to_dict(),
        }

    def last_user_turn_index(self) -> Optional[int]:
        for turn in reversed(self.turns):
            if turn.speaker == "user":
                return turn.index
        return None


@dataclass(frozen=True)
class EntityTypeDef:
    name: str
    definition: str
    class_labels: tuple[str, ...] = ()


@dataclass(frozen=True)
class DomainSchema:
    domain: str
    entity_types: tuple[EntityTypeDef, ...]

    def type_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.entity_types)

    def get_type(self, name: str) -> Optional[EntityTypeDef]:
        for t in self.entity_types:
            if t.name == name:
                return t
        return None


@dataclass(frozen=True)
class RetrievalExample:
    """Entity-level unit of the retrieval corpus: one target entity plus its
    local dialogue context and the source dialogue's key-info."""
    example_id: str
    source_dialogue_id: str
    domain: str
    entity_type: str
    entity_value: str
    local_context: tuple[Turn, ...]
    key_info: KeyInfo

    def to_dict(self) -> dict:
        return {
            "example_id": self.example_id,
            "source_dialogue_id": self.source_dialogue_id,
            "domain": self.domain,
            "entity_type": self.entity_type,
            "entity_value": self.entity_value,
            "local_context": [t.to_dict() for t in self.local_context],
            "key_info": self.key_info.to_dict(),
        }


def turn_from_dict(d: dict, fallback_index: int) -> Turn:
    return Turn(
        speaker=d["speaker"],
        text=d["text"],
        index=d.get("index", fallback_index),
    )


def record_from_dict(d: dict) -> DialogueRecord:
    turns = tuple(turn_from_dict(t, i) for i, t in enumerate(d.get("turns", [])))
    entities = tuple(
        EntityAnnotation(
            entity_type=e["entity_type"],
            value=e["value"],
            normalized=e.get("normalized"),
            turn_index=e.get("turn_index"),
        )
        for e in d.get("entities", [])
    )
    ki = d.get("key_info") or {}
    return DialogueRecord(
        id=d["id"],
        domain=d["domain"],
        turns=turns,
        entities=entities,
        cot=d.get("cot"),
        key_info=KeyInfo(
            user_key_info=tuple(ki.get("user_key_info", [])),
            assistant_key_info=tuple(ki.get("assistant_key_info", [])),
        ),
    )


def example_from_dict(d: dict) -> RetrievalExample:
    ki = d.get("key_info") or {}
    return RetrievalExample(
        example_id=d["example_id"],
        source_dialogue_id=d.get("source_dialogue_id", ""),
        domain=d["domain"],
        entity_type=d["entity_type"],
        entity_value=d["entity_value"],
        local_context=tuple(
            turn_from_dict(t, i) for i, t in enumerate(d.get("local_context", []))
        ),
        key_info=KeyInfo(
            user_key_info=tuple(ki.get("user_key_info", [])),
            assistant_key_info=tuple(ki.get("assistant_key_info", [])),
        ),
    )


def validate_record(record: DialogueRecord, schema: Optional[DomainSchema]) -> list[str]:
    """Check every record invariant against the schema. Returns a list of
    violation messages; empty list means the record is valid."""
    violations: list[str] = []
    if not record.id:
        violations.append("record id is empty")
    if schema is None:
        violations.append(f"unknown domain {record.domain!r}")
    if not record.turns:
        violations.append("record has no turns")
    for i, turn in enumerate(record.turns):
        if turn.speaker not in ("user", "assistant"):
            violations.append(f"turn {i}: invalid speaker {turn.speaker!r}")
        if not turn.text.strip():
            violations.append(f"turn {i}: empty text")
        if turn.index != i:
            violations.append(
                f"non-contiguous turns: turn at position {i} has index {turn.index}"
            )
    known_types = set(schema.type_names()) if schema else set()
    for e in record.entities:
        if schema is not None and e.entity_type not in known_types:
            violations.append(
                f"entity_type {e.entity_type!r} not in domain {record.domain!r}"
            )
        if not e.value:
            violations.append(f"entity of type {e.entity_type!r} has empty value")
        if e.turn_index is not None and not (0 <= e.turn_index < len(record.turns)):
            violations.append(
                f"entity {e.entity_type!r}: turn_index {e.turn_index} out of range "
                f"(dialogue has {len(record.turns)} turns)"
            )
    for entry in record.key_info.user_key_info + record.key_info.assistant_key_info:
        if not entry.strip():
            violations.append("key_info contains an empty entry")
    return violations


def load_schemas(path: str | Path) -> dict[str, DomainSchema]:
    """Load a schema registry from a JSON file holding one schema document or
    a list of them."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    docs = raw if isinstance(raw, list) else [raw]
    registry: dict[str, DomainSchema] = {}
    for doc in docs:
        schema = schema_from_dict(doc)
        if schema.domain in registry:
            raise CorpusError(f"duplicate domain schema {schema.domain!r}")
        registry[schema.domain] = schema
    return registry


def schema_from_dict(doc: dict) -> DomainSchema:
    types = []
    seen = set()
    for t in doc["entity_types"]:
        if t["name"] in seen:
            raise CorpusError(
                f"duplicate entity type {t['name']!r} in domain {doc['domain']!r}"
            )
        if not t.get("definition", "").strip():
            raise CorpusError(
                f"entity type {t['name']!r} in domain {doc['domain']!r} has no definition"
            )
        seen.add(t["name"])
        types.append(
            EntityTypeDef(
                name=t["name"],
                definition=t["definition"],
                class_labels=tuple(t.get("class_labels", [])),
            )
        )
    return DomainSchema(domain=doc["domain"], entity_types=tuple(types))


def load_corpus(path: str | Path, schemas: dict[str, DomainSchema]) -> list[DialogueRecord]:
    """Load and validate a JSONL corpus. Raises CorpusError naming the line
    on malformed input and on any validation violation."""
    records: list[DialogueRecord] = []
    seen_ids: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                record = record_from_dict(doc)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"line {lineno}: malformed record ({exc})") from exc
            violations = validate_record(record, schemas.get(record.domain))
            if violations:
                raise CorpusError(
                    f"line {lineno}: record {record.id!r} invalid: "
                    + "; ".join(violations)
                )
            if record.id in seen_ids:
                raise CorpusError(f"line {lineno}: duplicate record id {record.id!r}")
            seen_ids.add(record.id)
            records.append(record)
    return records


def serialize_corpus(records: Iterable[DialogueRecord]) -> str:
    """Canonical JSONL form: one compact JSON object per line, stable key order."""
    return "".join(
        json.dumps(r.to_dict(), ensure_ascii=False, separators=(",", ":")) + "\n"
        for r in records
    )


def save_corpus(records: Iterable[DialogueRecord], path: str | Path) -> None:
    Path(path).write_text(serialize_corpus(records), encoding="utf-8")


DEFAULT_CONTEXT_WINDOW = 2


def build_entity_examples(
    records: Iterable[DialogueRecord],
    window: int = DEFAULT_CONTEXT_WINDOW,
) -> list[RetrievalExample]:
    """Convert dialogue-level records into one retrieval example per entity.

    The local context spans `window` turns on each side of the grounding turn,
    clamped to the dialogue bounds. Entities without a turn_index ground to
    the last user turn.
    """
    examples: list[RetrievalExample] = []
    for record in records:
        for i, entity in enumerate(record.entities):
            ground = entity.turn_index
            if ground is None:
                ground = record.last_user_turn_index()
            if ground is None:
                ground = len(record.turns) - 1
            lo = max(0, ground - window)
            hi = min(len(record.turns), ground + window + 1)
            examples.append(
                RetrievalExample(
                    example_id=f"{record.id}:{i}",
                    source_dialogue_id=record.id,
                    domain=record.domain,
                    entity_type=entity.entity_type,
                    entity_value=entity.value,
                    local_context=record.turns[lo:hi],
                    key_info=record.key_info,
                )
            )
    return examples
