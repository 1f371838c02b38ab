"""Pydantic request/response models for the HTTP service."""
from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

from .corpus import (
    DialogueRecord,
    EntityAnnotation,
    KeyInfo,
    RetrievalExample,
    Turn,
)


class TurnModel(BaseModel):
    speaker: str
    text: str
    index: Optional[int] = None


class EntityAnnotationModel(BaseModel):
    entity_type: str
    value: str
    normalized: Optional[str] = None
    turn_index: Optional[int] = None


class KeyInfoModel(BaseModel):
    user_key_info: list[str] = Field(default_factory=list)
    assistant_key_info: list[str] = Field(default_factory=list)

    def to_domain(self) -> KeyInfo:
        return KeyInfo(
            user_key_info=tuple(self.user_key_info),
            assistant_key_info=tuple(self.assistant_key_info),
        )


class DialogueModel(BaseModel):
    id: str
    domain: str
    turns: list[TurnModel]
    entities: list[EntityAnnotationModel] = Field(default_factory=list)
    cot: Optional[str] = None
    key_info: KeyInfoModel = Field(default_factory=KeyInfoModel)

    def to_domain(self) -> DialogueRecord:
        return DialogueRecord(
            id=self.id,
            domain=self.domain,
            turns=tuple(
                Turn(t.speaker, t.text, t.index if t.index is not None else i)
                for i, t in enumerate(self.turns)
            ),
            entities=tuple(
                EntityAnnotation(e.entity_type, e.value, e.normalized, e.turn_index)
                for e in self.entities
            ),
            cot=self.cot,
            key_info=self.key_info.to_domain(),
        )


class EntityExtractionModel(BaseModel):
    domain: str
    entity_type: str
    values: list[str]
    exemplar_ids: list[str]
    manager_verdict: bool


class DiagnosticsModel(BaseModel):
    parse_failures: int
    backend_calls: int
    failed_domains: list[str]


class ExtractResponse(BaseModel):
    dialogue_id: str
    entities: list[EntityExtractionModel]
    diagnostics: DiagnosticsModel


class RetrievalExampleModel(BaseModel):
    example_id: str
    source_dialogue_id: str = ""
    domain: str
    entity_type: str
    entity_value: str
    local_context: list[TurnModel]
    key_info: KeyInfoModel = Field(default_factory=KeyInfoModel)

    def to_domain(self) -> RetrievalExample:
        return RetrievalExample(
            example_id=self.example_id,
            source_dialogue_id=self.source_dialogue_id,
            domain=self.domain,
            entity_type=self.entity_type,
            entity_value=self.entity_value,
            local_context=tuple(
                Turn(t.speaker, t.text, t.index if t.index is not None else i)
                for i, t in enumerate(self.local_context)
            ),
            key_info=self.key_info.to_domain(),
        )


class AppendExamplesRequest(BaseModel):
    examples: list[RetrievalExampleModel]


class AppendExamplesResponse(BaseModel):
    index_size: int


class EntityTypeModel(BaseModel):
    name: str
    definition: str


class RegisterManagerRequest(BaseModel):
    domain: str
    entity_types: list[EntityTypeModel]


class RegisterExpertRequest(BaseModel):
    domain: str
    entity_type: str
    definition: str
    k: Optional[int] = None


class RegistryResponse(BaseModel):
    registry_digest: str
    domains: list[str]


class HealthResponse(BaseModel):
    status: str
    provider: str
    index_size: int
    registry_digest: str
    mode: str
    version: str
