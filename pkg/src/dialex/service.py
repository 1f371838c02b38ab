"""Long-running HTTP service.

Extraction reads a single immutable snapshot (registry + index) taken at
request start; corpus and registry mutations build a new snapshot and swap
the reference atomically under a single writer lock, so concurrent extracts
always observe exactly one consistent state.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, replace

from fastapi import FastAPI, HTTPException

from . import __version__
from .config import RunSettings
from .corpus import RetrievalExample, validate_record
from .embedding import EmbeddingProvider
from .inference import BackendError, CompletionBackend
from .pipeline import Expert, Manager, Registry, RegistryError, run_pipeline
from .retriever import DEFAULT_K, ExampleIndex, build_index
from .corpus import DomainSchema, EntityTypeDef
from .schemas import (
    AppendExamplesRequest,
    AppendExamplesResponse,
    DialogueModel,
    ExtractResponse,
    HealthResponse,
    RegisterExpertRequest,
    RegisterManagerRequest,
    RegistryResponse,
)


@dataclass(frozen=True)
class Snapshot:
    registry: Registry
    examples: tuple[RetrievalExample, ...]
    index: ExampleIndex


class ServiceState:
    def __init__(
        self,
        settings: RunSettings,
        registry: Registry,
        examples: tuple[RetrievalExample, ...],
        backend: CompletionBackend,
        provider: EmbeddingProvider,
    ):
        self.settings = settings
        self.backend = backend
        self.provider = provider
        self._snapshot = Snapshot(
            registry=registry,
            examples=examples,
            index=build_index(examples, provider),
        )
        self._write_lock = threading.Lock()

    @property
    def snapshot(self) -> Snapshot:
        return self._snapshot

    def append_examples(self, new: list[RetrievalExample]) -> Snapshot:
        with self._write_lock:
            current = self._snapshot
            examples = current.examples + tuple(new)
            snapshot = replace(
                current,
                examples=examples,
                index=build_index(examples, self.provider),
            )
            self._snapshot = snapshot
            return snapshot

    def register_manager(self, manager: Manager) -> Snapshot:
        with self._write_lock:
            current = self._snapshot
            registry = current.registry.with_manager(manager)
            for t in manager.schema.entity_types:
                registry = registry.with_expert(
                    Expert(manager.domain, t.name, t.definition, k=self.settings.pipeline.k)
                )
            snapshot = replace(current, registry=registry)
            self._snapshot = snapshot
            return snapshot

    def register_expert(self, expert: Expert) -> Snapshot:
        with self._write_lock:
            current = self._snapshot
            snapshot = replace(current, registry=current.registry.with_expert(expert))
            self._snapshot = snapshot
            return snapshot


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="dialex", version=__version__)
    app.state.service = state

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        snap = state.snapshot
        return HealthResponse(
            status="ok",
            provider=state.provider.name,
            index_size=len(snap.index),
            registry_digest=snap.registry.digest(),
            mode=state.settings.pipeline.mode.value,
            version=__version__,
        )

    @app.post("/extract", response_model=ExtractResponse)
    def extract(dialogue: DialogueModel) -> ExtractResponse:
        snap = state.snapshot
        record = dialogue.to_domain()
        manager = snap.registry.manager_for(record.domain)
        violations = validate_record(
            record, manager.schema if manager else None
        )
        # Gold entities are optional on live input; only structural problems block.
        structural = [v for v in violations if "entity_type" not in v]
        if structural:
            raise HTTPException(status_code=400, detail=structural)
        try:
            result = run_pipeline(
                record,
                state.settings.pipeline,
                snap.registry,
                state.backend,
                index=snap.index,
                provider=state.provider,
            )
        except BackendError as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc
        return ExtractResponse(**result.to_dict())

    @app.post("/corpus/examples", response_model=AppendExamplesResponse)
    def append_examples(req: AppendExamplesRequest) -> AppendExamplesResponse:
        existing = {e.example_id for e in state.snapshot.examples}
        new = [m.to_domain() for m in req.examples]
        dupes = [e.example_id for e in new if e.example_id in existing]
        if dupes:
            raise HTTPException(status_code=400, detail=[f"duplicate example_id {d!r}" for d in dupes])
        snap = state.append_examples(new)
        return AppendExamplesResponse(index_size=len(snap.index))

    @app.post("/registry/manager", response_model=RegistryResponse)
    def register_manager(req: RegisterManagerRequest) -> RegistryResponse:
        schema = DomainSchema(
            domain=req.domain,
            entity_types=tuple(
                EntityTypeDef(name=t.name, definition=t.definition)
                for t in req.entity_types
            ),
        )
        try:
            snap = state.register_manager(Manager(req.domain, schema))
        except RegistryError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return RegistryResponse(
            registry_digest=snap.registry.digest(),
            domains=[m.domain for m in snap.registry.managers],
        )

    @app.post("/registry/expert", response_model=RegistryResponse)
    def register_expert(req: RegisterExpertRequest) -> RegistryResponse:
        try:
            snap = state.register_expert(
                Expert(
                    domain=req.domain,
                    entity_type=req.entity_type,
                    definition=req.definition,
                    k=req.k if req.k is not None else DEFAULT_K,
                )
            )
        except RegistryError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return RegistryResponse(
            registry_digest=snap.registry.digest(),
            domains=[m.domain for m in snap.registry.managers],
        )

    return app
