"""Orchestration: route a dialogue through domain managers, fan out to the
experts whose types were judged present, and consolidate extraction results.

Registries are immutable snapshots; registering a manager or expert yields a
new registry, so a long-running service can swap them atomically without
disturbing in-flight work.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from .corpus import DialogueRecord, DomainSchema, EntityTypeDef
from .embedding import EmbeddingProvider
from .inference import (
    CompletionBackend,
    ParseError,
    build_baseline_prompt,
    build_expert_prompt,
    build_manager_prompt,
    parse_expert_response,
    parse_manager_response,
    parse_tagged_lines,
)
from .retriever import (
    DEFAULT_K,
    ExampleIndex,
    QueryParts,
    RecallStrategy,
    WeightConfig,
    formulate_query,
    retrieve,
)


class RegistryError(Exception):
    pass


class PipelineError(Exception):
    pass


class Mode(str, Enum):
    BASELINE_DIRECT = "baseline_direct"
    MME = "mme"
    MME_RAG = "mme_rag"


@dataclass(frozen=True)
class Manager:
    domain: str
    schema: DomainSchema


@dataclass(frozen=True)
class Expert:
    domain: str
    entity_type: str
    definition: str
    k: int = DEFAULT_K


@dataclass(frozen=True)
class Registry:
    """Immutable snapshot of managers (one per domain) and experts (one per
    (domain, entity_type))."""
    managers: tuple[Manager, ...] = ()
    experts: tuple[Expert, ...] = ()

    def manager_for(self, domain: str) -> Optional[Manager]:
        for m in self.managers:
            if m.domain == domain:
                return m
        return None

    def expert_for(self, domain: str, entity_type: str) -> Optional[Expert]:
        for e in self.experts:
            if e.domain == domain and e.entity_type == entity_type:
                return e
        return None

    def with_manager(self, manager: Manager) -> "Registry":
        if self.manager_for(manager.domain) is not None:
            raise RegistryError(f"manager for domain {manager.domain!r} already registered")
        return replace(self, managers=self.managers + (manager,))

    def with_expert(self, expert: Expert) -> "Registry":
        if self.expert_for(expert.domain, expert.entity_type) is not None:
            raise RegistryError(
                f"expert for ({expert.domain!r}, {expert.entity_type!r}) already registered"
            )
        manager = self.manager_for(expert.domain)
        if manager is None:
            raise RegistryError(f"no manager for domain {expert.domain!r}")
        registry = self
        if manager.schema.get_type(expert.entity_type) is None:
            # A novel type extends its domain's schema so the manager judges it.
            new_schema = DomainSchema(
                domain=manager.domain,
                entity_types=manager.schema.entity_types
                + (EntityTypeDef(name=expert.entity_type, definition=expert.definition),),
            )
            managers = tuple(
                Manager(m.domain, new_schema) if m.domain == manager.domain else m
                for m in self.managers
            )
            registry = replace(self, managers=managers)
        return replace(registry, experts=registry.experts + (expert,))

    def digest(self) -> str:
        import hashlib

        parts = [f"m:{m.domain}:{','.join(m.schema.type_names())}" for m in self.managers]
        parts += [f"e:{e.domain}:{e.entity_type}" for e in self.experts]
        return hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()[:16]


def build_registry(schemas: dict[str, DomainSchema], k: int = DEFAULT_K) -> Registry:
    registry = Registry()
    for domain in schemas:
        registry = registry.with_manager(Manager(domain, schemas[domain]))
        for t in schemas[domain].entity_types:
            registry = registry.with_expert(Expert(domain, t.name, t.definition, k=k))
    return registry


@dataclass(frozen=True)
class PipelineConfig:
    mode: Mode = Mode.MME_RAG
    cot_flag: bool = False
    k: int = DEFAULT_K
    weights: WeightConfig = field(default_factory=WeightConfig)
    strategy: RecallStrategy = RecallStrategy.KEYINFO_BASED
    fail_open: bool = False  # on manager parse failure: activate all types instead of skipping
    max_expert_workers: int = 4


@dataclass(frozen=True)
class EntityExtraction:
    domain: str
    entity_type: str
    values: tuple[str, ...]
    exemplar_ids: tuple[str, ...] = ()
    manager_verdict: bool = True

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "entity_type": self.entity_type,
            "values": list(self.values),
            "exemplar_ids": list(self.exemplar_ids),
            "manager_verdict": self.manager_verdict,
        }


@dataclass(frozen=True)
class Diagnostics:
    """Per-dialogue accounting. backend_calls counts generation calls only
    (expert or baseline completions); manager probes are deliberately
    excluded so that registering a new domain leaves results for unaffected
    dialogues byte-identical."""
    parse_failures: int = 0
    backend_calls: int = 0
    failed_domains: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "parse_failures": self.parse_failures,
            "backend_calls": self.backend_calls,
            "failed_domains": list(self.failed_domains),
        }


@dataclass(frozen=True)
class ExtractionResult:
    dialogue_id: str
    entities: tuple[EntityExtraction, ...]
    diagnostics: Diagnostics

    def to_dict(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "entities": [e.to_dict() for e in self.entities],
            "diagnostics": self.diagnostics.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionResult":
        return cls(
            dialogue_id=d["dialogue_id"],
            entities=tuple(
                EntityExtraction(
                    domain=e["domain"],
                    entity_type=e["entity_type"],
                    values=tuple(e["values"]),
                    exemplar_ids=tuple(e.get("exemplar_ids", [])),
                    manager_verdict=e.get("manager_verdict", True),
                )
                for e in d["entities"]
            ),
            diagnostics=Diagnostics(
                parse_failures=d["diagnostics"]["parse_failures"],
                backend_calls=d["diagnostics"]["backend_calls"],
                failed_domains=tuple(d["diagnostics"].get("failed_domains", [])),
            ),
        )


@dataclass
class _Counters:
    parse_failures: int = 0
    backend_calls: int = 0
    failed_domains: list[str] = field(default_factory=list)


def route(
    query: QueryParts,
    registry: Registry,
    backend: CompletionBackend,
    fail_open: bool = False,
    counters: Optional[_Counters] = None,
) -> list[tuple[Manager, list[str]]]:
    """Ask every domain manager for its per-type judgment; return the managers
    that activated anything, with the types judged present, in registry order."""
    counters = counters if counters is not None else _Counters()
    activations: list[tuple[Manager, list[str]]] = []
    for manager in registry.managers:
        prompt = build_manager_prompt(query, manager.schema)
        raw = backend.complete(prompt)
        try:
            verdict = parse_manager_response(raw, manager.schema.type_names())
        except ParseError:
            counters.parse_failures += 1
            counters.failed_domains.append(manager.domain)
            if fail_open:
                activations.append((manager, list(manager.schema.type_names())))
            continue
        present = [t for t in manager.schema.type_names() if verdict.judgments[t]]
        if present:
            activations.append((manager, present))
    return activations


def run_pipeline(
    dialogue: DialogueRecord,
    config: PipelineConfig,
    registry: Registry,
    backend: CompletionBackend,
    index: Optional[ExampleIndex] = None,
    provider: Optional[EmbeddingProvider] = None,
    cot_lookup: Optional[dict[str, str]] = None,
) -> ExtractionResult:
    query = formulate_query(dialogue, config.strategy)
    counters = _Counters()

    if config.mode is Mode.BASELINE_DIRECT:
        entities = _run_baseline(query, registry, backend, counters)
    else:
        activations = route(query, registry, backend, config.fail_open, counters)
        tasks = []
        for manager, types in activations:
            for entity_type in types:
                expert = registry.expert_for(manager.domain, entity_type)
                if expert is None:
                    raise PipelineError(
                        f"no expert registered for ({manager.domain!r}, {entity_type!r})"
                    )
                tasks.append(expert)
        entities = _run_experts(
            tasks, query, config, backend, index, provider, counters, cot_lookup
        )

    return ExtractionResult(
        dialogue_id=dialogue.id,
        entities=tuple(sorted(entities, key=lambda e: (e.domain, e.entity_type))),
        diagnostics=Diagnostics(
            parse_failures=counters.parse_failures,
            backend_calls=counters.backend_calls,
            failed_domains=tuple(counters.failed_domains),
        ),
    )


def _run_baseline(
    query: QueryParts,
    registry: Registry,
    backend: CompletionBackend,
    counters: _Counters,
) -> list[EntityExtraction]:
    prompt = build_baseline_prompt(query, [m.schema for m in registry.managers])
    raw = backend.complete(prompt)
    counters.backend_calls += 1
    try:
        pairs = parse_tagged_lines(raw)
    except ParseError:
        counters.parse_failures += 1
        return []
    grouped: dict[tuple[str, str], list[str]] = {}
    for name, value in pairs:
        domain, _, entity_type = name.partition("/")
        if registry.expert_for(domain, entity_type) is None:
            continue
        bucket = grouped.setdefault((domain, entity_type), [])
        if value not in bucket:
            bucket.append(value)
    return [
        EntityExtraction(domain=d, entity_type=t, values=tuple(vs))
        for (d, t), vs in grouped.items()
    ]


def _run_experts(
    experts: list[Expert],
    query: QueryParts,
    config: PipelineConfig,
    backend: CompletionBackend,
    index: Optional[ExampleIndex],
    provider: Optional[EmbeddingProvider],
    counters: _Counters,
    cot_lookup: Optional[dict[str, str]],
) -> list[EntityExtraction]:
    def run_one(expert: Expert) -> tuple[EntityExtraction, int]:
        exemplars = []
        if config.mode is Mode.MME_RAG and config.k > 0 and index is not None:
            if provider is None:
                raise PipelineError("mme_rag mode requires an embedding provider")
            exemplars = retrieve(
                index,
                query,
                config.strategy,
                config.weights,
                expert.domain,
                expert.entity_type,
                config.k,
                provider,
            )
        prompt = build_expert_prompt(
            query,
            EntityTypeDef(name=expert.entity_type, definition=expert.definition),
            exemplars,
            cot_flag=config.cot_flag,
            cot_lookup=cot_lookup,
        )
        raw = backend.complete(prompt)
        try:
            values = parse_expert_response(raw)
            failed = 0
        except ParseError:
            values = []
            failed = 1
        return EntityExtraction(
            domain=expert.domain,
            entity_type=expert.entity_type,
            values=tuple(values),
            exemplar_ids=tuple(s.example.example_id for s in exemplars),
            manager_verdict=True,
        ), failed

    if not experts:
        return []
    ordered = sorted(experts, key=lambda e: (e.domain, e.entity_type))
    workers = max(1, min(config.max_expert_workers, len(ordered)))
    if workers == 1:
        outcomes = [run_one(e) for e in ordered]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_one, ordered))
    results = []
    for extraction, failed in outcomes:
        counters.backend_calls += 1
        counters.parse_failures += failed
        results.append(extraction)
    return results
