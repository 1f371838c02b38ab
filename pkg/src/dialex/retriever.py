"""Exemplar retrieval: index construction, query formulation, weighted
scoring, and deterministic top-k ranking.

Three recall strategies are supported. The key-info strategy scores a query
against each example's key-info vectors with three signals (last user reply,
all user utterances, all agent utterances) combined as a normalized weighted
mean; the other two strategies score a single holistic query vector against
the example's context vector.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from math import gcd
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import DialogueRecord, RetrievalExample, Turn, example_from_dict
from .embedding import EmbeddingProvider, cosine, join_texts

INDEX_FORMAT_VERSION = 1
DEFAULT_K = 3


class RetrieverError(Exception):
    pass


class RecallStrategy(str, Enum):
    ENTITY_LEVEL = "entity_level"
    DIALOGUE_LEVEL = "dialogue_level"
    KEYINFO_BASED = "keyinfo_based"


@dataclass(frozen=True)
class WeightConfig:
    """Relative weights over (last user reply, all user utterances, all agent
    utterances). Only the ratios matter; scoring normalizes by the sum."""
    w_last_user: float = 8.0
    w_all_user: float = 1.0
    w_all_agent: float = 1.0

    def __post_init__(self):
        ws = (self.w_last_user, self.w_all_user, self.w_all_agent)
        if any(w < 0 for w in ws):
            raise ValueError("weights must be non-negative")
        if sum(ws) <= 0:
            raise ValueError("at least one weight must be positive")

    def normalized(self) -> tuple[float, float, float]:
        total = self.w_last_user + self.w_all_user + self.w_all_agent
        return (
            self.w_last_user / total,
            self.w_all_user / total,
            self.w_all_agent / total,
        )

    def label(self) -> str:
        """Canonical scheme label, e.g. (16,2,2) -> "8-1-1"."""
        fracs = [Fraction(w).limit_denominator(10**6) for w in
                 (self.w_last_user, self.w_all_user, self.w_all_agent)]
        denom = 1
        for f in fracs:
            denom = denom * f.denominator // gcd(denom, f.denominator)
        ints = [int(f * denom) for f in fracs]
        g = 0
        for i in ints:
            g = gcd(g, i)
        ints = [i // g for i in ints] if g else ints
        return "-".join(str(i) for i in ints)

    @classmethod
    def parse(cls, spec: str) -> "WeightConfig":
        """Parse "L:U:A" or "L-U-A"."""
        parts = spec.replace("-", ":").split(":")
        if len(parts) != 3:
            raise ValueError(f"weight spec must have 3 parts, got {spec!r}")
        return cls(*(float(p) for p in parts))


@dataclass(frozen=True)
class QueryParts:
    last_user_text: str
    all_user_text: str
    all_agent_text: str


@dataclass(frozen=True)
class IndexEntry:
    example: RetrievalExample
    user_key_vec: np.ndarray
    assistant_key_vec: np.ndarray
    context_vec: np.ndarray


@dataclass(frozen=True)
class ExampleIndex:
    provider_name: str
    dim: int
    entries: tuple[IndexEntry, ...]

    def filtered(self, domain: str, entity_type: str) -> list[IndexEntry]:
        return [
            e for e in self.entries
            if e.example.domain == domain and e.example.entity_type == entity_type
        ]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ScoredExample:
    example: RetrievalExample
    score: float
    signal_breakdown: tuple[float, float, float]  # (s_last, s_user, s_agent)


def context_text(turns: Sequence[Turn]) -> str:
    return join_texts([t.text for t in turns])


def build_index(
    examples: Iterable[RetrievalExample], provider: EmbeddingProvider
) -> ExampleIndex:
    entries = []
    for ex in examples:
        try:
            entries.append(
                IndexEntry(
                    example=ex,
                    user_key_vec=provider.embed(join_texts(ex.key_info.user_key_info)),
                    assistant_key_vec=provider.embed(
                        join_texts(ex.key_info.assistant_key_info)
                    ),
                    context_vec=provider.embed(context_text(ex.local_context)),
                )
            )
        except Exception as exc:
            raise RetrieverError(
                f"index build failed at example {ex.example_id!r}: {exc}"
            ) from exc
    return ExampleIndex(
        provider_name=provider.name, dim=provider.dim, entries=tuple(entries)
    )


def formulate_query(
    dialogue: DialogueRecord | Sequence[Turn], strategy: RecallStrategy
) -> QueryParts:
    turns = dialogue.turns if isinstance(dialogue, DialogueRecord) else tuple(dialogue)
    user_texts = [t.text for t in turns if t.speaker == "user"]
    agent_texts = [t.text for t in turns if t.speaker == "assistant"]
    if not user_texts:
        raise RetrieverError("no user content to query")
    last_user = user_texts[-1]
    all_user = join_texts(user_texts)
    all_agent = join_texts(agent_texts)
    if strategy is RecallStrategy.ENTITY_LEVEL:
        # Whole user context as the single query.
        return QueryParts(all_user, all_user, all_user)
    if strategy is RecallStrategy.DIALOGUE_LEVEL:
        # One holistic query over the full history, agent replies included.
        holistic = join_texts([t.text for t in turns])
        return QueryParts(last_user, holistic, "")
    return QueryParts(last_user, all_user, all_agent)


@dataclass(frozen=True)
class QueryVectors:
    last_user: np.ndarray
    all_user: np.ndarray
    all_agent: np.ndarray


def embed_query(query: QueryParts, provider: EmbeddingProvider) -> QueryVectors:
    return QueryVectors(
        last_user=provider.embed(query.last_user_text),
        all_user=provider.embed(query.all_user_text),
        all_agent=provider.embed(query.all_agent_text),
    )


def score_entry(
    qv: QueryVectors,
    entry: IndexEntry,
    weights: WeightConfig,
    strategy: RecallStrategy,
) -> ScoredExample:
    if strategy is RecallStrategy.KEYINFO_BASED:
        s_last = cosine(qv.last_user, entry.user_key_vec)
        s_user = cosine(qv.all_user, entry.user_key_vec)
        s_agent = cosine(qv.all_agent, entry.assistant_key_vec)
        wl, wu, wa = weights.normalized()
        score = wl * s_last + wu * s_user + wa * s_agent
        return ScoredExample(entry.example, score, (s_last, s_user, s_agent))
    # Holistic strategies: the query lives in all_user by construction.
    s = cosine(qv.all_user, entry.context_vec)
    return ScoredExample(entry.example, s, (0.0, s, 0.0))


def score_example(
    query: QueryParts,
    entry: IndexEntry,
    weights: WeightConfig,
    strategy: RecallStrategy,
    provider: EmbeddingProvider,
) -> ScoredExample:
    return score_entry(embed_query(query, provider), entry, weights, strategy)


def retrieve(
    index: ExampleIndex,
    query: QueryParts,
    strategy: RecallStrategy,
    weights: WeightConfig,
    domain: str,
    entity_type: str,
    k: int,
    provider: EmbeddingProvider,
) -> list[ScoredExample]:
    """Top-k matching examples, score descending, ties broken by ascending
    example_id. Fewer than k matches yields a shorter list."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if provider.name != index.provider_name:
        raise RetrieverError(
            f"index built with provider {index.provider_name!r}, "
            f"queried with {provider.name!r}"
        )
    qv = embed_query(query, provider)
    scored = [
        score_entry(qv, entry, weights, strategy)
        for entry in index.filtered(domain, entity_type)
    ]
    scored.sort(key=lambda s: (-s.score, s.example.example_id))
    return scored[:k]


def save_index(index: ExampleIndex, path: str | Path) -> None:
    doc = {
        "format_version": INDEX_FORMAT_VERSION,
        "provider": {"name": index.provider_name, "dim": index.dim},
        "entries": [
            {
                "example": e.example.to_dict(),
                "user_key_vec": e.user_key_vec.tolist(),
                "assistant_key_vec": e.assistant_key_vec.tolist(),
                "context_vec": e.context_vec.tolist(),
            }
            for e in index.entries
        ],
    }
    Path(path).write_text(
        json.dumps(doc, ensure_ascii=False, separators=(",", ":"), sort_keys=True),
        encoding="utf-8",
    )


def load_index(path: str | Path, provider: Optional[EmbeddingProvider] = None) -> ExampleIndex:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != INDEX_FORMAT_VERSION:
        raise RetrieverError(f"unsupported index format {doc.get('format_version')!r}")
    prov = doc["provider"]
    if provider is not None and provider.name != prov["name"]:
        raise RetrieverError(
            f"index provider {prov['name']!r} does not match configured "
            f"provider {provider.name!r}"
        )
    entries = tuple(
        IndexEntry(
            example=example_from_dict(e["example"]),
            user_key_vec=np.asarray(e["user_key_vec"], dtype=np.float64),
            assistant_key_vec=np.asarray(e["assistant_key_vec"], dtype=np.float64),
            context_vec=np.asarray(e["context_vec"], dtype=np.float64),
        )
        for e in doc["entries"]
    )
    return ExampleIndex(provider_name=prov["name"], dim=prov["dim"], entries=entries)
