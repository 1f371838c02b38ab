"""Metrics and experiment harnesses: precision/recall/F1 with delta rows,
retrieval relevance and coverage buckets, the six-level similarity scale,
recall-strategy comparison, and weight-scheme sweeps.

Matching is exact on (entity_type, normalized value); normalization is
case-folding, trimming, and internal-whitespace collapse. Coverage buckets
follow the half-open partition of [0,1] with integer-style labels.
"""
from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .corpus import DialogueRecord, EntityAnnotation
from .embedding import EmbeddingProvider, cosine, join_texts
from .pipeline import ExtractionResult
from .retriever import (
    ExampleIndex,
    RecallStrategy,
    ScoredExample,
    WeightConfig,
    formulate_query,
    retrieve,
)

COVERAGE_BUCKETS = ("91-100%", "61-90%", "31-60%", "1-30%", "0%")
SIMILARITY_LEVELS = (
    "Complete Match",
    "Highly Similar",
    "Moderately Similar",
    "Partially Similar",
    "Low Similarity",
    "Irrelevant/Opposite",
)


def normalize_value(s: str) -> str:
    return " ".join(s.casefold().split())


@dataclass(frozen=True)
class PRF:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if (p + r) else 0.0

    @property
    def empty(self) -> bool:
        return self.tp + self.fp + self.fn == 0

    def __add__(self, other: "PRF") -> "PRF":
        return PRF(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
        }


def score_extraction(
    gold: Sequence[EntityAnnotation],
    predicted: ExtractionResult,
    normalize: Callable[[str], str] = normalize_value,
) -> PRF:
    """Multiset matching on (entity_type, normalized value): each gold item
    matches at most one prediction and vice versa."""
    gold_counts = Counter((g.entity_type, normalize(g.value)) for g in gold)
    pred_counts: Counter = Counter()
    for e in predicted.entities:
        for v in e.values:
            pred_counts[(e.entity_type, normalize(v))] += 1
    tp = sum((gold_counts & pred_counts).values())
    return PRF(
        tp=tp,
        fp=sum(pred_counts.values()) - tp,
        fn=sum(gold_counts.values()) - tp,
    )


def coverage_bucket(c: float) -> str:
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"coverage must be in [0,1], got {c}")
    if c == 0.0:
        return "0%"
    if c <= 0.30:
        return "1-30%"
    if c <= 0.60:
        return "31-60%"
    if c <= 0.90:
        return "61-90%"
    return "91-100%"


def coverage(
    gold_values: Sequence[str],
    retrieved: Sequence[ScoredExample],
    normalize: Callable[[str], str] = normalize_value,
) -> tuple[float, str, bool]:
    """Fraction of gold values found in the retrieved examples' entity values
    or key-info entries. Empty gold covers trivially (flagged)."""
    if not gold_values:
        return 1.0, coverage_bucket(1.0), True
    haystack = set()
    for s in retrieved:
        ex = s.example
        haystack.add(normalize(ex.entity_value))
        for entry in ex.key_info.user_key_info + ex.key_info.assistant_key_info:
            haystack.add(normalize(entry))
    hit = sum(1 for v in gold_values if normalize(v) in haystack)
    c = hit / len(gold_values)
    return c, coverage_bucket(c), False


def relevance(
    gold_values: Sequence[str], retrieved: Sequence[ScoredExample]
) -> str:
    c, _, flagged = coverage(gold_values, retrieved)
    if flagged:
        return "relevant"
    return "relevant" if c > 0 else "irrelevant"


def similarity_level(score: float) -> str:
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"similarity score must be in [0,1], got {score}")
    if score == 1.0:
        return "Complete Match"
    if score >= 0.8:
        return "Highly Similar"
    if score >= 0.6:
        return "Moderately Similar"
    if score >= 0.4:
        return "Partially Similar"
    if score >= 0.2:
        return "Low Similarity"
    return "Irrelevant/Opposite"


def builtin_similarity_judge(provider: EmbeddingProvider) -> Callable[[str, str], float]:
    """Cosine of the built-in embeddings, clipped to [0,1]."""
    def judge(query_text: str, retrieved_text: str) -> float:
        s = cosine(provider.embed(query_text), provider.embed(retrieved_text))
        return min(1.0, max(0.0, s))
    return judge


# -- harnesses ----------------------------------------------------------------

@dataclass(frozen=True)
class StrategyRow:
    strategy: str
    relevant_pct: float
    irrelevant_pct: float
    coverage_pct: dict[str, float]  # bucket label -> percentage

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "relevant_pct": self.relevant_pct,
            "irrelevant_pct": self.irrelevant_pct,
            "coverage_pct": dict(self.coverage_pct),
        }


def _gold_values_by_type(record: DialogueRecord) -> dict[str, list[str]]:
    by_type: dict[str, list[str]] = {}
    for e in record.entities:
        by_type.setdefault(e.entity_type, []).append(e.value)
    return by_type


def retrieve_for_record(
    record: DialogueRecord,
    index: ExampleIndex,
    strategy: RecallStrategy,
    weights: WeightConfig,
    k: int,
    provider: EmbeddingProvider,
) -> list[ScoredExample]:
    """Union of per-entity-type top-k retrievals for one query dialogue."""
    query = formulate_query(record, strategy)
    out: list[ScoredExample] = []
    seen: set[str] = set()
    for entity_type in sorted(_gold_values_by_type(record)):
        for s in retrieve(
            index, query, strategy, weights, record.domain, entity_type, k, provider
        ):
            if s.example.example_id not in seen:
                seen.add(s.example.example_id)
                out.append(s)
    return out


def compare_strategies(
    records: Sequence[DialogueRecord],
    index: ExampleIndex,
    strategies: Sequence[RecallStrategy],
    k: int,
    provider: EmbeddingProvider,
    weights: Optional[WeightConfig] = None,
) -> list[StrategyRow]:
    weights = weights or WeightConfig()
    rows = []
    for strategy in strategies:
        relevant = 0
        bucket_counts = {b: 0 for b in COVERAGE_BUCKETS}
        n = 0
        for record in records:
            gold_values = [e.value for e in record.entities]
            retrieved = retrieve_for_record(record, index, strategy, weights, k, provider)
            c, bucket, _ = coverage(gold_values, retrieved)
            bucket_counts[bucket] += 1
            if c > 0:
                relevant += 1
            n += 1
        if n == 0:
            rows.append(StrategyRow(strategy.value, 0.0, 0.0,
                                    {b: (100.0 if b == "0%" else 0.0) for b in COVERAGE_BUCKETS}))
            continue
        rows.append(
            StrategyRow(
                strategy=strategy.value,
                relevant_pct=100.0 * relevant / n,
                irrelevant_pct=100.0 * (n - relevant) / n,
                coverage_pct={b: 100.0 * bucket_counts[b] / n for b in COVERAGE_BUCKETS},
            )
        )
    return rows


@dataclass(frozen=True)
class SweepRow:
    scheme: str
    level_pct: dict[str, float]
    strong_match_pct: float  # judge score >= 0.6
    comprehensive_pct: float  # judge score >= 0.2
    n_queries: int

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "level_pct": dict(self.level_pct),
            "strong_match_pct": self.strong_match_pct,
            "comprehensive_pct": self.comprehensive_pct,
            "n_queries": self.n_queries,
        }


def exemplar_text(s: ScoredExample) -> str:
    return join_texts(
        list(s.example.key_info.user_key_info)
        + [t.text for t in s.example.local_context]
    )


def sweep_weights(
    records: Sequence[DialogueRecord],
    index: ExampleIndex,
    schemes: Sequence[WeightConfig],
    judge: Callable[[str, str], float],
    provider: EmbeddingProvider,
    k: int = 1,
) -> list[SweepRow]:
    """Similarity-level distribution of top-ranked retrievals per weighting
    scheme. Schemes identical after normalization collapse to one row."""
    seen_labels: set[str] = set()
    rows = []
    for scheme in schemes:
        label = scheme.label()
        if label in seen_labels:
            continue
        seen_labels.add(label)
        scores: list[float] = []
        for record in records:
            retrieved = retrieve_for_record(
                record, index, RecallStrategy.KEYINFO_BASED, scheme, k, provider
            )
            if not retrieved:
                continue
            query = formulate_query(record, RecallStrategy.KEYINFO_BASED)
            top = max(retrieved, key=lambda s: s.score)
            scores.append(judge(query.all_user_text, exemplar_text(top)))
        n = len(scores)
        level_counts = Counter(similarity_level(s) for s in scores)
        rows.append(
            SweepRow(
                scheme=label,
                level_pct={
                    lvl: (100.0 * level_counts[lvl] / n if n else 0.0)
                    for lvl in SIMILARITY_LEVELS
                },
                strong_match_pct=(100.0 * sum(1 for s in scores if s >= 0.6) / n) if n else 0.0,
                comprehensive_pct=(100.0 * sum(1 for s in scores if s >= 0.2) / n) if n else 0.0,
                n_queries=n,
            )
        )
    return rows


# -- reports ------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    per_domain: dict[str, PRF]
    overall: PRF
    deltas: Optional[dict[str, dict[str, float]]] = None  # domain -> {p,r,f1}
    manifest: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {
            "per_domain": {d: prf.to_dict() for d, prf in sorted(self.per_domain.items())},
            "overall": self.overall.to_dict(),
            "manifest": self.manifest,
        }
        if self.deltas is not None:
            doc["deltas"] = {d: dict(v) for d, v in sorted(self.deltas.items())}
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def evaluate_predictions(
    gold_records: Sequence[DialogueRecord],
    predictions: Sequence[ExtractionResult],
    baseline: Optional[EvalReport] = None,
    manifest: Optional[dict] = None,
) -> EvalReport:
    gold_by_id = {r.id: r for r in gold_records}
    missing = [p.dialogue_id for p in predictions if p.dialogue_id not in gold_by_id]
    if missing:
        raise ValueError(f"predictions reference unknown dialogue ids: {missing}")
    per_domain: dict[str, PRF] = {}
    for pred in predictions:
        record = gold_by_id[pred.dialogue_id]
        prf = score_extraction(record.entities, pred)
        per_domain[record.domain] = per_domain.get(record.domain, PRF(0, 0, 0)) + prf
    overall = sum(per_domain.values(), PRF(0, 0, 0))
    deltas = None
    if baseline is not None:
        deltas = {}
        for domain, prf in per_domain.items():
            base = baseline.per_domain.get(domain, PRF(0, 0, 0))
            deltas[domain] = {
                "precision": prf.precision - base.precision,
                "recall": prf.recall - base.recall,
                "f1": prf.f1 - base.f1,
            }
    return EvalReport(
        per_domain=per_domain, overall=overall, deltas=deltas, manifest=manifest or {}
    )


def corpus_digest(records: Iterable[DialogueRecord]) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(json.dumps(r.to_dict(), sort_keys=True).encode("utf-8"))
    return h.hexdigest()[:16]


def _pct(x: float) -> str:
    return f"{x:.1f}%"


def render_prf_table(report: EvalReport) -> str:
    """Aligned text table: one row per domain with P/R/F1 (percentages, one
    decimal) plus delta rows when a baseline was given."""
    lines = [f"{'Domain':<14} {'P':>7} {'R':>7} {'F1':>7}"]
    for domain in sorted(report.per_domain):
        prf = report.per_domain[domain]
        lines.append(
            f"{domain:<14} {_pct(100 * prf.precision):>7} "
            f"{_pct(100 * prf.recall):>7} {_pct(100 * prf.f1):>7}"
        )
        if report.deltas and domain in report.deltas:
            d = report.deltas[domain]
            lines.append(
                f"{'  (delta)':<14} {100 * d['precision']:>+6.1f}% "
                f"{100 * d['recall']:>+6.1f}% {100 * d['f1']:>+6.1f}%"
            )
    o = report.overall
    lines.append(
        f"{'overall':<14} {_pct(100 * o.precision):>7} "
        f"{_pct(100 * o.recall):>7} {_pct(100 * o.f1):>7}"
    )
    return "\n".join(lines) + "\n"


def render_strategy_table(rows: Sequence[StrategyRow]) -> str:
    header = (
        f"{'Strategy':<16} {'Relevant':>9} {'Irrelevant':>11} "
        + " ".join(f"{b:>8}" for b in COVERAGE_BUCKETS)
    )
    lines = [header]
    for row in rows:
        lines.append(
            f"{row.strategy:<16} {_pct(row.relevant_pct):>9} {_pct(row.irrelevant_pct):>11} "
            + " ".join(f"{_pct(row.coverage_pct[b]):>8}" for b in COVERAGE_BUCKETS)
        )
    return "\n".join(lines) + "\n"


def render_sweep_table(rows: Sequence[SweepRow]) -> str:
    header = f"{'Scheme':<10} " + " ".join(f"{lvl[:12]:>13}" for lvl in SIMILARITY_LEVELS) + \
        f" {'>=0.6':>7} {'>=0.2':>7}"
    lines = [header]
    for row in rows:
        lines.append(
            f"{row.scheme:<10} "
            + " ".join(f"{_pct(row.level_pct[lvl]):>13}" for lvl in SIMILARITY_LEVELS)
            + f" {_pct(row.strong_match_pct):>7} {_pct(row.comprehensive_pct):>7}"
        )
    return "\n".join(lines) + "\n"
