"""Command-line interface.

Thin client over the core package: every subcommand loads inputs, calls the
corresponding library operation, and writes the same documents the HTTP
service serves. Exit codes: 0 success, 1 validation failure, 2 backend or
terminal failure.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__
from .config import RunManifest, load_settings
from .corpus import (
    CorpusError,
    build_entity_examples,
    load_corpus,
    load_schemas,
    save_corpus,
    serialize_corpus,
)
from .evaluation import (
    EvalReport,
    PRF,
    corpus_digest,
    evaluate_predictions,
    render_prf_table,
)
from .inference import BackendError
from .pipeline import ExtractionResult, build_registry, run_pipeline
from .retriever import build_index, load_index, save_index

EXIT_VALIDATION = 1
EXIT_BACKEND = 2


@click.group()
@click.version_option(version=__version__)
def main():
    """Entity extraction over task-oriented dialogues."""


_config_opt = click.option("--config", "config_path", type=click.Path(exists=True), default=None)


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--schemas", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def ingest(corpus_path, schema_path, out_path):
    """Validate a JSONL corpus and write it in canonical form."""
    try:
        schemas = load_schemas(schema_path)
        records = load_corpus(corpus_path, schemas)
    except CorpusError as exc:
        click.echo(f"validation failed: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    save_corpus(records, out_path)
    click.echo(f"{len(records)}")


@main.command()
@_config_opt
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--schemas", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--window", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
def index(config_path, corpus_path, schema_path, window, out_path):
    """Build and persist the entity-level retrieval index."""
    settings = load_settings(config_path, window=window)
    try:
        schemas = load_schemas(schema_path)
        records = load_corpus(corpus_path, schemas)
    except CorpusError as exc:
        click.echo(f"validation failed: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    provider = settings.build_provider()
    examples = build_entity_examples(records, window=settings.window)
    try:
        idx = build_index(examples, provider)
    except Exception as exc:
        click.echo(f"index build failed: {exc}", err=True)
        sys.exit(EXIT_BACKEND)
    save_index(idx, out_path)
    click.echo(f"entries={len(idx)} dim={idx.dim}")


@main.command()
@_config_opt
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--schemas", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--index", "index_path", type=click.Path(exists=True), default=None)
@click.option("--mode", type=click.Choice(["baseline", "mme", "mme-rag"]), default=None)
@click.option("--k", type=int, default=None)
@click.option("--weights", type=str, default=None, help="L:U:A, e.g. 8:1:1")
@click.option("--strategy", type=click.Choice(["entity", "dialogue", "keyinfo"]), default=None)
@click.option("--backend", "backend_kind", type=click.Choice(["mock", "remote"]), default=None)
@click.option("--mock-rules", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
def extract(config_path, corpus_path, schema_path, index_path, mode, k, weights,
            strategy, backend_kind, mock_rules, out_path):
    """Run the pipeline over every dialogue; one result document per line."""
    settings = load_settings(
        config_path, mode=mode, k=k, weights=weights, strategy=strategy
    )
    if backend_kind:
        settings.backend_cfg = {"kind": backend_kind, **(
            {"rules_path": mock_rules} if mock_rules else {}
        )}
    elif mock_rules:
        settings.backend_cfg = {"kind": "mock", "rules_path": mock_rules}
    try:
        schemas = load_schemas(schema_path)
        records = load_corpus(corpus_path, schemas)
    except CorpusError as exc:
        click.echo(f"validation failed: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    provider = settings.build_provider()
    backend = settings.build_backend()
    idx = load_index(index_path, provider) if index_path else None
    registry = build_registry(schemas, k=settings.pipeline.k)

    lines = []
    failures = 0
    for record in records:
        try:
            result = run_pipeline(
                record, settings.pipeline, registry, backend,
                index=idx, provider=provider,
            )
        except BackendError as exc:
            click.echo(f"backend failure on {record.id}: {exc}", err=True)
            failures += 1
            continue
        lines.append(json.dumps(result.to_dict(), ensure_ascii=False, sort_keys=True))
    output = "".join(line + "\n" for line in lines)
    if out_path:
        Path(out_path).write_text(output, encoding="utf-8")
    else:
        click.echo(output, nl=False)
    if failures:
        click.echo(f"failures={failures}", err=True)
        sys.exit(EXIT_BACKEND)


@main.command()
@_config_opt
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True))
@click.option("--schemas", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--predictions", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--baseline", "baseline_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
def eval(config_path, gold_path, schema_path, pred_path, baseline_path, out_path):
    """Score predictions against the gold corpus; per-domain P/R/F1 report."""
    settings = load_settings(config_path)
    try:
        schemas = load_schemas(schema_path)
        records = load_corpus(gold_path, schemas)
    except CorpusError as exc:
        click.echo(f"validation failed: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    predictions = []
    with open(pred_path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                predictions.append(ExtractionResult.from_dict(json.loads(line)))
    baseline = None
    if baseline_path:
        doc = json.loads(Path(baseline_path).read_text(encoding="utf-8"))
        baseline = EvalReport(
            per_domain={
                d: PRF(v["tp"], v["fp"], v["fn"]) for d, v in doc["per_domain"].items()
            },
            overall=PRF(
                doc["overall"]["tp"], doc["overall"]["fp"], doc["overall"]["fn"]
            ),
        )
    manifest = RunManifest(
        config_hash=settings.config_hash(),
        corpus_hash=corpus_digest(records),
        provider=settings.build_provider().name,
        mode=settings.pipeline.mode.value,
    )
    try:
        report = evaluate_predictions(
            records, predictions, baseline=baseline, manifest=manifest.to_dict()
        )
    except ValueError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_VALIDATION)
    if out_path:
        Path(out_path).write_text(report.to_json(), encoding="utf-8")
    click.echo(render_prf_table(report), nl=False)


@main.command()
@_config_opt
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--schemas", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8400)
def serve(config_path, corpus_path, schema_path, host, port):
    """Start the HTTP service."""
    import uvicorn

    from .service import ServiceState, create_app

    settings = load_settings(config_path)
    try:
        schemas = load_schemas(schema_path)
        records = load_corpus(corpus_path, schemas)
    except CorpusError as exc:
        click.echo(f"validation failed: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    examples = tuple(build_entity_examples(records, window=settings.window))
    state = ServiceState(
        settings=settings,
        registry=build_registry(schemas, k=settings.pipeline.k),
        examples=examples,
        backend=settings.build_backend(),
        provider=settings.build_provider(),
    )
    uvicorn.run(create_app(state), host=host, port=port)


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
def fixtures(out_dir):
    """Materialize the synthetic fixture corpora (golden + adversarial)."""
    from .fixtures import build_adversarial_fixture, build_golden_fixture

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    golden = build_golden_fixture()
    (out / "golden_schemas.json").write_text(
        json.dumps(
            [
                {
                    "domain": s.domain,
                    "entity_types": [
                        {"name": t.name, "definition": t.definition}
                        for t in s.entity_types
                    ],
                }
                for s in golden.schemas.values()
            ],
            indent=2,
        ),
        encoding="utf-8",
    )
    (out / "golden_corpus.jsonl").write_text(
        serialize_corpus(golden.records), encoding="utf-8"
    )
    (out / "golden_mock_rules.json").write_text(
        json.dumps(
            {
                "rules": [
                    {
                        "contains": list(r.contains),
                        **({"pattern": r.pattern} if r.pattern else {}),
                        "response": r.response,
                    }
                    for r in golden.mock.rules
                ],
                "default": golden.mock.default,
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    adv = build_adversarial_fixture()
    (out / "adversarial_schemas.json").write_text(
        json.dumps(
            {
                "domain": adv.schema.domain,
                "entity_types": [
                    {"name": t.name, "definition": t.definition}
                    for t in adv.schema.entity_types
                ],
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    (out / "adversarial_corpus.jsonl").write_text(
        serialize_corpus(adv.corpus_records), encoding="utf-8"
    )
    (out / "adversarial_queries.jsonl").write_text(
        serialize_corpus(adv.query_records), encoding="utf-8"
    )
    click.echo(f"wrote fixtures to {out}")


if __name__ == "__main__":
    main()
