"""Run configuration loading and reproducibility metadata."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from . import __version__
from .corpus import DEFAULT_CONTEXT_WINDOW
from .embedding import DEFAULT_DIM, EmbeddingProvider, HashingEmbedder, RemoteEmbedder
from .inference import CompletionBackend, RemoteChatBackend, ScriptedMock
from .pipeline import Mode, PipelineConfig
from .retriever import DEFAULT_K, RecallStrategy, WeightConfig

STRATEGY_ALIASES = {
    "entity": RecallStrategy.ENTITY_LEVEL,
    "entity_level": RecallStrategy.ENTITY_LEVEL,
    "dialogue": RecallStrategy.DIALOGUE_LEVEL,
    "dialogue_level": RecallStrategy.DIALOGUE_LEVEL,
    "keyinfo": RecallStrategy.KEYINFO_BASED,
    "keyinfo_based": RecallStrategy.KEYINFO_BASED,
}

MODE_ALIASES = {
    "baseline": Mode.BASELINE_DIRECT,
    "baseline_direct": Mode.BASELINE_DIRECT,
    "mme": Mode.MME,
    "mme-rag": Mode.MME_RAG,
    "mme_rag": Mode.MME_RAG,
}


class ConfigError(Exception):
    pass


def parse_strategy(name: str) -> RecallStrategy:
    try:
        return STRATEGY_ALIASES[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown strategy {name!r}") from None


def parse_mode(name: str) -> Mode:
    try:
        return MODE_ALIASES[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown mode {name!r}") from None


@dataclass
class RunSettings:
    """Everything a run needs beyond the corpus itself."""
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    window: int = DEFAULT_CONTEXT_WINDOW
    schema_path: Optional[str] = None
    backend_cfg: dict = field(default_factory=lambda: {"kind": "mock"})
    provider_cfg: dict = field(default_factory=lambda: {"kind": "hashing", "dim": DEFAULT_DIM})

    def build_backend(self) -> CompletionBackend:
        kind = self.backend_cfg.get("kind", "mock")
        if kind == "mock":
            path = self.backend_cfg.get("rules_path")
            if path:
                return ScriptedMock.from_file(path)
            return ScriptedMock()
        if kind == "remote":
            return RemoteChatBackend(
                base_url=self.backend_cfg["base_url"],
                model=self.backend_cfg.get("model", "default"),
                api_key_env=self.backend_cfg.get("api_key_env", "DIALEX_API_KEY"),
                timeout=self.backend_cfg.get("timeout", 60.0),
                max_in_flight=self.backend_cfg.get("max_in_flight", 4),
            )
        raise ConfigError(f"unknown backend kind {kind!r}")

    def build_provider(self) -> EmbeddingProvider:
        kind = self.provider_cfg.get("kind", "hashing")
        if kind in ("hashing", "builtin"):
            return HashingEmbedder(dim=self.provider_cfg.get("dim", DEFAULT_DIM))
        if kind == "remote":
            return RemoteEmbedder(
                base_url=self.provider_cfg["base_url"],
                model=self.provider_cfg.get("model", "default"),
                dim=self.provider_cfg.get("dim", DEFAULT_DIM),
                api_key_env=self.provider_cfg.get("api_key_env", "DIALEX_EMBED_API_KEY"),
                timeout=self.provider_cfg.get("timeout", 30.0),
            )
        raise ConfigError(f"unknown provider kind {kind!r}")

    def to_dict(self) -> dict:
        return {
            "mode": self.pipeline.mode.value,
            "cot_flag": self.pipeline.cot_flag,
            "k": self.pipeline.k,
            "weights": self.pipeline.weights.label(),
            "strategy": self.pipeline.strategy.value,
            "fail_open": self.pipeline.fail_open,
            "window": self.window,
            "schema_path": self.schema_path,
            "backend": self.backend_cfg,
            "provider": self.provider_cfg,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def load_settings(path: Optional[str | Path] = None, **overrides) -> RunSettings:
    """Load settings from a YAML or JSON document; keyword overrides win."""
    doc: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        doc = yaml.safe_load(text) or {}
    doc.update({k: v for k, v in overrides.items() if v is not None})
    weights = doc.get("weights", "8:1:1")
    if isinstance(weights, str):
        weights = WeightConfig.parse(weights)
    elif isinstance(weights, (list, tuple)):
        weights = WeightConfig(*weights)
    pipeline = PipelineConfig(
        mode=parse_mode(doc.get("mode", "mme_rag")),
        cot_flag=bool(doc.get("cot_flag", False)),
        k=int(doc.get("k", DEFAULT_K)),
        weights=weights,
        strategy=parse_strategy(doc.get("strategy", "keyinfo")),
        fail_open=bool(doc.get("fail_open", False)),
    )
    return RunSettings(
        pipeline=pipeline,
        window=int(doc.get("window", DEFAULT_CONTEXT_WINDOW)),
        schema_path=doc.get("schemas"),
        backend_cfg=doc.get("backend", {"kind": "mock"}),
        provider_cfg=doc.get("provider", {"kind": "hashing", "dim": DEFAULT_DIM}),
    )


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    corpus_hash: str
    provider: str
    mode: str
    tool_version: str = __version__
    timestamp: Optional[str] = None

    def to_dict(self) -> dict:
        d = {
            "config_hash": self.config_hash,
            "corpus_hash": self.corpus_hash,
            "provider": self.provider,
            "mode": self.mode,
            "tool_version": self.tool_version,
        }
        if self.timestamp is not None:
            d["timestamp"] = self.timestamp
        return d
