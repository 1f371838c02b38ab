"""Text embedding providers and cosine similarity.

The built-in provider is a hashed bag-of-words embedder: deterministic across
runs and platforms (blake2b token hashing, fixed personalization string), so
retrieval behaviour is fully reproducible without any external model. A
remote provider speaking the common embeddings HTTP shape is available for
production use.
"""
from __future__ import annotations

import hashlib
import os
import re
import threading
from typing import Protocol, Sequence

import httpx
import numpy as np

DEFAULT_DIM = 512
_HASH_PERSON = b"dialex-emb-v1"  # fixed seed; changing it invalidates every index
_TOKEN_RE = re.compile(r"[^0-9a-z]+")


class EmbeddingError(Exception):
    """Provider failure, carries the provider name in the message."""


class DimensionMismatch(ValueError):
    pass


class EmbeddingProvider(Protocol):
    name: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_RE.split(text.lower()) if t]


def token_bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=8, person=_HASH_PERSON
    ).digest()
    return int.from_bytes(digest, "big") % dim


class HashingEmbedder:
    """Deterministic lexical embedder: token counts hashed into `dim` buckets,
    scaled to unit length. Empty text maps to the zero vector."""

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.name = f"hashing-v1-d{dim}"

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in tokenize(text):
            vec[token_bucket(token, self.dim)] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


class RemoteEmbedder:
    """HTTP embedding provider (model + input strings in, float arrays out).

    Credential comes from the named environment variable; concurrent embed
    calls are bounded by `max_in_flight`.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        api_key_env: str = "DIALEX_EMBED_API_KEY",
        timeout: float = 30.0,
        max_in_flight: int = 4,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dim = dim
        self.name = f"remote:{model}"
        self.timeout = timeout
        self._api_key_env = api_key_env
        self._sem = threading.Semaphore(max_in_flight)

    def embed(self, text: str) -> np.ndarray:
        headers = {}
        key = os.environ.get(self._api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        with self._sem:
            try:
                resp = httpx.post(
                    f"{self.base_url}/embeddings",
                    json={"model": self.model, "input": [text]},
                    headers=headers,
                    timeout=self.timeout,
                )
                resp.raise_for_status()
            except httpx.HTTPError as exc:
                raise EmbeddingError(f"provider {self.name}: {exc}") from exc
        data = resp.json()["data"][0]["embedding"]
        vec = np.asarray(data, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise EmbeddingError(
                f"provider {self.name}: expected dim {self.dim}, got {vec.shape}"
            )
        return vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0 when either vector is zero."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def get_provider(name: str, dim: int = DEFAULT_DIM, **kwargs) -> EmbeddingProvider:
    if name in ("hashing", "builtin"):
        return HashingEmbedder(dim=dim)
    if name == "remote":
        return RemoteEmbedder(dim=dim, **kwargs)
    raise ValueError(f"unknown embedding provider {name!r}")


def join_texts(parts: Sequence[str]) -> str:
    return " ".join(p for p in parts if p)
