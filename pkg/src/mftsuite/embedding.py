"""Sentence-embedding provider client, on-disk vector store, and similarity math.

Vectors come from any OpenAI-compatible embeddings endpoint
(POST {base_url}/v1/embeddings) and are cached by (model, content hash) so
repeated runs make no remote calls. On disk vectors are float32; all
in-memory similarity math runs in float64.
"""

from __future__ import annotations

import hashlib
import logging
import os
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

log = logging.getLogger(__name__)

MAGIC = b"MFTE"
FORMAT_VERSION = 1


class ProviderError(RuntimeError):
    """Embedding or chat provider failure after exhausting retries."""


@dataclass
class ProviderConfig:
    """Connection settings for an OpenAI-compatible embeddings endpoint.

    max_retries is the total attempt budget per batch, not extra retries.
    """

    base_url: str
    model_name: str
    batch_size: int = 32
    timeout: float = 30.0
    max_retries: int = 5
    api_key_env: str = "EMBEDDINGS_API_KEY"
    concurrency: int = 2

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")


@dataclass
class EmbeddingMatrix:
    """Row-per-item dense vectors with a fixed dimension."""

    ids: list[str]
    vectors: np.ndarray  # (n, d) float64
    normalized: bool = False

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1]) if self.vectors.ndim == 2 else 0

    def __len__(self) -> int:
        return len(self.ids)

    def validate(self) -> None:
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise ValueError("ids/vectors shape mismatch")
        if self.normalized and len(self.ids):
            norms = np.linalg.norm(self.vectors, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("normalized matrix contains non-unit rows")

    def row(self, item_id: str) -> np.ndarray:
        return self.vectors[self.ids.index(item_id)]

    def take(self, ids: list[str]) -> "EmbeddingMatrix":
        """Sub-matrix for the given ids, in the given order."""
        index = {i: k for k, i in enumerate(self.ids)}
        rows = [index[i] for i in ids]
        return EmbeddingMatrix(ids=list(ids), vectors=self.vectors[rows].copy(),
                               normalized=self.normalized)


def empty_matrix() -> EmbeddingMatrix:
    return EmbeddingMatrix(ids=[], vectors=np.zeros((0, 0), dtype=np.float64))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two non-zero vectors of equal dimension."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for zero vector")
    return float(np.dot(a, b) / (na * nb))


def normalize(m: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale each row to unit Euclidean norm; errors on a zero row."""
    if len(m) == 0:
        return EmbeddingMatrix(ids=[], vectors=m.vectors.copy(), normalized=True)
    norms = np.linalg.norm(m.vectors, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        bad = [m.ids[i] for i in np.flatnonzero(norms[:, 0] == 0.0)]
        raise ValueError(f"zero embedding row(s): {bad[:5]}")
    return EmbeddingMatrix(ids=list(m.ids), vectors=m.vectors / norms, normalized=True)


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Binary container: magic, version, dim, count, normalized flag, ids table,
# then row-major float32 data.
# ---------------------------------------------------------------------------

def save_matrix(m: EmbeddingMatrix, path: str | Path) -> None:
    path = Path(path)
    vectors = np.ascontiguousarray(m.vectors, dtype=np.float32)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III B", FORMAT_VERSION, m.dim, len(m.ids),
                             1 if m.normalized else 0))
        for item_id in m.ids:
            raw = item_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(vectors.tobytes(order="C"))


def load_matrix(path: str | Path) -> EmbeddingMatrix:
    path = Path(path)
    with path.open("rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"not an embedding matrix file: {path}")
        version, dim, count, norm_flag = struct.unpack("<III B", fh.read(13))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported matrix format version {version}")
        ids = []
        for _ in range(count):
            (length,) = struct.unpack("<H", fh.read(2))
            ids.append(fh.read(length).decode("utf-8"))
        data = np.frombuffer(fh.read(4 * dim * count), dtype="<f4")
    vectors = data.reshape(count, dim).astype(np.float64)
    return EmbeddingMatrix(ids=ids, vectors=vectors, normalized=bool(norm_flag))


def export_csv(m: EmbeddingMatrix, path: str | Path) -> None:
    """Human-inspectable dump: id,v1..vd."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("id," + ",".join(f"v{i + 1}" for i in range(m.dim)) + "\n")
        for item_id, row in zip(m.ids, m.vectors):
            fh.write(item_id + "," + ",".join(repr(float(x)) for x in row) + "\n")


class EmbeddingCache:
    """Persistent (model, content-hash) -> vector store, one file per model."""

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._loaded: dict[str, dict[str, np.ndarray]] = {}
        self._lock = threading.Lock()

    def _path(self, model: str) -> Path:
        safe = "".join(c if c.isalnum() or c in "-._" else "_" for c in model)
        return self.cache_dir / f"{safe}.emb"

    def _table(self, model: str) -> dict[str, np.ndarray]:
        with self._lock:
            if model not in self._loaded:
                path = self._path(model)
                if path.exists():
                    m = load_matrix(path)
                    self._loaded[model] = dict(zip(m.ids, m.vectors))
                else:
                    self._loaded[model] = {}
            return self._loaded[model]

    def get_many(self, model: str, hashes: list[str]) -> dict[str, np.ndarray]:
        table = self._table(model)
        return {h: table[h] for h in hashes if h in table}

    def put_many(self, model: str, entries: dict[str, np.ndarray]) -> None:
        if not entries:
            return
        table = self._table(model)
        with self._lock:
            table.update(entries)
            ids = sorted(table)
            vectors = np.vstack([table[i] for i in ids])
            save_matrix(EmbeddingMatrix(ids=ids, vectors=vectors), self._path(model))


class EmbeddingClient:
    """Batched, cached access to a remote embeddings endpoint."""

    def __init__(self, config: ProviderConfig, cache: EmbeddingCache | None = None):
        self.config = config
        self.cache = cache
        self.remote_calls = 0
        self._lock = threading.Lock()

    def embed(self, texts: list[str], ids: list[str] | None = None) -> EmbeddingMatrix:
        """Embed texts in order; row i corresponds to texts[i].

        Cache hits are served locally; only misses reach the provider,
        chunked by batch_size with bounded concurrent requests, then
        reassembled in input order.
        """
        if ids is not None and len(ids) != len(texts):
            raise ValueError("ids/texts length mismatch")
        if not texts:
            return empty_matrix()
        if any(not t for t in texts):
            raise ValueError("cannot embed empty text")
        row_ids = list(ids) if ids is not None else [str(i) for i in range(len(texts))]

        hashes = [content_hash(t) for t in texts]
        known: dict[str, np.ndarray] = {}
        if self.cache is not None:
            known = self.cache.get_many(self.config.model_name, hashes)

        miss_hashes: list[str] = []
        miss_texts: list[str] = []
        seen = set(known)
        for h, t in zip(hashes, texts):
            if h not in seen:
                seen.add(h)
                miss_hashes.append(h)
                miss_texts.append(t)

        if miss_texts:
            fetched = self._fetch_all(miss_texts)
            new_entries = dict(zip(miss_hashes, fetched))
            known.update(new_entries)
            if self.cache is not None:
                self.cache.put_many(self.config.model_name, new_entries)

        dims = {v.shape[0] for v in known.values()}
        if len(dims) > 1:
            raise ProviderError(f"dimension mismatch across batches: {sorted(dims)}")
        vectors = np.vstack([known[h] for h in hashes]).astype(np.float64)
        return EmbeddingMatrix(ids=row_ids, vectors=vectors)

    def _fetch_all(self, texts: list[str]) -> list[np.ndarray]:
        size = self.config.batch_size
        batches = [texts[i:i + size] for i in range(0, len(texts), size)]
        results: list[list[np.ndarray] | None] = [None] * len(batches)
        with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
            futures = {pool.submit(self._fetch_batch, b): k
                       for k, b in enumerate(batches)}
            for fut, k in futures.items():
                results[k] = fut.result()
        out: list[np.ndarray] = []
        for chunk in results:
            assert chunk is not None
            out.extend(chunk)
        return out

    def _fetch_batch(self, batch: list[str]) -> list[np.ndarray]:
        url = self.config.base_url.rstrip("/") + "/v1/embeddings"
        payload = {"model": self.config.model_name, "input": batch}
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: Exception | None = None
        for attempt in range(1, self.config.max_retries + 1):
            try:
                with self._lock:
                    self.remote_calls += 1
                resp = requests.post(url, json=payload, headers=headers,
                                     timeout=self.config.timeout)
            except requests.RequestException as exc:
                last_error = exc
                _backoff_sleep(attempt)
                continue
            if resp.status_code == 200:
                data = resp.json().get("data", [])
                if len(data) != len(batch):
                    raise ProviderError(
                        f"provider returned {len(data)} vectors for {len(batch)} inputs")
                data = sorted(data, key=lambda d: d["index"])
                rows = [np.asarray(d["embedding"], dtype=np.float64) for d in data]
                dims = {r.shape[0] for r in rows}
                if len(dims) > 1:
                    raise ProviderError(f"dimension mismatch within batch: {sorted(dims)}")
                if any(np.all(r == 0.0) for r in rows):
                    raise ProviderError("provider returned a zero embedding")
                return rows
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = ProviderError(f"status {resp.status_code}: {resp.text[:200]}")
                _backoff_sleep(attempt)
                continue
            raise ProviderError(f"provider error {resp.status_code}: {resp.text[:500]}")
        raise ProviderError(
            f"embedding request failed after {self.config.max_retries} attempts: {last_error}")


def _backoff_sleep(attempt: int, base: float = 0.2, factor: float = 2.0) -> None:
    time.sleep(base * factor ** (attempt - 1))
