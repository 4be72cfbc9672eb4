"""Text-embedding providers: EMB1 file I/O, feature hashing, HTTP service client."""

from __future__ import annotations

import hashlib
import os
import struct
import time

import numpy as np
import requests

_EMB_MAGIC = b"EMB1"

API_KEY_ENV = "EMBED_API_KEY"


class EmbeddingFileError(ValueError):
    """Raised on a malformed EMB1 file."""


def save_embeddings(matrix: np.ndarray, path) -> None:
    """Write a row-major float32 matrix in the EMB1 format."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise ValueError("embedding matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_EMB_MAGIC)
        fh.write(struct.pack("<QQ", matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.astype("<f4").tobytes())


def load_embeddings(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _EMB_MAGIC:
            raise EmbeddingFileError(f"bad embedding file magic: {magic!r}")
        header = fh.read(16)
        if len(header) != 16:
            raise EmbeddingFileError("truncated embedding header")
        n, d = struct.unpack("<QQ", header)
        payload = fh.read()
    expected = 4 * n * d
    if len(payload) < expected:
        raise EmbeddingFileError(
            f"truncated embedding payload: expected {expected} bytes, got {len(payload)}"
        )
    if len(payload) > expected:
        raise EmbeddingFileError("trailing bytes after embedding payload")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(n, d).copy()
    if not np.all(np.isfinite(matrix)):
        raise EmbeddingFileError("embedding matrix contains NaN/Inf")
    return matrix


def _token_hash(token: str, seed: int) -> int:
    digest = hashlib.blake2b(
        token.encode("utf-8"), key=seed.to_bytes(8, "little"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def hash_embed(texts: list[str], dim: int, seed: int = 0) -> np.ndarray:
    """Feature-hashing embedder: a deterministic offline text vectorizer.

    Tokens (lowercased, whitespace-split) are sign-hashed into ``dim`` buckets;
    rows are L2-normalized (an all-zero row stays zero).
    """
    if dim < 8:
        raise ValueError("dim must be >= 8")
    out = np.zeros((len(texts), dim), dtype=np.float32)
    for i, text in enumerate(texts):
        for token in text.lower().split():
            h = _token_hash(token, seed)
            bucket = h % dim
            sign = 1.0 if (h >> 63) & 1 else -1.0
            out[i, bucket] += sign
        norm = np.linalg.norm(out[i])
        if norm > 0:
            out[i] /= norm
    return out


def fetch_embeddings(
    endpoint: str,
    texts: list[str],
    batch_size: int = 64,
    session: requests.Session | None = None,
    max_attempts: int = 3,
    backoff: float = 0.5,
    timeout: float = 30.0,
) -> np.ndarray:
    """Fetch embeddings from a service speaking the EMB wire contract.

    POST {"texts": [...]} -> {"vectors": [[...], ...]}; auth via the
    EMBED_API_KEY environment variable. Transient failures are retried with
    exponential backoff; rows come back in input order.
    """
    if not texts:
        return np.zeros((0, 0), dtype=np.float32)
    sess = session or requests.Session()
    headers = {}
    api_key = os.environ.get(API_KEY_ENV)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    rows: list[list[float]] = []
    dim = None
    for start in range(0, len(texts), batch_size):
        batch = texts[start:start + batch_size]
        vectors = _post_with_retries(sess, endpoint, batch, headers, max_attempts, backoff, timeout)
        if len(vectors) != len(batch):
            raise RuntimeError(
                f"service returned {len(vectors)} vectors for a batch of {len(batch)}"
            )
        for vec in vectors:
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise RuntimeError(f"dimension mismatch: expected {dim}, got {len(vec)}")
            rows.append(vec)
    matrix = np.asarray(rows, dtype=np.float32)
    if not np.all(np.isfinite(matrix)):
        raise RuntimeError("service returned non-finite embedding values")
    return matrix


def _post_with_retries(sess, endpoint, batch, headers, max_attempts, backoff, timeout):
    last_exc = None
    for attempt in range(max_attempts):
        try:
            resp = sess.post(endpoint, json={"texts": batch}, headers=headers, timeout=timeout)
            if resp.status_code >= 500:
                raise requests.HTTPError(f"server error {resp.status_code}")
            resp.raise_for_status()
            return resp.json()["vectors"]
        except (requests.ConnectionError, requests.Timeout, requests.HTTPError) as exc:
            last_exc = exc
            if attempt + 1 < max_attempts:
                time.sleep(backoff * (2 ** attempt))
    raise RuntimeError(f"embedding request failed after {max_attempts} attempts: {last_exc}")
