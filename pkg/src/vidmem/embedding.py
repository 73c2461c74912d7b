"""Embeddings: deterministic offline stub plus an HTTP backend.

Every embedding leaving this module is a float32 unit vector. The stub
backend needs no network and is fully reproducible:

* images -> 16x16 grid of grayscale cell means scaled to [0,1] (256 dims)
  concatenated with per-channel 8-bin histograms (24 dims). Histogram bins
  cover values 1..255 and are normalized by total pixel count, so
  zero-valued pixels do not vote and an all-black frame maps to the
  zero-vector guard (first basis vector).
* text -> each lowercase whitespace token is hashed into one of d buckets
  with a +-1 sign from a second hash, accumulated, then normalized.

The HTTP backend posts {"model", "inputs": [...]} and expects
{"embeddings": [[...]]}; endpoint and key come from config / environment.
"""

from __future__ import annotations

import base64
import hashlib
import io
import os
from typing import Union

import numpy as np
import requests
from PIL import Image

from .config import EmbeddingConfig
from .errors import (
    BackendUnavailable,
    DimensionMismatch,
    EmptyText,
    ZeroVector,
)
from .filters import to_gray
from .frames import Frame

CELL_GRID = 16
HIST_BINS = 8
STUB_DIM = CELL_GRID * CELL_GRID + 3 * HIST_BINS  # 280


def _finalize(vec: np.ndarray, dim: int) -> np.ndarray:
    """Normalize to a float32 unit vector; zero maps to the first basis."""
    v = np.asarray(vec, dtype=np.float64)
    if v.shape != (dim,):
        raise DimensionMismatch(f"expected ({dim},), got {v.shape}")
    norm = float(np.sqrt(np.dot(v, v)))
    if norm == 0.0:
        out = np.zeros(dim, dtype=np.float32)
        out[0] = 1.0
        return out
    return (v / norm).astype(np.float32)


class StubEmbedder:
    """Deterministic offline embedder with a fixed 280-dim space."""

    dim = STUB_DIM

    def embed_image(self, pixels: np.ndarray) -> np.ndarray:
        gray = to_gray(pixels)
        h, w = gray.shape
        feats = np.zeros(STUB_DIM, dtype=np.float64)
        for i in range(CELL_GRID):
            r0 = min((i * h) // CELL_GRID, h - 1)
            r1 = max(((i + 1) * h) // CELL_GRID, r0 + 1)
            for j in range(CELL_GRID):
                c0 = min((j * w) // CELL_GRID, w - 1)
                c1 = max(((j + 1) * w) // CELL_GRID, c0 + 1)
                feats[i * CELL_GRID + j] = (
                    float(np.mean(gray[r0:r1, c0:c1])) / 255.0
                )
        arr = np.asarray(pixels)
        if arr.ndim == 2:
            arr = np.stack([arr, arr, arr], axis=-1)
        total = arr.shape[0] * arr.shape[1]
        base = CELL_GRID * CELL_GRID
        for c in range(3):
            values = arr[..., c].ravel()
            nonzero = values[values > 0]
            counts = np.bincount(nonzero // 32, minlength=HIST_BINS)
            feats[base + c * HIST_BINS : base + (c + 1) * HIST_BINS] = (
                counts.astype(np.float64) / total
            )
        return feats

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.zeros(STUB_DIM, dtype=np.float64)
        for token in text.lower().split():
            data = token.encode("utf-8")
            bucket = int.from_bytes(
                hashlib.md5(data).digest()[:8], "big"
            ) % STUB_DIM
            sign_bit = hashlib.md5(b"sign\x00" + data).digest()[-1] & 1
            vec[bucket] += 1.0 if sign_bit else -1.0
        return vec


class HttpEmbedder:
    """Remote embedding service speaking the flat JSON contract."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        dim: int,
        api_key: str | None = None,
        timeout: float = 30.0,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.dim = dim
        self.api_key = api_key
        self.timeout = timeout
        self.session = session or requests.Session()

    def _post(self, inputs: list[dict]) -> np.ndarray:
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self.session.post(
                self.endpoint,
                json={"model": self.model, "inputs": inputs},
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise BackendUnavailable(f"embedding endpoint: {exc}") from exc
        if resp.status_code != 200:
            raise BackendUnavailable(
                f"embedding endpoint returned {resp.status_code}"
            )
        try:
            rows = resp.json()["embeddings"]
            vec = np.asarray(rows[0], dtype=np.float64)
        except (KeyError, IndexError, ValueError, TypeError) as exc:
            raise BackendUnavailable(f"malformed embedding response: {exc}")
        if vec.shape != (self.dim,):
            raise DimensionMismatch(
                f"backend returned {vec.shape}, expected ({self.dim},)"
            )
        return vec

    def embed_image(self, pixels: np.ndarray) -> np.ndarray:
        buf = io.BytesIO()
        Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(
            buf, format="JPEG", quality=90
        )
        payload = base64.b64encode(buf.getvalue()).decode("ascii")
        return self._post([{"image_base64": payload}])

    def embed_text(self, text: str) -> np.ndarray:
        return self._post([{"text": text}])


def make_backend(cfg: EmbeddingConfig):
    if cfg.backend == "stub":
        return StubEmbedder()
    if cfg.backend == "http":
        return HttpEmbedder(
            endpoint=cfg.endpoint or os.environ.get("VIDMEM_EMBED_ENDPOINT", ""),
            model=cfg.model,
            dim=cfg.dim,
            api_key=os.environ.get(cfg.api_key_env),
        )
    raise BackendUnavailable(f"unknown embedding backend {cfg.backend!r}")


def embed_frame(frame: Union[Frame, np.ndarray], backend) -> np.ndarray:
    """Embed a frame (or raw raster) into a float32 unit vector."""
    pixels = frame.pixels if isinstance(frame, Frame) else frame
    return _finalize(backend.embed_image(pixels), backend.dim)


def embed_text(text: str, backend) -> np.ndarray:
    """Embed a text query. Raises EmptyText for blank input."""
    if not text or not text.strip():
        raise EmptyText("cannot embed empty text")
    return _finalize(backend.embed_text(text), backend.dim)


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cosine similarity, clamped to [0, 2]. Exactly symmetric."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"{va.shape} vs {vb.shape}")
    na = float(np.dot(va, va))
    nb = float(np.dot(vb, vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine distance undefined for zero vectors")
    cos = float(np.dot(va, vb)) / (np.sqrt(na) * np.sqrt(nb))
    return min(2.0, max(0.0, 1.0 - cos))
