"""Embedding sets, the ZSEB interchange format, batching and subsampling.

Files store feature matrices as little-endian float32; everything numeric
downstream converts to float64 once after load. Image and text files carry
no cross-references to each other, so the library cannot assume image-text
pairing anywhere. Shuffling and subsampling use the package PRNG
(xoshiro256**, see rng.py) so orders reproduce bit-exactly everywhere.

ZSEB layout (little-endian):
  magic "ZSEB" | u32 version=1 | u8 modality (0 image, 1 text)
  | u32 name length | name UTF-8 | u64 n | u32 dim
  | n*dim float32 row-major | u8 has_labels
  | if has_labels: n x u32 labels, u32 C, C x (u32 length + UTF-8 name)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    ConfigError,
    EmptyDatasetError,
    ParseError,
    ValidationError,
)
from .rng import Xoshiro256, mix_seed

MAGIC = b"ZSEB"
VERSION = 1

# sub-stream tags so different uses of one user seed stay independent
STREAM_SHUFFLE = 0x5348554646
STREAM_SUBSAMPLE = 0x53554253


class Modality(IntEnum):
    IMAGE = 0
    TEXT = 1


@dataclass
class EmbeddingSet:
    """A modality-tagged matrix of feature vectors with optional labels."""

    modality: Modality
    encoder_name: str
    vectors: np.ndarray  # (n, dim) float32
    labels: Optional[np.ndarray] = None  # (n,) int64 class indices
    class_names: Optional[list[str]] = None

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(np.asarray(self.vectors, dtype=np.float32))
        if self.vectors.ndim != 2:
            raise ValidationError("vectors must be a 2-D array")
        n, dim = self.vectors.shape
        if n < 1 or dim < 1:
            raise ValidationError(f"embedding set needs n >= 1 and dim >= 1, got {n}x{dim}")
        if not np.all(np.isfinite(self.vectors)):
            raise ValidationError("embedding vectors must be finite (no NaN/Inf)")
        if (self.labels is None) != (self.class_names is None):
            raise ValidationError("labels and class_names must be given together")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValidationError(f"labels must have shape ({n},), got {self.labels.shape}")
            if len(self.class_names) == 0:
                raise ValidationError("labels present but class_names is empty")
            if self.labels.min() < 0 or self.labels.max() >= len(self.class_names):
                raise ValidationError(
                    f"label ids must lie in [0, {len(self.class_names)})"
                )

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def as_float64(self) -> np.ndarray:
        return self.vectors.astype(np.float64)


# ---------------------------------------------------------------------------
# binary I/O
# ---------------------------------------------------------------------------


class _Cursor:
    """Bounded reader over an in-memory buffer; never reads past the end."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, count: int, what: str) -> bytes:
        if self.off + count > len(self.buf):
            raise ParseError(f"truncated file while reading {what}", self.off)
        chunk = self.buf[self.off:self.off + count]
        self.off += count
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def utf8(self, count: int, what: str) -> str:
        start = self.off
        raw = self.take(count, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError(f"invalid UTF-8 in {what}", start) from None


def read_embedding_file(path) -> EmbeddingSet:
    """Parse and validate a ZSEB file. Raises ParseError with a byte offset."""
    buf = Path(path).read_bytes()
    cur = _Cursor(buf)

    if cur.take(4, "magic") != MAGIC:
        raise ParseError(f"bad magic, expected {MAGIC!r}", 0)
    version = cur.u32("version")
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", 4)
    mod_off = cur.off
    modality = cur.u8("modality")
    if modality not in (0, 1):
        raise ParseError(f"modality byte must be 0 or 1, got {modality}", mod_off)
    name_len = cur.u32("encoder-name length")
    encoder_name = cur.utf8(name_len, "encoder name")

    n_off = cur.off
    n = cur.u64("sample count n")
    dim_off = cur.off
    dim = cur.u32("dimension")
    if n == 0:
        raise ParseError("sample count n must be >= 1", n_off)
    if dim == 0:
        raise ParseError("dimension must be >= 1", dim_off)

    payload_off = cur.off
    payload = cur.take(n * dim * 4, "float32 payload")
    vectors = np.frombuffer(payload, dtype="<f4").reshape(n, dim)
    finite = np.isfinite(vectors)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.ravel())[0])
        raise ParseError("non-finite value in payload", payload_off + 4 * bad)

    flag_off = cur.off
    has_labels = cur.u8("has_labels flag")
    if has_labels not in (0, 1):
        raise ParseError(f"has_labels must be 0 or 1, got {has_labels}", flag_off)

    labels = None
    class_names = None
    if has_labels:
        labels_off = cur.off
        raw = cur.take(n * 4, "label ids")
        labels = np.frombuffer(raw, dtype="<u4").astype(np.int64)
        c_off = cur.off
        n_classes = cur.u32("class count")
        if n_classes == 0:
            raise ParseError("class count must be >= 1 when labels are present", c_off)
        if labels.max() >= n_classes:
            bad = int(np.flatnonzero(labels >= n_classes)[0])
            raise ParseError(
                f"label id {int(labels[bad])} out of range for {n_classes} classes",
                labels_off + 4 * bad,
            )
        class_names = []
        for i in range(n_classes):
            length = cur.u32(f"class-name {i} length")
            class_names.append(cur.utf8(length, f"class name {i}"))

    if cur.off != len(buf):
        raise ParseError(f"{len(buf) - cur.off} trailing bytes after payload", cur.off)

    return EmbeddingSet(Modality(modality), encoder_name, vectors.copy(),
                        labels=labels, class_names=class_names)


def embedding_bytes(es: EmbeddingSet) -> bytes:
    """Serialize to canonical ZSEB bytes (writes of equal sets are identical)."""
    name = es.encoder_name.encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<B", int(es.modality)),
        struct.pack("<I", len(name)),
        name,
        struct.pack("<Q", es.n),
        struct.pack("<I", es.dim),
        np.ascontiguousarray(es.vectors, dtype="<f4").tobytes(),
    ]
    if es.labels is not None:
        parts.append(struct.pack("<B", 1))
        parts.append(es.labels.astype("<u4").tobytes())
        parts.append(struct.pack("<I", len(es.class_names)))
        for cname in es.class_names:
            raw = cname.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
    else:
        parts.append(struct.pack("<B", 0))
    return b"".join(parts)


def write_embedding_file(es: EmbeddingSet, path) -> None:
    Path(path).write_bytes(embedding_bytes(es))


def read_prompt_lines(path) -> list[str]:
    """Prompt-bank text file: one prompt per line, blank lines ignored."""
    text = Path(path).read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# batching and subsampling
# ---------------------------------------------------------------------------


@dataclass
class BatchPlan:
    """A seeded Fisher-Yates permutation chopped into batches; the final
    partial batch is kept so one epoch visits every sample exactly once."""

    seed: int
    batch_size: int
    order: list[int] = field(repr=False)

    def batches(self) -> list[list[int]]:
        return [self.order[i:i + self.batch_size]
                for i in range(0, len(self.order), self.batch_size)]


def make_batches(n: int, batch_size: int, seed: int) -> BatchPlan:
    if n == 0:
        raise EmptyDatasetError("cannot batch an empty dataset")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    rng = Xoshiro256(mix_seed(seed, STREAM_SHUFFLE))
    return BatchPlan(seed=seed, batch_size=batch_size, order=rng.permutation(n))


def subsample(es: EmbeddingSet, fraction: float, seed: int) -> EmbeddingSet:
    """Keep ceil(fraction * n) vectors, chosen without replacement.

    Selected indices are emitted in their original order, so two sets
    subsampled with the same (n, seed) stay row-aligned.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return es
    k = math.ceil(fraction * es.n)
    rng = Xoshiro256(mix_seed(seed, STREAM_SUBSAMPLE))
    chosen = sorted(rng.permutation(es.n)[:k])
    return EmbeddingSet(
        es.modality,
        es.encoder_name,
        es.vectors[chosen],
        labels=None if es.labels is None else es.labels[chosen],
        class_names=None if es.class_names is None else list(es.class_names),
    )
