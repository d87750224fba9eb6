"""Writer for the ZSEB embedding interchange format.

This is the whole contract between the exporter and the training library:
files, not imports. Layout (little-endian): magic "ZSEB", u32 version=1,
u8 modality (0 image, 1 text), u32 name length, UTF-8 name, u64 n,
u32 dim, n*dim float32 row-major, u8 has_labels (always 0 here; labels
are attached downstream by whoever knows the dataset).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ZSEB"
VERSION = 1

MODALITY_IMAGE = 0
MODALITY_TEXT = 1


def write_zseb(path, modality: int, encoder_name: str, vectors: np.ndarray) -> None:
    arr = np.ascontiguousarray(vectors, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"vectors must be a nonempty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to write non-finite features")
    if modality not in (MODALITY_IMAGE, MODALITY_TEXT):
        raise ValueError(f"modality must be 0 or 1, got {modality}")
    name = encoder_name.encode("utf-8")
    blob = b"".join([
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<B", modality),
        struct.pack("<I", len(name)),
        name,
        struct.pack("<Q", arr.shape[0]),
        struct.pack("<I", arr.shape[1]),
        arr.tobytes(),
        struct.pack("<B", 0),
    ])
    Path(path).write_bytes(blob)
