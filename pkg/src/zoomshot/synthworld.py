"""Synthetic teacher/student latent worlds with a planted linear map.

A world plants a full-rank map A (teacher dim x student dim, condition
number capped at a requested bound) and class prototypes that live inside
the column space of A, so teacher image features relate to student
features exactly linearly (teacher = A @ student). Text embeddings sit at
a constant offset along a direction orthogonal to the image subspace,
planting a controllable modality gap. Pseudo-inverses appear only here,
in data generation; learning never touches them.

World directory layout:
  student_train.zseb  teacher_train.zseb   (unlabeled, row-paired)
  student_eval.zseb   teacher_eval.zseb    (labeled)
  prompts.zseb                              (text, training prompt bank)
  classes/classes.txt  classes/template_00.zseb
  ground_truth.zsgt                         (the planted A, for oracles)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingSet, Modality, write_embedding_file
from .errors import ConfigError, ParseError
from .rng import Xoshiro256, mix_seed

GT_MAGIC = b"ZSGT"
GT_VERSION = 1

MAX_PROTO_COSINE = 0.8

STREAM_MAP = 0x4D4150
STREAM_PROTO = 0x50524F54
STREAM_NOISE = 0x4E4F4953
STREAM_LABEL = 0x4C41424C
STREAM_PROMPT = 0x50524D50
STREAM_GAP = 0x474150


@dataclass
class WorldSpec:
    m: int = 12
    d: int = 16
    n_train: int = 2000
    n_eval: int = 1000
    c: int = 10
    noise_sigma: float = 0.01
    gap_offset: float = 0.5
    condition_bound: float = 3.0
    seed: int = 0
    n_prompts: int = 50

    def __post_init__(self):
        if self.m < 1 or self.d < 1:
            raise ConfigError(f"dims must be >= 1, got m={self.m}, d={self.d}")
        if self.c < 2:
            raise ConfigError(f"need >= 2 classes, got {self.c}")
        if self.n_train < self.c:
            raise ConfigError(f"n_train must be >= c, got {self.n_train} < {self.c}")
        if self.n_eval < 1:
            raise ConfigError("n_eval must be >= 1")
        if self.noise_sigma < 0 or self.gap_offset < 0:
            raise ConfigError("noise_sigma and gap_offset must be nonnegative")
        if self.condition_bound < 1:
            raise ConfigError(f"condition_bound must be >= 1, got {self.condition_bound}")
        if self.n_prompts < 2:
            raise ConfigError("need >= 2 training prompts")


@dataclass
class World:
    spec: WorldSpec
    a: np.ndarray  # planted map, (d, m)
    student_train: EmbeddingSet
    teacher_train: EmbeddingSet
    student_eval: EmbeddingSet
    teacher_eval: EmbeddingSet
    prompts: EmbeddingSet
    class_names: list[str]
    templates: list[str]
    class_text: EmbeddingSet  # one teacher text embedding per class


def _gauss_matrix(rng: Xoshiro256, rows: int, cols: int) -> np.ndarray:
    return np.array(rng.gauss(rows * cols)).reshape(rows, cols)


def _planted_map(rng: Xoshiro256, d: int, m: int, condition_bound: float):
    """A = Qu diag(s) Qv^T with singular values spanning the allowed
    condition range. Returns (A, Qu, Qv, singular values)."""
    r = min(d, m)
    qu, _ = np.linalg.qr(_gauss_matrix(rng, d, r))
    qv, _ = np.linalg.qr(_gauss_matrix(rng, m, r))
    if r == 1:
        svals = np.array([1.0])
    else:
        svals = np.geomspace(1.0, condition_bound, r)
    a = qu @ np.diag(svals) @ qv.T
    return a, qu, qv, svals


def _sample_prototypes(rng: Xoshiro256, a: np.ndarray, c: int) -> np.ndarray:
    """Unit prototypes inside col(A), rejection-sampled to keep pairwise
    cosines below MAX_PROTO_COSINE so classes stay distinguishable."""
    d, m = a.shape
    protos: list[np.ndarray] = []
    attempts = 0
    max_attempts = 200 * c
    while len(protos) < c:
        if attempts >= max_attempts:
            raise ConfigError(
                f"could not place {c} prototypes with pairwise cosine < "
                f"{MAX_PROTO_COSINE} in {m} planted dimensions"
            )
        attempts += 1
        z = np.array(rng.gauss(m))
        p = a @ z
        norm = np.linalg.norm(p)
        if norm == 0.0:
            continue
        p = p / norm
        if all(abs(float(p @ q)) < MAX_PROTO_COSINE for q in protos):
            protos.append(p)
    return np.stack(protos)


def generate(spec: WorldSpec) -> World:
    """Deterministic world from the spec seed; see the module docstring
    for the geometry."""
    a, qu, qv, svals = _planted_map(
        Xoshiro256(mix_seed(spec.seed, STREAM_MAP)), spec.d, spec.m,
        spec.condition_bound)
    projector = qu @ qu.T
    pinv = qv @ np.diag(1.0 / svals) @ qu.T  # generation-time only

    protos = _sample_prototypes(
        Xoshiro256(mix_seed(spec.seed, STREAM_PROTO)), a, spec.c)

    # gap direction: orthogonal to the image subspace when one exists
    gap_rng = Xoshiro256(mix_seed(spec.seed, STREAM_GAP))
    raw = np.array(gap_rng.gauss(spec.d))
    residual = raw - projector @ raw
    if np.linalg.norm(residual) > 1e-9:
        gap_dir = residual / np.linalg.norm(residual)
    else:
        gap_dir = raw / np.linalg.norm(raw)

    label_rng = Xoshiro256(mix_seed(spec.seed, STREAM_LABEL))
    noise_rng = Xoshiro256(mix_seed(spec.seed, STREAM_NOISE))
    n_total = spec.n_train + spec.n_eval
    labels = np.array([label_rng.next_below(spec.c) for _ in range(n_total)],
                      dtype=np.int64)
    noise = _gauss_matrix(noise_rng, n_total, spec.d) * spec.noise_sigma
    teacher = protos[labels] + noise @ projector.T  # noise kept inside col(A)
    student = teacher @ pinv.T

    prompt_rng = Xoshiro256(mix_seed(spec.seed, STREAM_PROMPT))
    pz = _gauss_matrix(prompt_rng, spec.n_prompts, spec.m)
    pimg = pz @ a.T
    pimg = pimg / np.linalg.norm(pimg, axis=1, keepdims=True)
    prompts = pimg + spec.gap_offset * gap_dir

    class_text = protos + spec.gap_offset * gap_dir
    class_names = [f"class_{i:02d}" for i in range(spec.c)]
    templates = ["an image of a {}"]

    n_tr = spec.n_train
    student_name = f"synth-student-m{spec.m}"
    teacher_name = f"synth-teacher-d{spec.d}"
    return World(
        spec=spec,
        a=a,
        student_train=EmbeddingSet(Modality.IMAGE, student_name, student[:n_tr]),
        teacher_train=EmbeddingSet(Modality.IMAGE, teacher_name, teacher[:n_tr]),
        student_eval=EmbeddingSet(Modality.IMAGE, student_name, student[n_tr:],
                                  labels=labels[n_tr:], class_names=list(class_names)),
        teacher_eval=EmbeddingSet(Modality.IMAGE, teacher_name, teacher[n_tr:],
                                  labels=labels[n_tr:], class_names=list(class_names)),
        prompts=EmbeddingSet(Modality.TEXT, teacher_name, prompts),
        class_names=class_names,
        templates=templates,
        class_text=EmbeddingSet(Modality.TEXT, teacher_name, class_text),
    )


def write_world(world: World, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    classes_dir = out / "classes"
    classes_dir.mkdir(exist_ok=True)

    paths = {
        "student_train": out / "student_train.zseb",
        "teacher_train": out / "teacher_train.zseb",
        "student_eval": out / "student_eval.zseb",
        "teacher_eval": out / "teacher_eval.zseb",
        "prompts": out / "prompts.zseb",
        "classes": classes_dir / "classes.txt",
        "class_text": classes_dir / "template_00.zseb",
        "ground_truth": out / "ground_truth.zsgt",
    }
    write_embedding_file(world.student_train, paths["student_train"])
    write_embedding_file(world.teacher_train, paths["teacher_train"])
    write_embedding_file(world.student_eval, paths["student_eval"])
    write_embedding_file(world.teacher_eval, paths["teacher_eval"])
    write_embedding_file(world.prompts, paths["prompts"])
    write_embedding_file(world.class_text, paths["class_text"])

    lines = [str(world.spec.c), *world.class_names, *world.templates]
    paths["classes"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_ground_truth(world.a, paths["ground_truth"])
    return paths


def write_ground_truth(a: np.ndarray, path) -> None:
    d, m = a.shape
    blob = b"".join([
        GT_MAGIC,
        struct.pack("<I", GT_VERSION),
        struct.pack("<I", d),
        struct.pack("<I", m),
        np.ascontiguousarray(a, dtype="<f8").tobytes(),
    ])
    Path(path).write_bytes(blob)


def read_ground_truth(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != GT_MAGIC:
        raise ParseError(f"bad magic, expected {GT_MAGIC!r}", 0)
    if len(buf) < 16:
        raise ParseError("truncated ground-truth header", len(buf))
    version, d, m = struct.unpack("<III", buf[4:16])
    if version != GT_VERSION:
        raise ParseError(f"unsupported ground-truth version {version}", 4)
    need = 16 + d * m * 8
    if len(buf) != need:
        raise ParseError(f"expected {need} bytes, file has {len(buf)}", min(len(buf), need))
    return np.frombuffer(buf[16:], dtype="<f8").reshape(d, m).copy()
