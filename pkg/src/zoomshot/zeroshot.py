"""Zero-shot evaluation in both mapping directions.

Forward: map student image features into the teacher space and classify
against class text embeddings there. Inverse: map the class text
embeddings down into the student space and classify raw student features.
Class embeddings come from prompt templates; multiple templates per class
are L2-normalized, averaged, and renormalized (the usual recipe; the
final renormalization is a flag because cosine argmax ignores it).

Features and class embeddings are multiplied by the variance scale
factors persisted at training time, so evaluation sees the same geometry
the maps were trained on.

Evaluation shards rows across threads when ZOOMSHOT_THREADS is set
(0 = all cores); confusion counts are integers, so the reduction is
order-independent and results stay deterministic.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diffcore import cosine_rows
from .embeddings import EmbeddingSet, read_embedding_file
from .errors import (
    DegenerateInputError,
    ShapeError,
    UsageError,
    ValidationError,
)
from .losses import LinearMapPair
from .trainer import ModelScales


@dataclass
class ClassPromptSet:
    """Class names, prompt templates, and one teacher text embedding set
    per template (each holding exactly one embedding per class, in class
    order)."""

    class_names: list[str]
    templates: list[str]
    teacher_text_by_template: list[EmbeddingSet]

    def __post_init__(self):
        c = len(self.class_names)
        if c < 2:
            raise ValidationError(f"need >= 2 classes, got {c}")
        if len(self.templates) != len(self.teacher_text_by_template):
            raise ValidationError(
                f"{len(self.templates)} templates but "
                f"{len(self.teacher_text_by_template)} embedding sets"
            )
        if not self.templates:
            raise ValidationError("need at least one template")
        dims = {es.dim for es in self.teacher_text_by_template}
        if len(dims) > 1:
            raise ValidationError(f"template embedding dims disagree: {sorted(dims)}")
        for t, es in zip(self.templates, self.teacher_text_by_template):
            if es.n != c:
                raise ValidationError(
                    f"template {t!r} has {es.n} embeddings for {c} classes"
                )

    @property
    def c(self) -> int:
        return len(self.class_names)

    @property
    def dim(self) -> int:
        return self.teacher_text_by_template[0].dim


def parse_class_template_text(text: str) -> tuple[list[str], list[str]]:
    """Class-template file: first line the class count c, then c class
    names, then one template per line, each containing a `{}` placeholder."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValidationError("class-template file is empty")
    try:
        c = int(lines[0])
    except ValueError:
        raise ValidationError(f"first line must be the class count, got {lines[0]!r}") from None
    if c < 2:
        raise ValidationError(f"class count must be >= 2, got {c}")
    if len(lines) < 1 + c + 1:
        raise ValidationError(f"expected {c} class names plus at least one template")
    names = lines[1:1 + c]
    templates = lines[1 + c:]
    for t in templates:
        if "{}" not in t:
            raise ValidationError(f"template {t!r} has no {{}} placeholder")
    if len(set(names)) != len(names):
        raise ValidationError("duplicate class names")
    return names, templates


def load_class_bundle(path) -> ClassPromptSet:
    """Load a class/template bundle: a directory holding classes.txt and
    template_NN.zseb files (one per template, in template order)."""
    p = Path(path)
    directory = p if p.is_dir() else p.parent
    text_file = directory / "classes.txt" if p.is_dir() else p
    names, templates = parse_class_template_text(text_file.read_text(encoding="utf-8"))
    sets = []
    for i in range(len(templates)):
        emb_path = directory / f"template_{i:02d}.zseb"
        if not emb_path.exists():
            raise ValidationError(f"missing embedding file for template {i}: {emb_path}")
        sets.append(read_embedding_file(emb_path))
    return ClassPromptSet(names, templates, sets)


def class_embeddings(cp: ClassPromptSet, renormalize: bool = True) -> np.ndarray:
    """Per class: normalize each template embedding, average across
    templates, then (by default) renormalize the mean."""
    stacked = []
    for t, es in zip(cp.templates, cp.teacher_text_by_template):
        v = es.as_float64()
        norms = np.linalg.norm(v, axis=1)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise DegenerateInputError(
                f"zero-norm embedding for class {cp.class_names[int(zero[0])]!r} "
                f"under template {t!r}"
            )
        stacked.append(v / norms[:, None])
    mean = np.mean(stacked, axis=0)
    if renormalize:
        norms = np.linalg.norm(mean, axis=1)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise DegenerateInputError(
                f"template average for class {cp.class_names[int(zero[0])]!r} is zero "
                f"(antipodal template embeddings)"
            )
        mean = mean / norms[:, None]
    return mean


@dataclass
class EvalResult:
    top1_accuracy: float
    per_class_accuracy: list[float]
    confusion_counts: np.ndarray  # (c, c) ints, rows = true class
    n_evaluated: int

    def to_csv(self, class_names: list[str]) -> str:
        lines = ["class,correct,total"]
        for i, name in enumerate(class_names):
            total = int(self.confusion_counts[i].sum())
            correct = int(self.confusion_counts[i, i])
            lines.append(f"{name},{correct},{total}")
        lines.append(f"top1={self.top1_accuracy!r}")
        return "\n".join(lines) + "\n"


def _eval_threads() -> int:
    raw = os.environ.get("ZOOMSHOT_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        raise UsageError(f"ZOOMSHOT_THREADS must be an integer, got {raw!r}") from None
    if k == 0:
        return os.cpu_count() or 1
    return max(1, k)


def _classify(features: np.ndarray, class_emb: np.ndarray,
              labels: np.ndarray, c: int) -> EvalResult:
    """argmax over cosine rows; ties break to the lowest class index."""
    n = features.shape[0]
    threads = _eval_threads()
    confusion = np.zeros((c, c), dtype=np.int64)

    def tally(lo: int, hi: int) -> np.ndarray:
        cos = cosine_rows(features[lo:hi], class_emb)
        preds = np.argmax(cos, axis=1)
        block = np.zeros((c, c), dtype=np.int64)
        np.add.at(block, (labels[lo:hi], preds), 1)
        return block

    if threads == 1 or n < 2 * threads:
        confusion = tally(0, n)
    else:
        chunk = (n + threads - 1) // threads
        bounds = [(i, min(i + chunk, n)) for i in range(0, n, chunk)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for block in pool.map(lambda b: tally(*b), bounds):
                confusion += block

    correct = np.diag(confusion)
    row_totals = confusion.sum(axis=1)
    per_class = [float(correct[i] / row_totals[i]) if row_totals[i] else 0.0
                 for i in range(c)]
    return EvalResult(
        top1_accuracy=float(np.trace(confusion) / n),
        per_class_accuracy=per_class,
        confusion_counts=confusion,
        n_evaluated=n,
    )


def _checked_features(maps: LinearMapPair, es: EmbeddingSet) -> np.ndarray:
    if es.labels is None:
        raise UsageError("evaluation needs labeled embeddings")
    if es.dim != maps.m:
        raise ShapeError(
            f"model expects student dim {maps.m}, embeddings have dim {es.dim}"
        )
    return es.as_float64()


def eval_forward(maps: LinearMapPair, scales: ModelScales,
                 student_imgs: EmbeddingSet, class_emb: np.ndarray) -> EvalResult:
    """Classify h(student features) against teacher-space class embeddings."""
    feats = _checked_features(maps, student_imgs)
    if class_emb.shape[1] != maps.d:
        raise ShapeError(
            f"model expects teacher dim {maps.d}, class embeddings have "
            f"dim {class_emb.shape[1]}"
        )
    mapped = maps.apply_fwd(feats * scales.scale_student)
    txt = class_emb * scales.scale_teacher_txt
    c = len(student_imgs.class_names)
    if class_emb.shape[0] != c:
        raise ShapeError(f"{class_emb.shape[0]} class embeddings for {c} labeled classes")
    return _classify(mapped, txt, student_imgs.labels, c)


def eval_inverse(maps: LinearMapPair, scales: ModelScales,
                 student_imgs: EmbeddingSet, class_emb: np.ndarray) -> EvalResult:
    """Classify raw student features against inverse-mapped class embeddings."""
    feats = _checked_features(maps, student_imgs)
    if class_emb.shape[1] != maps.d:
        raise ShapeError(
            f"model expects teacher dim {maps.d}, class embeddings have "
            f"dim {class_emb.shape[1]}"
        )
    mapped_txt = maps.apply_inv(class_emb * scales.scale_teacher_txt)
    c = len(student_imgs.class_names)
    if class_emb.shape[0] != c:
        raise ShapeError(f"{class_emb.shape[0]} class embeddings for {c} labeled classes")
    return _classify(feats * scales.scale_student, mapped_txt, student_imgs.labels, c)
