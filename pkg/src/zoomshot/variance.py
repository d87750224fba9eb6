"""Latent-space variance measurement and rescaling.

The variance of a space is the per-dimension population variance
E[v^2] - E[v]^2, averaged over dimensions to a single scalar, because the
rescaling step multiplies every vector by one scalar. The default scale
factor is sqrt(target / variance), which actually moves the empirical
variance onto the target; the reciprocal direction sqrt(variance / target)
is kept available behind ratio="literal" for fidelity experiments.

Scales are fit on the training set only and persisted in the model file,
then re-applied to evaluation embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateDatasetError
from .embeddings import EmbeddingSet

MIN_VARIANCE = 1e-12


@dataclass(frozen=True)
class VarianceScale:
    dataset_variance: float
    target_variance: float
    scale_factor: float


def compute_variance(es: EmbeddingSet) -> float:
    """Single-pass population variance, mean of per-dimension E[v^2]-E[v]^2."""
    if es.n < 2:
        raise DegenerateDatasetError(f"variance needs n >= 2 samples, got {es.n}")
    v = es.as_float64()
    mean_sq = (v * v).mean(axis=0)
    sq_mean = v.mean(axis=0) ** 2
    return float((mean_sq - sq_mean).mean())


def fit_scale(es: EmbeddingSet, target_variance: float,
              ratio: str = "corrected") -> VarianceScale:
    if not target_variance > 0:
        raise ConfigError(f"target variance must be positive, got {target_variance}")
    if ratio not in ("corrected", "literal"):
        raise ConfigError(f"variance ratio must be 'corrected' or 'literal', got {ratio!r}")
    var = compute_variance(es)
    if var <= MIN_VARIANCE:
        raise DegenerateDatasetError(
            f"dataset variance {var!r} too close to zero to rescale"
        )
    if ratio == "corrected":
        factor = float(np.sqrt(target_variance / var))
    else:
        factor = float(np.sqrt(var / target_variance))
    return VarianceScale(var, float(target_variance), factor)


def apply_scale(es: EmbeddingSet, scale: VarianceScale) -> EmbeddingSet:
    """Multiply every vector by the scale factor; labels and metadata pass
    through untouched. Pairwise cosines are unchanged by construction."""
    return EmbeddingSet(
        es.modality,
        es.encoder_name,
        (es.vectors.astype(np.float64) * scale.scale_factor).astype(np.float32),
        labels=None if es.labels is None else es.labels.copy(),
        class_names=None if es.class_names is None else list(es.class_names),
    )
