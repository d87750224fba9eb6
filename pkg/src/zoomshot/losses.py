"""The three training losses over a pair of linear maps.

Everything here builds differentiable graphs over the forward map h
(student m-dim space -> teacher d-dim space) and the independently learned
inverse map (d -> m; never a matrix inverse, the dims differ in general):

  * reconstruction: mean squared distance between mapped student image
    features and teacher image features of the same images,
  * cycle consistency: L1 reconstruction through the round trip, applied
    in the student image, teacher image and teacher text subspaces,
  * prompt-guided distillation: the teacher's zero-shot distribution over
    a bank of text prompts is matched by three mapped student classifiers,
    with either an L1 (logit matching) or high-temperature cross-entropy
    distance.

Teacher features are constants; gradients only ever flow into the four map
parameters. Image batches fed to the reconstruction and distillation
losses must describe the same images row-for-row (exported from one
manifest in one order); that is the only pairing the package ever needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .diffcore import Graph, Tensor2, cosine_rows, softmax_rows
from .embeddings import EmbeddingSet, Modality
from .errors import ConfigError, PairingError, ValidationError
from .rng import Xoshiro256

PGKD_METRICS = ("lm", "htce")


@dataclass
class LinearMapPair:
    """The learned maps. w_fwd is d x m (applied as x -> w_fwd @ x), w_inv
    is m x d; biases are optional and off by default."""

    w_fwd: np.ndarray
    w_inv: np.ndarray
    b_fwd: Optional[np.ndarray] = None
    b_inv: Optional[np.ndarray] = None

    def __post_init__(self):
        self.w_fwd = np.ascontiguousarray(self.w_fwd, dtype=np.float64)
        self.w_inv = np.ascontiguousarray(self.w_inv, dtype=np.float64)
        d, m = self.w_fwd.shape
        if self.w_inv.shape != (m, d):
            raise ValidationError(
                f"w_inv must be {m}x{d} to pair with w_fwd {d}x{m}, got {self.w_inv.shape}"
            )
        if (self.b_fwd is None) != (self.b_inv is None):
            raise ValidationError("biases must be given for both maps or neither")
        if self.b_fwd is not None:
            self.b_fwd = np.ascontiguousarray(self.b_fwd, dtype=np.float64).reshape(d)
            self.b_inv = np.ascontiguousarray(self.b_inv, dtype=np.float64).reshape(m)
        for arr in (self.w_fwd, self.w_inv, self.b_fwd, self.b_inv):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValidationError("map parameters must be finite")

    @property
    def m(self) -> int:
        return self.w_fwd.shape[1]

    @property
    def d(self) -> int:
        return self.w_fwd.shape[0]

    @property
    def affine(self) -> bool:
        return self.b_fwd is not None

    def apply_fwd(self, x: np.ndarray) -> np.ndarray:
        """Map a batch (n x m) into the teacher space (n x d)."""
        out = x @ self.w_fwd.T
        if self.b_fwd is not None:
            out = out + self.b_fwd
        return out

    def apply_inv(self, y: np.ndarray) -> np.ndarray:
        """Map a batch (n x d) into the student space (n x m)."""
        out = y @ self.w_inv.T
        if self.b_inv is not None:
            out = out + self.b_inv
        return out


@dataclass
class LossConfig:
    use_mse: bool = True
    use_cc: bool = True
    use_pgkd: bool = True
    weight_mse: float = 1.0
    weight_cc: float = 1.0
    weight_pgkd: float = 1.0
    pgkd_metric: str = "lm"
    kd_temperature: float = 20.0
    logit_scale: float = 1.0
    pgkd_on_probabilities: bool = True
    htce_t2_correction: bool = False

    def __post_init__(self):
        if not (self.use_mse or self.use_cc or self.use_pgkd):
            raise ConfigError("at least one loss term must be enabled")
        if self.pgkd_metric not in PGKD_METRICS:
            raise ConfigError(f"pgkd_metric must be one of {PGKD_METRICS}, got {self.pgkd_metric!r}")
        if not self.kd_temperature > 0:
            raise ConfigError(f"kd_temperature must be positive, got {self.kd_temperature}")
        if not self.logit_scale > 0:
            raise ConfigError(f"logit_scale must be positive, got {self.logit_scale}")
        for name in ("weight_mse", "weight_cc", "weight_pgkd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.pgkd_metric == "htce" and not self.pgkd_on_probabilities:
            raise ConfigError("cross-entropy distillation requires probability outputs; "
                              "pgkd_on_probabilities=False only pairs with pgkd_metric='lm'")

    def enabled(self) -> list[str]:
        out = []
        if self.use_mse:
            out.append("mse")
        if self.use_cc:
            out.append("cc")
        if self.use_pgkd:
            out.append("pgkd")
        return out


@dataclass
class PromptBank:
    """Teacher text embeddings of the training prompts."""

    teacher_text: EmbeddingSet
    source: Optional[str] = None

    def __post_init__(self):
        if self.teacher_text.modality != Modality.TEXT:
            raise ValidationError("prompt bank must hold text-modality embeddings")
        if self.teacher_text.n < 2:
            raise ConfigError(f"prompt bank needs >= 2 prompts, got {self.teacher_text.n}")

    @property
    def n(self) -> int:
        return self.teacher_text.n

    @property
    def dim(self) -> int:
        return self.teacher_text.dim


def _prompt_matrix(prompts: Union[np.ndarray, PromptBank]) -> np.ndarray:
    if isinstance(prompts, PromptBank):
        return prompts.teacher_text.as_float64()
    return np.asarray(prompts, dtype=np.float64)


class TrainableMaps:
    """Graph-side parameters for the two maps.

    Parameters are stored transposed (m x d and d x m) so batches apply by
    right multiplication; LinearMapPair keeps the conventional orientation.
    """

    def __init__(self, p_fwd: np.ndarray, p_inv: np.ndarray,
                 b_fwd: Optional[np.ndarray] = None,
                 b_inv: Optional[np.ndarray] = None):
        self.p_fwd = Tensor2(p_fwd, requires_grad=True)   # (m, d)
        self.p_inv = Tensor2(p_inv, requires_grad=True)   # (d, m)
        self.b_fwd = None if b_fwd is None else Tensor2(b_fwd.reshape(1, -1), requires_grad=True)
        self.b_inv = None if b_inv is None else Tensor2(b_inv.reshape(1, -1), requires_grad=True)

    @classmethod
    def init_fanin(cls, m: int, d: int, affine: bool, rng: Xoshiro256) -> "TrainableMaps":
        """Uniform fan-in init, bounds +-1/sqrt(input dim); biases start at 0."""
        bound_f = 1.0 / np.sqrt(m)
        bound_i = 1.0 / np.sqrt(d)
        p_fwd = np.array(rng.uniform(-bound_f, bound_f, m * d)).reshape(m, d)
        p_inv = np.array(rng.uniform(-bound_i, bound_i, d * m)).reshape(d, m)
        b_f = np.zeros(d) if affine else None
        b_i = np.zeros(m) if affine else None
        return cls(p_fwd, p_inv, b_f, b_i)

    @classmethod
    def init_identity(cls, m: int, d: int, affine: bool) -> "TrainableMaps":
        if m != d:
            raise ConfigError(f"identity init needs m == d, got m={m}, d={d}")
        b_f = np.zeros(d) if affine else None
        b_i = np.zeros(m) if affine else None
        return cls(np.eye(m), np.eye(m), b_f, b_i)

    @classmethod
    def from_pair(cls, pair: LinearMapPair) -> "TrainableMaps":
        return cls(pair.w_fwd.T.copy(), pair.w_inv.T.copy(),
                   None if pair.b_fwd is None else pair.b_fwd.copy(),
                   None if pair.b_inv is None else pair.b_inv.copy())

    def to_pair(self) -> LinearMapPair:
        return LinearMapPair(
            w_fwd=self.p_fwd.data.T.copy(),
            w_inv=self.p_inv.data.T.copy(),
            b_fwd=None if self.b_fwd is None else self.b_fwd.data.reshape(-1).copy(),
            b_inv=None if self.b_inv is None else self.b_inv.data.reshape(-1).copy(),
        )

    @property
    def m(self) -> int:
        return self.p_fwd.rows

    @property
    def d(self) -> int:
        return self.p_fwd.cols

    def params(self) -> list[Tensor2]:
        out = [self.p_fwd, self.p_inv]
        if self.b_fwd is not None:
            out.extend([self.b_fwd, self.b_inv])
        return out

    def fwd(self, g: Graph, x: Tensor2) -> Tensor2:
        out = g.matmul(x, self.p_fwd)
        if self.b_fwd is not None:
            ones = Tensor2(np.ones((x.rows, 1)))
            out = g.add(out, g.matmul(ones, self.b_fwd))
        return out

    def inv(self, g: Graph, y: Tensor2) -> Tensor2:
        out = g.matmul(y, self.p_inv)
        if self.b_inv is not None:
            ones = Tensor2(np.ones((y.rows, 1)))
            out = g.add(out, g.matmul(ones, self.b_inv))
        return out


def _paired(student: np.ndarray, teacher: np.ndarray, what: str) -> None:
    if student.shape[0] != teacher.shape[0]:
        raise PairingError(
            f"{what} needs image batches of the same images: student has "
            f"{student.shape[0]} rows, teacher has {teacher.shape[0]}"
        )


def loss_mse(g: Graph, maps: TrainableMaps, student_batch: np.ndarray,
             teacher_batch: np.ndarray) -> Tensor2:
    """Reconstruction loss: mean squared distance between h(student) and
    the teacher image features of the same images."""
    _paired(student_batch, teacher_batch, "reconstruction loss")
    mapped = maps.fwd(g, Tensor2(student_batch))
    return g.mse_mean(mapped, Tensor2(teacher_batch))


def loss_cycle(g: Graph, maps: TrainableMaps, student_batch: np.ndarray,
               teacher_img_batch: np.ndarray,
               prompts: Union[np.ndarray, PromptBank]) -> Tensor2:
    """Cycle consistency: L1 round-trip errors in the student image,
    teacher image and teacher text subspaces, each averaged over its own
    batch."""
    tt = _prompt_matrix(prompts)
    if tt.shape[0] == 0:
        raise ConfigError("cycle loss needs a nonempty prompt bank")
    xs = Tensor2(student_batch)
    yt = Tensor2(teacher_img_batch)
    pt = Tensor2(tt)
    term_s = g.l1_mean(maps.inv(g, maps.fwd(g, xs)), xs)
    term_t = g.l1_mean(maps.fwd(g, maps.inv(g, yt)), yt)
    term_p = g.l1_mean(maps.fwd(g, maps.inv(g, pt)), pt)
    return g.add(g.add(term_s, term_t), term_p)


def zero_shot_logits(g: Graph, img: Tensor2, txt: Tensor2, logit_scale: float,
                     temperature: float) -> tuple[Tensor2, Tensor2]:
    """Scaled cosine logits and their row-softmax distribution."""
    logits = g.scale(g.row_cosine(img, txt), logit_scale)
    probs = g.row_softmax(logits, temperature)
    return logits, probs


def zero_shot_probs_np(img: np.ndarray, txt: np.ndarray, logit_scale: float,
                       temperature: float) -> tuple[np.ndarray, np.ndarray]:
    """Constant-side twin of zero_shot_logits, same kernels, no graph."""
    logits = logit_scale * cosine_rows(img, txt)
    return logits, softmax_rows(logits, temperature)


def loss_pgkd(g: Graph, maps: TrainableMaps, student_batch: np.ndarray,
              teacher_img_batch: np.ndarray,
              prompts: Union[np.ndarray, PromptBank],
              cfg: LossConfig) -> Tensor2:
    """Prompt-guided distillation.

    The teacher classifier over the prompt bank is a constant target; the
    three student classifiers (mapped image vs teacher text, raw image vs
    inverse-mapped text, inverse-mapped teacher image vs inverse-mapped
    text) are pulled toward it under the configured distance.
    """
    _paired(student_batch, teacher_img_batch, "prompt-guided distillation")
    tt = _prompt_matrix(prompts)
    if tt.shape[0] < 2:
        raise ConfigError(f"distillation needs >= 2 prompts, got {tt.shape[0]}")

    # distances compare the classifier outputs of Eq.-style softmaxed
    # cosines; logit matching uses the plain softmax, cross-entropy uses
    # the high distillation temperature on both sides
    if cfg.pgkd_metric == "htce":
        temperature = cfg.kd_temperature
    else:
        temperature = 1.0

    t_logits, t_probs = zero_shot_probs_np(teacher_img_batch, tt,
                                           cfg.logit_scale, temperature)
    teacher_logits = Tensor2(t_logits)
    teacher_probs = Tensor2(t_probs)

    xs = Tensor2(student_batch)
    yt = Tensor2(teacher_img_batch)
    pt = Tensor2(tt)

    student_pairs = (
        (maps.fwd(g, xs), pt),
        (xs, maps.inv(g, pt)),
        (maps.inv(g, yt), maps.inv(g, pt)),
    )

    total = None
    for img_node, txt_node in student_pairs:
        logits, probs = zero_shot_logits(g, img_node, txt_node,
                                         cfg.logit_scale, temperature)
        if cfg.pgkd_metric == "htce":
            term = g.cross_entropy_rows(teacher_probs, probs)
            if cfg.htce_t2_correction:
                term = g.scale(term, cfg.kd_temperature ** 2)
        elif cfg.pgkd_on_probabilities:
            term = g.l1_mean(teacher_probs, probs)
        else:
            term = g.l1_mean(teacher_logits, logits)
        total = term if total is None else g.add(total, term)
    return total


def total_loss(g: Graph, maps: TrainableMaps, student_batch: np.ndarray,
               teacher_img_batch: np.ndarray,
               prompts: Union[np.ndarray, PromptBank, None],
               cfg: LossConfig) -> tuple[Tensor2, dict[str, float]]:
    """Weighted sum of the enabled terms plus its per-term decomposition.

    The decomposition holds each term's weighted contribution, so the
    values sum to the total.
    """
    if (cfg.use_cc or cfg.use_pgkd) and prompts is None:
        raise ConfigError("cycle and distillation losses need a prompt bank")

    # parameters untouched by the enabled terms still get (zero) gradients
    for p in maps.params():
        g.watch(p)

    terms: list[tuple[str, Tensor2]] = []
    if cfg.use_mse:
        node = loss_mse(g, maps, student_batch, teacher_img_batch)
        terms.append(("mse", g.scale(node, cfg.weight_mse)))
    if cfg.use_cc:
        node = loss_cycle(g, maps, student_batch, teacher_img_batch, prompts)
        terms.append(("cc", g.scale(node, cfg.weight_cc)))
    if cfg.use_pgkd:
        node = loss_pgkd(g, maps, student_batch, teacher_img_batch, prompts, cfg)
        terms.append(("pgkd", g.scale(node, cfg.weight_pgkd)))
    if not terms:
        raise ConfigError("all loss terms are disabled")

    total = terms[0][1]
    for _, node in terms[1:]:
        total = g.add(total, node)
    decomposition = {name: node.item() for name, node in terms}
    return total, decomposition
