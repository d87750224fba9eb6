"""Training loop: variance rescaling, batched loss descent, persistence.

One step = build the total-loss graph on a batch, backward, Adam update of
both maps jointly under a per-step cosine-annealed learning rate. Runs are
bit-deterministic for a fixed config and seed: shuffles, init and
subsampling all come from the package PRNG, and the persisted report
carries no wall-clock columns.

Model file "ZSLM" layout (little-endian):
  magic "ZSLM" | u32 version=1 | u32 m | u32 d | u8 affine
  | f64 scale_student | f64 scale_teacher_img | f64 scale_teacher_txt
  | f64 target_variance | w_fwd d*m f64 row-major | (affine: b_fwd d f64)
  | w_inv m*d f64 | (affine: b_inv m f64)
  | u32 digest length | config digest UTF-8 (canonical JSON)
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .diffcore import Graph
from .embeddings import EmbeddingSet, make_batches, subsample
from .errors import ConfigError, PairingError, ParseError, ShapeError, UsageError
from .losses import LinearMapPair, LossConfig, PromptBank, TrainableMaps, total_loss
from .rng import Xoshiro256, mix_seed
from .variance import fit_scale

MODEL_MAGIC = b"ZSLM"
MODEL_VERSION = 1

STREAM_INIT = 0x494E4954
STREAM_EPOCH = 0x45504F43


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    epochs: int = 1
    batch_size: int = 256
    target_variance: float = 4.5
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    data_fraction: float = 1.0
    loss: LossConfig = field(default_factory=LossConfig)
    affine: bool = False
    variance_ratio: str = "corrected"
    init: str = "fanin"

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.target_variance > 0:
            raise ConfigError(f"target_variance must be positive, got {self.target_variance}")
        if not 0.0 < self.data_fraction <= 1.0:
            raise ConfigError(f"data_fraction must be in (0, 1], got {self.data_fraction}")
        if self.variance_ratio not in ("corrected", "literal"):
            raise ConfigError(f"variance_ratio must be 'corrected' or 'literal', "
                              f"got {self.variance_ratio!r}")
        if self.init not in ("fanin", "identity"):
            raise ConfigError(f"init must be 'fanin' or 'identity', got {self.init!r}")


def config_digest(cfg: TrainConfig) -> str:
    """Canonical JSON of every config field; stored inside the model file."""
    return json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class ModelScales:
    scale_student: float
    scale_teacher_img: float
    scale_teacher_txt: float
    target_variance: float


@dataclass
class StepRecord:
    step: int
    lr: float
    total: float
    terms: dict[str, float]
    wall_time: float  # in-memory only; the persisted CSV stays byte-deterministic


@dataclass
class TrainReport:
    steps: list[StepRecord] = field(default_factory=list)
    param_checksums: dict[str, str] = field(default_factory=dict)

    def to_csv(self, path) -> None:
        lines = ["step,lr,loss_total,loss_mse,loss_cc,loss_pgkd"]
        for rec in self.steps:
            lines.append(",".join([
                str(rec.step),
                repr(rec.lr),
                repr(rec.total),
                repr(rec.terms.get("mse", 0.0)),
                repr(rec.terms.get("cc", 0.0)),
                repr(rec.terms.get("pgkd", 0.0)),
            ]))
        for name in sorted(self.param_checksums):
            lines.append(f"# checksum {name}={self.param_checksums[name]}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# schedule and optimizer
# ---------------------------------------------------------------------------


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """lr0 * (1 + cos(pi * step / (total_steps - 1))) / 2, annealed to 0."""
    if total_steps < 1:
        raise UsageError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step < total_steps:
        raise UsageError(f"step {step} outside [0, {total_steps})")
    if total_steps == 1:
        return lr0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int
    beta1: float
    beta2: float
    eps: float

    @classmethod
    def init(cls, params: list[np.ndarray], beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params],
                   t=0, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState, lr: float) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place on the parameter arrays."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise UsageError("params, grads and state must have matching lengths")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise UsageError(f"shape mismatch in adam_step: {p.shape} vs {g.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    maps: LinearMapPair
    scales: ModelScales
    report: TrainReport


def train(student_imgs: EmbeddingSet, teacher_imgs: EmbeddingSet,
          prompt_bank: Optional[PromptBank], cfg: TrainConfig) -> TrainResult:
    """Train both maps on paired image embeddings and an (unpaired) prompt
    bank. The two image sets must come from one manifest in one order."""
    if student_imgs.n != teacher_imgs.n:
        raise PairingError(
            f"student and teacher image sets must describe the same images: "
            f"{student_imgs.n} vs {teacher_imgs.n} rows"
        )
    needs_prompts = cfg.loss.use_cc or cfg.loss.use_pgkd
    if needs_prompts and prompt_bank is None:
        raise ConfigError("cycle and distillation losses need --teacher-prompts")
    if prompt_bank is not None and prompt_bank.dim != teacher_imgs.dim:
        raise ShapeError(
            f"prompt bank dim {prompt_bank.dim} != teacher dim {teacher_imgs.dim}"
        )

    eff_student = subsample(student_imgs, cfg.data_fraction, cfg.seed)
    eff_teacher = subsample(teacher_imgs, cfg.data_fraction, cfg.seed)

    s_student = fit_scale(eff_student, cfg.target_variance, cfg.variance_ratio)
    s_teacher = fit_scale(eff_teacher, cfg.target_variance, cfg.variance_ratio)
    if prompt_bank is not None:
        s_text = fit_scale(prompt_bank.teacher_text, cfg.target_variance,
                           cfg.variance_ratio)
    else:
        # no text data to fit; text shares the teacher latent space
        s_text = s_teacher

    xs_all = eff_student.as_float64() * s_student.scale_factor
    yt_all = eff_teacher.as_float64() * s_teacher.scale_factor
    tt_all = None
    if prompt_bank is not None:
        tt_all = prompt_bank.teacher_text.as_float64() * s_text.scale_factor

    m = student_imgs.dim
    d = teacher_imgs.dim
    if cfg.init == "identity":
        maps = TrainableMaps.init_identity(m, d, cfg.affine)
    else:
        maps = TrainableMaps.init_fanin(m, d, cfg.affine,
                                        Xoshiro256(mix_seed(cfg.seed, STREAM_INIT)))

    n_eff = eff_student.n
    steps_per_epoch = math.ceil(n_eff / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch

    params = [p.data for p in maps.params()]
    state = AdamState.init(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    report = TrainReport()

    step = 0
    for epoch in range(cfg.epochs):
        plan = make_batches(n_eff, cfg.batch_size,
                            mix_seed(cfg.seed, STREAM_EPOCH + epoch))
        for idx in plan.batches():
            t0 = time.perf_counter()
            g = Graph()
            loss_node, terms = total_loss(g, maps, xs_all[idx], yt_all[idx],
                                          tt_all, cfg.loss)
            for p in maps.params():
                p.zero_grad()
            grad_map = g.backward(loss_node)
            grads = [grad_map[p] for p in maps.params()]
            lr = cosine_lr(step, total_steps, cfg.lr0)
            adam_step(params, grads, state, lr)
            report.steps.append(StepRecord(
                step=step, lr=lr, total=loss_node.item(), terms=terms,
                wall_time=time.perf_counter() - t0,
            ))
            step += 1

    pair = maps.to_pair()
    report.param_checksums = {
        "w_fwd": hashlib.sha256(pair.w_fwd.tobytes()).hexdigest(),
        "w_inv": hashlib.sha256(pair.w_inv.tobytes()).hexdigest(),
    }
    if pair.affine:
        report.param_checksums["b_fwd"] = hashlib.sha256(pair.b_fwd.tobytes()).hexdigest()
        report.param_checksums["b_inv"] = hashlib.sha256(pair.b_inv.tobytes()).hexdigest()

    scales = ModelScales(
        scale_student=s_student.scale_factor,
        scale_teacher_img=s_teacher.scale_factor,
        scale_teacher_txt=s_text.scale_factor,
        target_variance=cfg.target_variance,
    )
    return TrainResult(maps=pair, scales=scales, report=report)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_model(maps: LinearMapPair, scales: ModelScales, cfg_digest: str,
               path) -> None:
    digest = cfg_digest.encode("utf-8")
    parts = [
        MODEL_MAGIC,
        struct.pack("<I", MODEL_VERSION),
        struct.pack("<I", maps.m),
        struct.pack("<I", maps.d),
        struct.pack("<B", 1 if maps.affine else 0),
        struct.pack("<d", scales.scale_student),
        struct.pack("<d", scales.scale_teacher_img),
        struct.pack("<d", scales.scale_teacher_txt),
        struct.pack("<d", scales.target_variance),
        np.ascontiguousarray(maps.w_fwd, dtype="<f8").tobytes(),
    ]
    if maps.affine:
        parts.append(np.ascontiguousarray(maps.b_fwd, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(maps.w_inv, dtype="<f8").tobytes())
    if maps.affine:
        parts.append(np.ascontiguousarray(maps.b_inv, dtype="<f8").tobytes())
    parts.append(struct.pack("<I", len(digest)))
    parts.append(digest)
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> tuple[LinearMapPair, ModelScales, str]:
    from .embeddings import _Cursor  # same bounded-cursor discipline

    buf = Path(path).read_bytes()
    cur = _Cursor(buf)
    if cur.take(4, "magic") != MODEL_MAGIC:
        raise ParseError(f"bad magic, expected {MODEL_MAGIC!r}", 0)
    version = cur.u32("version")
    if version != MODEL_VERSION:
        raise ParseError(f"unsupported model version {version}", 4)
    m_off = cur.off
    m = cur.u32("student dim m")
    d_off = cur.off
    d = cur.u32("teacher dim d")
    if m == 0 or d == 0:
        raise ParseError("dims must be >= 1", m_off if m == 0 else d_off)
    aff_off = cur.off
    affine = cur.u8("affine flag")
    if affine not in (0, 1):
        raise ParseError(f"affine flag must be 0 or 1, got {affine}", aff_off)

    def f64(what: str) -> float:
        off = cur.off
        val = struct.unpack("<d", cur.take(8, what))[0]
        if not math.isfinite(val):
            raise ParseError(f"non-finite {what}", off)
        return val

    def matrix(rows: int, cols: int, what: str) -> np.ndarray:
        off = cur.off
        raw = cur.take(rows * cols * 8, what)
        arr = np.frombuffer(raw, dtype="<f8").reshape(rows, cols)
        finite = np.isfinite(arr)
        if not finite.all():
            bad = int(np.flatnonzero(~finite.ravel())[0])
            raise ParseError(f"non-finite value in {what}", off + 8 * bad)
        return arr.copy()

    scales = ModelScales(
        scale_student=f64("scale_student"),
        scale_teacher_img=f64("scale_teacher_img"),
        scale_teacher_txt=f64("scale_teacher_txt"),
        target_variance=f64("target_variance"),
    )
    w_fwd = matrix(d, m, "w_fwd")
    b_fwd = matrix(1, d, "b_fwd").reshape(d) if affine else None
    w_inv = matrix(m, d, "w_inv")
    b_inv = matrix(1, m, "b_inv").reshape(m) if affine else None
    digest_len = cur.u32("digest length")
    digest = cur.utf8(digest_len, "config digest")
    if cur.off != len(buf):
        raise ParseError(f"{len(buf) - cur.off} trailing bytes after digest", cur.off)
    return LinearMapPair(w_fwd, w_inv, b_fwd, b_inv), scales, digest
