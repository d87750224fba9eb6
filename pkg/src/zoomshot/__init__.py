"""Linear alignment of vision-encoder latent spaces to a joint
vision-language latent space, with zero-shot evaluation in both spaces.

Training consumes precomputed embedding files (ZSEB) and combines a
reconstruction loss, a cycle-consistency loss, and prompt-guided
knowledge distillation over a bank of general text prompts. Gradients
come from a small closed-set reverse-mode engine so every loss is
finite-difference checkable; see the `gradcheck` CLI subcommand.
"""

from importlib import resources

from .diffcore import Graph, Tensor2
from .embeddings import (
    BatchPlan,
    EmbeddingSet,
    Modality,
    make_batches,
    read_embedding_file,
    read_prompt_lines,
    subsample,
    write_embedding_file,
)
from .losses import LinearMapPair, LossConfig, PromptBank
from .trainer import ModelScales, TrainConfig, TrainResult, load_model, save_model, train
from .variance import VarianceScale, apply_scale, compute_variance, fit_scale
from .zeroshot import ClassPromptSet, EvalResult, class_embeddings, eval_forward, eval_inverse

__version__ = "0.1.0"


def default_prompts_path():
    """Path of the packaged 50 general training prompts."""
    return resources.files("zoomshot").joinpath("data/general50.txt")
