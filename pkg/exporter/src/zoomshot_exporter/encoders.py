"""Pretrained encoder registry.

Image encoders map PIL images to pooled feature vectors; text encoders map
strings to embeddings in the teacher's joint space. Every encoder runs in
eval mode under no_grad on CPU by default, so repeated exports of one
manifest are bit-identical. Each encoder carries a preprocessing
description that gets recorded in the output file's encoder name, because
the exact resize/crop/normalize recipe is part of what the features mean.

The toy16 / toy-text16 encoders need no downloaded weights; they exist so
the export pipeline (ordering, batching, formats, error paths) is testable
offline. Real encoders raise EncoderUnavailableError when their weights
cannot be fetched.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np


class EncoderUnavailableError(RuntimeError):
    """Weights or hub code for a pretrained encoder could not be loaded."""


@dataclass
class ImageEncoder:
    encoder_id: str
    preprocess_desc: str
    encode_batch: Callable  # list[PIL.Image] -> np.ndarray (B, dim) float32

    @property
    def name(self) -> str:
        return f"{self.encoder_id}|{self.preprocess_desc}"


@dataclass
class TextEncoder:
    encoder_id: str
    preprocess_desc: str
    encode_batch: Callable  # list[str] -> np.ndarray (B, dim) float32

    @property
    def name(self) -> str:
        return f"{self.encoder_id}|{self.preprocess_desc}"


# ---------------------------------------------------------------------------
# offline toy encoders (deterministic, no weights)
# ---------------------------------------------------------------------------


def _toy16_batch(images) -> np.ndarray:
    out = []
    for img in images:
        gray = np.asarray(img.convert("L").resize((4, 4)), dtype=np.float32)
        out.append((gray / 255.0).reshape(16))
    return np.stack(out)


def _toy_text16_batch(texts) -> np.ndarray:
    out = []
    for text in texts:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        vec = np.frombuffer(digest[:16], dtype=np.uint8).astype(np.float32)
        out.append(vec / 255.0 - 0.5)
    return np.stack(out)


# ---------------------------------------------------------------------------
# real encoders
# ---------------------------------------------------------------------------

_IMAGENET_DESC = "resize256-centercrop224-rgb-imagenet-norm"
_CLIP_DESC = "clip-processor-224"


def _imagenet_transform():
    from torchvision import transforms

    return transforms.Compose([
        transforms.Resize(256),
        transforms.CenterCrop(224),
        transforms.ToTensor(),
        transforms.Normalize(mean=[0.485, 0.456, 0.406],
                             std=[0.229, 0.224, 0.225]),
    ])


def _torchvision_encoder(encoder_id: str, build: Callable) -> ImageEncoder:
    import torch

    try:
        model, pool = build()
    except Exception as exc:  # weight download failure, hub outage, ...
        raise EncoderUnavailableError(f"{encoder_id}: {exc}") from exc
    model.eval()
    transform = _imagenet_transform()

    def encode(images) -> np.ndarray:
        batch = torch.stack([transform(img.convert("RGB")) for img in images])
        with torch.no_grad():
            feats = pool(model, batch)
        return feats.numpy().astype(np.float32)

    return ImageEncoder(encoder_id, _IMAGENET_DESC, encode)


def _build_resnet18():
    import torch.nn as nn
    from torchvision.models import ResNet18_Weights, resnet18

    model = resnet18(weights=ResNet18_Weights.IMAGENET1K_V1)
    model.fc = nn.Identity()
    return model, lambda m, x: m(x)


def _build_densenet121():
    import torch.nn.functional as F
    from torchvision.models import DenseNet121_Weights, densenet121

    model = densenet121(weights=DenseNet121_Weights.IMAGENET1K_V1)

    def pool(m, x):
        feats = F.relu(m.features(x), inplace=False)
        return F.adaptive_avg_pool2d(feats, 1).flatten(1)

    return model, pool


def _build_mobilenet_v3_small():
    import torch
    from torchvision.models import MobileNet_V3_Small_Weights, mobilenet_v3_small

    model = mobilenet_v3_small(weights=MobileNet_V3_Small_Weights.IMAGENET1K_V1)

    def pool(m, x):
        feats = m.avgpool(m.features(x))
        return torch.flatten(feats, 1)

    return model, pool


def _dino_encoder(encoder_id: str, repo: str, entry: str) -> ImageEncoder:
    import torch

    try:
        model = torch.hub.load(repo, entry)
    except Exception as exc:
        raise EncoderUnavailableError(f"{encoder_id}: {exc}") from exc
    model.eval()
    transform = _imagenet_transform()

    def encode(images) -> np.ndarray:
        batch = torch.stack([transform(img.convert("RGB")) for img in images])
        with torch.no_grad():
            feats = model(batch)
        return feats.numpy().astype(np.float32)

    return ImageEncoder(encoder_id, _IMAGENET_DESC, encode)


_CLIP_MODEL_ID = "openai/clip-vit-base-patch16"
_clip_cache: dict = {}


def _load_clip():
    if "model" not in _clip_cache:
        try:
            from transformers import CLIPModel, CLIPProcessor

            _clip_cache["model"] = CLIPModel.from_pretrained(_CLIP_MODEL_ID).eval()
            _clip_cache["processor"] = CLIPProcessor.from_pretrained(_CLIP_MODEL_ID)
        except Exception as exc:
            raise EncoderUnavailableError(f"clip-vit-b16: {exc}") from exc
    return _clip_cache["model"], _clip_cache["processor"]


def _clip_image_encoder() -> ImageEncoder:
    import torch

    model, processor = _load_clip()

    def encode(images) -> np.ndarray:
        inputs = processor(images=[img.convert("RGB") for img in images],
                           return_tensors="pt")
        with torch.no_grad():
            feats = model.get_image_features(**inputs)
        return feats.numpy().astype(np.float32)

    return ImageEncoder("clip-vit-b16", _CLIP_DESC, encode)


def _clip_text_encoder() -> TextEncoder:
    import torch

    model, processor = _load_clip()

    def encode(texts) -> np.ndarray:
        inputs = processor(text=list(texts), return_tensors="pt", padding=True,
                           truncation=True)
        with torch.no_grad():
            feats = model.get_text_features(**inputs)
        return feats.numpy().astype(np.float32)

    return TextEncoder("clip-vit-b16-text", "clip-tokenizer-pad-truncate", encode)


IMAGE_ENCODERS = ("toy16", "clip-vit-b16", "resnet18", "densenet121",
                  "mobilenet-v3-small", "dino-v1", "dinov2")
TEXT_ENCODERS = ("toy-text16", "clip-vit-b16-text")


def load_image_encoder(encoder_id: str) -> ImageEncoder:
    if encoder_id == "toy16":
        return ImageEncoder("toy16", "grayscale-4x4", _toy16_batch)
    if encoder_id == "clip-vit-b16":
        return _clip_image_encoder()
    if encoder_id == "resnet18":
        return _torchvision_encoder("resnet18", _build_resnet18)
    if encoder_id == "densenet121":
        return _torchvision_encoder("densenet121", _build_densenet121)
    if encoder_id == "mobilenet-v3-small":
        return _torchvision_encoder("mobilenet-v3-small", _build_mobilenet_v3_small)
    if encoder_id == "dino-v1":
        return _dino_encoder("dino-v1", "facebookresearch/dino:main", "dino_vitb16")
    if encoder_id == "dinov2":
        return _dino_encoder("dinov2", "facebookresearch/dinov2", "dinov2_vitb14")
    raise ValueError(f"unknown image encoder {encoder_id!r}; choose from {IMAGE_ENCODERS}")


def load_text_encoder(encoder_id: str) -> TextEncoder:
    if encoder_id == "toy-text16":
        return TextEncoder("toy-text16", "sha256-16", _toy_text16_batch)
    if encoder_id == "clip-vit-b16-text":
        return _clip_text_encoder()
    raise ValueError(f"unknown text encoder {encoder_id!r}; choose from {TEXT_ENCODERS}")
