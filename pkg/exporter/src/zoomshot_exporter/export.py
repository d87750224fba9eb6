"""Export operations: images, prompt banks, and per-template class text.

The image manifest is the pairing contract: one image path per line, and
row i of every exported file corresponds to line i, whichever encoder
produced it. Exporting therefore aborts on the first undecodable image
instead of skipping it, because a silent skip would shift every later row
and silently corrupt the student/teacher pairing.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .encoders import ImageEncoder, TextEncoder
from .zseb import MODALITY_IMAGE, MODALITY_TEXT, write_zseb


class ExportError(RuntimeError):
    pass


@dataclass
class ExportManifest:
    """Ordered image paths, resolved relative to the manifest file."""

    paths: list[Path]
    source: Path

    @classmethod
    def read(cls, manifest_path) -> "ExportManifest":
        source = Path(manifest_path)
        base = source.parent
        paths = []
        for line in source.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            p = Path(line)
            paths.append(p if p.is_absolute() else base / p)
        if not paths:
            raise ExportError(f"manifest {source} lists no images")
        return cls(paths, source)

    def __len__(self) -> int:
        return len(self.paths)


def _load_image(path: Path) -> Image.Image:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except Exception as exc:
        raise ExportError(f"cannot decode image {path}: {exc}") from exc


def export_images(manifest: ExportManifest, encoder: ImageEncoder, out_path,
                  batch_size: int = 64) -> tuple[int, int]:
    """Write one image-modality ZSEB file, rows in manifest order.
    Returns (n, dim)."""
    blocks = []
    for start in range(0, len(manifest), batch_size):
        chunk = manifest.paths[start:start + batch_size]
        images = [_load_image(p) for p in chunk]
        blocks.append(encoder.encode_batch(images))
    features = np.vstack(blocks)
    write_zseb(out_path, MODALITY_IMAGE, encoder.name, features)
    return features.shape


def read_lines(path, what: str) -> list[str]:
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip()]
    if not lines:
        raise ExportError(f"{what} file {path} is empty")
    return lines


def export_prompts(prompt_file, encoder: TextEncoder, out_path,
                   batch_size: int = 64) -> int:
    """Embed one prompt per line into a text-modality ZSEB file."""
    prompts = read_lines(prompt_file, "prompt")
    blocks = [encoder.encode_batch(prompts[i:i + batch_size])
              for i in range(0, len(prompts), batch_size)]
    features = np.vstack(blocks)
    write_zseb(out_path, MODALITY_TEXT, encoder.name, features)
    return features.shape[0]


def export_class_templates(classes_file, template_file, encoder: TextEncoder,
                           out_dir, batch_size: int = 64) -> int:
    """Write a class bundle: classes.txt plus one c-row text ZSEB per
    template, class order preserved."""
    classes = read_lines(classes_file, "class list")
    if len(set(classes)) != len(classes):
        raise ExportError(f"duplicate class names in {classes_file}")
    templates = read_lines(template_file, "template")
    for t in templates:
        if "{}" not in t:
            raise ExportError(f"template {t!r} has no {{}} placeholder")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, template in enumerate(templates):
        texts = [template.format(name) for name in classes]
        blocks = [encoder.encode_batch(texts[j:j + batch_size])
                  for j in range(0, len(texts), batch_size)]
        write_zseb(out / f"template_{i:02d}.zseb", MODALITY_TEXT, encoder.name,
                   np.vstack(blocks))
    lines = [str(len(classes)), *classes, *templates]
    (out / "classes.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(templates)
