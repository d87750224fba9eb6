"""Checks against real pretrained encoders.

These skip cleanly when weights cannot be downloaded (offline sandboxes);
everything here reruns automatically once the caches are available.
"""

import numpy as np
import pytest

from zoomshot.embeddings import read_embedding_file
from zoomshot_exporter.encoders import (
    EncoderUnavailableError,
    load_image_encoder,
    load_text_encoder,
)
from zoomshot_exporter.export import ExportManifest, export_images


def _image_encoder_or_skip(encoder_id):
    try:
        return load_image_encoder(encoder_id)
    except EncoderUnavailableError as exc:
        pytest.skip(f"weights unavailable: {exc}")


def _text_encoder_or_skip(encoder_id):
    try:
        return load_text_encoder(encoder_id)
    except EncoderUnavailableError as exc:
        pytest.skip(f"weights unavailable: {exc}")


@pytest.mark.parametrize("encoder_id,expected_dim", [
    ("clip-vit-b16", 512),
    ("resnet18", 512),
    ("densenet121", 1024),
    ("mobilenet-v3-small", 576),
])
def test_image_encoder_dims(image_dir, tmp_path, encoder_id, expected_dim):
    _, manifest_path, _ = image_dir
    manifest = ExportManifest.read(manifest_path)
    manifest.paths = manifest.paths[:3]
    encoder = _image_encoder_or_skip(encoder_id)
    out = tmp_path / f"{encoder_id}.zseb"
    export_images(manifest, encoder, out)
    es = read_embedding_file(out)
    assert es.n == 3
    assert es.dim == expected_dim


def test_clip_text_dim(tmp_path):
    encoder = _text_encoder_or_skip("clip-vit-b16-text")
    feats = encoder.encode_batch(["an image of a dog", "an image of a cat"])
    assert feats.shape == (2, 512)


def test_real_export_is_deterministic(image_dir, tmp_path):
    _, manifest_path, _ = image_dir
    manifest = ExportManifest.read(manifest_path)
    manifest.paths = manifest.paths[:2]
    encoder = _image_encoder_or_skip("resnet18")
    a, b = tmp_path / "a.zseb", tmp_path / "b.zseb"
    export_images(manifest, encoder, a)
    export_images(manifest, encoder, b)
    assert a.read_bytes() == b.read_bytes()
