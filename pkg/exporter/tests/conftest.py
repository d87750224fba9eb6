from pathlib import Path

import numpy as np
import pytest
from PIL import Image


@pytest.fixture()
def image_dir(tmp_path):
    """A handful of small distinct images plus a manifest listing them."""
    rng = np.random.default_rng(0)
    paths = []
    for i in range(5):
        img = Image.fromarray(rng.integers(0, 256, size=(24, 24, 3), dtype=np.uint8))
        p = tmp_path / f"img_{i}.png"
        img.save(p)
        paths.append(p)
    manifest = tmp_path / "manifest.txt"
    manifest.write_text("\n".join(p.name for p in paths) + "\n", encoding="utf-8")
    return tmp_path, manifest, paths
