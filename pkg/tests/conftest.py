from __future__ import annotations

import random

import numpy as np
import pytest

from tsrkit.dataset import load_catalog
from tsrkit.images import RgbImage, save_png

TOY_CLASSES = [
    ("stop", "Stop", (200, 30, 30)),
    ("yield", "Yield", (240, 200, 40)),
    ("limit_30", "Speed limit 30", (40, 80, 220)),
]


def write_catalog_files(root, specs=TOY_CLASSES, name="catalog.tsv"):
    """Write template PNGs plus a catalog manifest; returns the catalog path."""
    templates = root / "templates"
    templates.mkdir(parents=True, exist_ok=True)
    lines = ["# class_id\tdisplay_name\ttemplate_image"]
    for class_id, display_name, color in specs:
        save_png(RgbImage.filled(16, 16, color), templates / f"{class_id}.png")
        lines.append(f"{class_id}\t{display_name}\ttemplates/{class_id}.png")
    path = root / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def many_class_specs(n: int):
    """n distinct class specs with well-separated template colors."""
    rng = random.Random(99)
    specs = []
    seen = set()
    for i in range(n):
        while True:
            color = (rng.randrange(256), rng.randrange(256), rng.randrange(256))
            if color not in seen:
                seen.add(color)
                break
        specs.append((f"class_{i:03d}", f"Class {i:03d}", color))
    return specs


def random_mask_bits(rng: random.Random, max_side: int = 64) -> np.ndarray:
    """Random binary mask with varying size and density, numpy-backed."""
    h = rng.randint(1, max_side)
    w = rng.randint(1, max_side)
    density = rng.choice([0.05, 0.15, 0.3, 0.5, 0.7, 0.9])
    seeded = np.random.default_rng(rng.getrandbits(32))
    return (seeded.random((h, w)) < density).astype(np.uint8)


@pytest.fixture
def toy_catalog(tmp_path):
    return load_catalog(write_catalog_files(tmp_path))
