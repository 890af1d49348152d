"""Segmentation-map post-processing: isolate the traffic-sign class as a binary mask.

A color-coded segmentation image assigns one legend color per object class;
thresholding against the sign class color yields a 0/1 foreground mask.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .images import RgbImage, load_image

log = logging.getLogger(__name__)

Rgb = tuple[int, int, int]


class MaskError(Exception):
    """Raised on legend violations or mask shape mismatches."""


@dataclass(eq=False)
class BinaryMask:
    """Per-pixel 0/1 foreground mask stored as a (height, width) uint8 array."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise MaskError(f"expected (height, width) bit array, got shape {bits.shape}")
        bits = bits.astype(np.uint8, copy=False)
        if not np.all((bits == 0) | (bits == 1)):
            raise MaskError("mask values must be exactly 0 or 1")
        self.bits = bits

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    def foreground_count(self) -> int:
        return int(self.bits.sum())


@dataclass(eq=False)
class SegmentationMap:
    """Color-coded per-pixel class image plus its class-color legend."""

    image: RgbImage
    legend: dict[str, Rgb] = field(default_factory=dict)

    def __post_init__(self):
        colors = list(self.legend.values())
        if len(set(colors)) != len(colors):
            raise MaskError("legend colors must be pairwise distinct")

    @property
    def width(self) -> int:
        return self.image.width

    @property
    def height(self) -> int:
        return self.image.height


def load_legend(path: str | Path) -> dict[str, Rgb]:
    """Parse a legend file: one "label<TAB>R,G,B" per line, '#' comments."""
    path = Path(path)
    if not path.exists():
        raise MaskError(f"legend file not found: {path}")
    legend: dict[str, Rgb] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                label, raw = line.split("\t")
                r, g, b = (int(c) for c in raw.split(","))
            except ValueError as exc:
                raise MaskError(f"{path}:{lineno}: expected 'label<TAB>R,G,B'") from exc
            if not all(0 <= c <= 255 for c in (r, g, b)):
                raise MaskError(f"{path}:{lineno}: channel values must be 0-255")
            if label in legend:
                raise MaskError(f"{path}:{lineno}: duplicate label {label!r}")
            legend[label] = (r, g, b)
    colors = list(legend.values())
    if len(set(colors)) != len(colors):
        raise MaskError(f"{path}: legend colors must be pairwise distinct")
    return legend


def sign_color_from_legend(legend: dict[str, Rgb], sign_label: str) -> Rgb:
    if sign_label not in legend:
        raise MaskError(f"legend has no entry for sign class {sign_label!r}")
    return legend[sign_label]


def load_segmentation(path: str | Path, legend: dict[str, Rgb] | None = None) -> SegmentationMap:
    return SegmentationMap(load_image(path), legend or {})


def to_binary_mask(seg: SegmentationMap, sign_color: Rgb, tolerance: int = 0) -> BinaryMask:
    """Threshold the segmentation against the sign class color.

    A pixel is foreground iff its maximum per-channel absolute difference
    from sign_color is <= tolerance. Tolerance 0 demands exact color codes;
    positive values absorb antialiased or recompressed exports.
    """
    if tolerance < 0:
        raise MaskError("tolerance must be >= 0")
    if seg.legend and tuple(sign_color) not in {tuple(c) for c in seg.legend.values()}:
        log.warning("sign color %s not present in legend; proceeding", sign_color)
    diff = np.abs(seg.image.pixels.astype(np.int16) - np.array(sign_color, dtype=np.int16))
    bits = (diff.max(axis=2) <= tolerance).astype(np.uint8)
    return BinaryMask(bits)


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    """Persist as a black/white PNG (0 -> black, 1 -> white)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask.bits * np.uint8(255), mode="L").save(path, format="PNG")


def load_mask(path: str | Path) -> BinaryMask:
    path = Path(path)
    if not path.exists():
        raise MaskError(f"mask file not found: {path}")
    with Image.open(path) as im:
        gray = np.asarray(im.convert("L"), dtype=np.uint8)
    return BinaryMask((gray >= 128).astype(np.uint8))
