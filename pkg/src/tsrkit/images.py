"""8-bit RGB raster type and PNG/JPEG codec helpers shared by the pipeline."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class ImageError(Exception):
    """Raised when an image file cannot be read or has an invalid shape."""


@dataclass(eq=False)
class RgbImage:
    """An RGB raster stored as a (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ImageError(f"expected (height, width, 3) pixel array, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ImageError("image dimensions must be positive")
        self.pixels = px.astype(np.uint8, copy=False)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @classmethod
    def filled(cls, width: int, height: int, color: tuple[int, int, int]) -> "RgbImage":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[:, :] = color
        return cls(px)

    def same_pixels(self, other: "RgbImage") -> bool:
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )


def load_image(path: str | Path) -> RgbImage:
    """Decode a PNG or JPEG file to an 8-bit RGB raster."""
    path = Path(path)
    if not path.exists():
        raise ImageError(f"image file not found: {path}")
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            return RgbImage(np.asarray(rgb, dtype=np.uint8))
    except ImageError:
        raise
    except Exception as exc:
        raise ImageError(f"cannot decode image {path}: {exc}") from exc


def save_png(image: RgbImage, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image.pixels, mode="RGB").save(path, format="PNG")


def encode_png(image: RgbImage) -> bytes:
    """Encode to PNG bytes; lossless, so small glyphs survive resubmission."""
    buf = io.BytesIO()
    Image.fromarray(image.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_image_bytes(payload: bytes) -> RgbImage:
    try:
        with Image.open(io.BytesIO(payload)) as im:
            return RgbImage(np.asarray(im.convert("RGB"), dtype=np.uint8))
    except Exception as exc:
        raise ImageError(f"cannot decode image payload: {exc}") from exc
