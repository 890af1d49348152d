"""Sign region extraction: mask out the road background, then crop each detection.

Masking first and cropping second keeps every non-sign pixel exactly black,
so crops carry no background clutter into the recognition backend.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contours import BoundingBox, DetectionSet
from .images import RgbImage
from .mask import BinaryMask


class RegionError(Exception):
    pass


@dataclass(eq=False)
class MaskedImage:
    """Road image with all background pixels forced to (0, 0, 0)."""

    image: RgbImage
    source_sample: str = ""


@dataclass(eq=False)
class SignCrop:
    """One extracted sign image, black outside the sign mask."""

    image: RgbImage
    bbox: BoundingBox
    source_sample: str = ""
    detection_index: int = 0


def apply_mask(road: RgbImage, mask: BinaryMask, source_sample: str = "") -> MaskedImage:
    """Keep road pixels where the mask is 1, black elsewhere."""
    if (road.height, road.width) != (mask.height, mask.width):
        raise RegionError(
            f"road image is {road.width}x{road.height} but mask is "
            f"{mask.width}x{mask.height}; resolutions must match"
        )
    out = road.pixels * mask.bits[:, :, np.newaxis]
    return MaskedImage(RgbImage(out), source_sample)


def crop(masked: MaskedImage, bbox: BoundingBox, padding: int = 0) -> SignCrop:
    """Cut the bbox region, expanded by `padding` per side and clamped to bounds."""
    if padding < 0:
        raise RegionError("padding must be >= 0")
    img = masked.image
    if bbox.x_min < 0 or bbox.y_min < 0 or bbox.x_max >= img.width or bbox.y_max >= img.height:
        raise RegionError(f"bbox {bbox.as_tuple()} outside {img.width}x{img.height} image")
    clamped = BoundingBox(
        max(0, bbox.x_min - padding),
        max(0, bbox.y_min - padding),
        min(img.width - 1, bbox.x_max + padding),
        min(img.height - 1, bbox.y_max + padding),
    )
    window = img.pixels[clamped.y_min : clamped.y_max + 1, clamped.x_min : clamped.x_max + 1]
    return SignCrop(RgbImage(window.copy()), clamped, masked.source_sample)


def extract_all(
    road: RgbImage,
    mask: BinaryMask,
    detections: DetectionSet,
    padding: int = 0,
    source_sample: str = "",
) -> list[SignCrop]:
    """One crop per detection, in detection order; padding beyond the mask stays black."""
    masked = apply_mask(road, mask, source_sample)
    crops = []
    for index, det in enumerate(detections):
        sign = crop(masked, det.bbox, padding)
        sign.detection_index = index
        crops.append(sign)
    return crops
