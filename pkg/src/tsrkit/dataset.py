"""Class catalogs, sample manifests, and seeded subset sampling.

Catalogs and manifests are line-oriented, tab-separated UTF-8 files so they
can be hand-edited; lines starting with '#' are comments.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass
from pathlib import Path

from .images import ImageError, RgbImage, load_image

MISSING = "-"

# Ids end up in filenames and are matched inside backend answers, so they
# must be plain tokens: no separators, no whitespace.
_ID_TOKEN = re.compile(r"[A-Za-z0-9][A-Za-z0-9_.\-]*\Z")


class DatasetError(Exception):
    """Raised when a catalog or manifest violates its invariants."""


@dataclass(frozen=True)
class CatalogEntry:
    class_id: str
    display_name: str
    template_image_path: Path


@dataclass
class ClassCatalog:
    """Ordered class vocabulary backed by template sign images."""

    entries: list[CatalogEntry]

    def __post_init__(self):
        if not self.entries:
            raise DatasetError("catalog must contain at least one class")
        seen: set[str] = set()
        for entry in self.entries:
            if not entry.class_id:
                raise DatasetError("catalog contains an empty class_id")
            if not _ID_TOKEN.match(entry.class_id):
                raise DatasetError(f"class_id {entry.class_id!r} is not a plain token")
            if entry.class_id in seen:
                raise DatasetError(f"duplicate class_id {entry.class_id!r} in catalog")
            seen.add(entry.class_id)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, class_id: str) -> bool:
        return any(e.class_id == class_id for e in self.entries)

    def class_ids(self) -> list[str]:
        return [e.class_id for e in self.entries]

    def entry(self, class_id: str) -> CatalogEntry:
        for e in self.entries:
            if e.class_id == class_id:
                return e
        raise DatasetError(f"unknown class_id {class_id!r}")

    def load_template(self, class_id: str) -> RgbImage:
        return load_image(self.entry(class_id).template_image_path)

    def digest(self) -> str:
        """Stable content hash over (class_id, display_name) pairs, in order."""
        h = hashlib.sha256()
        for e in self.entries:
            h.update(e.class_id.encode("utf-8"))
            h.update(b"\x00")
            h.update(e.display_name.encode("utf-8"))
            h.update(b"\x01")
        return h.hexdigest()


@dataclass(frozen=True)
class Sample:
    sample_id: str
    ground_truth_class: str
    road_image_path: Path | None = None
    sign_image_path: Path | None = None
    segmentation_path: Path | None = None

    @property
    def has_sign_image(self) -> bool:
        return self.sign_image_path is not None

    @property
    def has_full_pipeline_inputs(self) -> bool:
        return self.road_image_path is not None and self.segmentation_path is not None


@dataclass
class SampleManifest:
    samples: list[Sample]

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def sample(self, sample_id: str) -> Sample:
        for s in self.samples:
            if s.sample_id == sample_id:
                return s
        raise DatasetError(f"unknown sample_id {sample_id!r}")

    def classes_present(self) -> list[str]:
        """Ground-truth classes in order of first appearance."""
        seen: list[str] = []
        for s in self.samples:
            if s.ground_truth_class not in seen:
                seen.append(s.ground_truth_class)
        return seen


def _resolve(base: Path, raw: str) -> Path:
    p = Path(raw)
    return p if p.is_absolute() else (base / p).resolve()


def _data_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.rstrip("\n")
            if not stripped.strip() or stripped.lstrip().startswith("#"):
                continue
            yield lineno, stripped


def load_catalog(path: str | Path) -> ClassCatalog:
    """Load a catalog file: class_id <TAB> display_name <TAB> template_image_path.

    Every template image must exist and decode; relative paths are resolved
    against the catalog file's directory.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"catalog file not found: {path}")
    entries: list[CatalogEntry] = []
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise DatasetError(
                f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}"
            )
        class_id, display_name, template = (p.strip() for p in parts)
        entries.append(CatalogEntry(class_id, display_name, _resolve(path.parent, template)))
    catalog = ClassCatalog(entries)
    for e in catalog.entries:
        try:
            load_image(e.template_image_path)
        except ImageError as exc:
            raise DatasetError(f"template image for class {e.class_id!r}: {exc}") from exc
    return catalog


def load_manifest(path: str | Path, catalog: ClassCatalog) -> SampleManifest:
    """Load a manifest file:
    sample_id <TAB> ground_truth_class <TAB> road|- <TAB> sign|- <TAB> segmentation|-.

    Each sample must carry either a pre-extracted sign image or both a road
    image and a segmentation map.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"manifest file not found: {path}")
    samples: list[Sample] = []
    seen: set[str] = set()
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 5:
            raise DatasetError(
                f"{path}:{lineno}: expected 5 tab-separated fields, got {len(parts)}"
            )
        sample_id, gt, road, sign, seg = (p.strip() for p in parts)
        if not sample_id or not _ID_TOKEN.match(sample_id):
            raise DatasetError(f"{path}:{lineno}: sample_id must be a plain token")
        if sample_id in seen:
            raise DatasetError(f"{path}:{lineno}: duplicate sample_id {sample_id!r}")
        seen.add(sample_id)
        if gt not in catalog:
            raise DatasetError(
                f"{path}:{lineno}: sample {sample_id!r} has unknown ground_truth_class {gt!r}"
            )
        sample = Sample(
            sample_id=sample_id,
            ground_truth_class=gt,
            road_image_path=None if road == MISSING else _resolve(path.parent, road),
            sign_image_path=None if sign == MISSING else _resolve(path.parent, sign),
            segmentation_path=None if seg == MISSING else _resolve(path.parent, seg),
        )
        if not sample.has_sign_image and not sample.has_full_pipeline_inputs:
            raise DatasetError(
                f"{path}:{lineno}: sample {sample_id!r} needs a sign image or "
                "both a road image and a segmentation map"
            )
        samples.append(sample)
    return SampleManifest(samples)


def save_manifest(manifest: SampleManifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# sample_id\tground_truth_class\troad_image\tsign_image\tsegmentation"]
    for s in manifest.samples:
        lines.append(
            "\t".join(
                [
                    s.sample_id,
                    s.ground_truth_class,
                    str(s.road_image_path) if s.road_image_path else MISSING,
                    str(s.sign_image_path) if s.sign_image_path else MISSING,
                    str(s.segmentation_path) if s.segmentation_path else MISSING,
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def sample_subset(manifest: SampleManifest, n: int, seed: int) -> SampleManifest:
    """Draw a deterministic random subset of exactly n samples.

    When n is at least the number of distinct classes, the draw is stratified
    so every class present in the manifest keeps at least one sample; the
    remainder is uniform without replacement.
    """
    total = len(manifest.samples)
    if n > total:
        raise DatasetError(f"subset size {n} exceeds population {total}")
    if n < 0:
        raise DatasetError("subset size must be non-negative")
    rng = random.Random(seed)
    by_class: dict[str, list[int]] = {}
    for idx, s in enumerate(manifest.samples):
        by_class.setdefault(s.ground_truth_class, []).append(idx)
    chosen: list[int]
    if n >= len(by_class):
        chosen = [rng.choice(indices) for indices in by_class.values()]
        taken = set(chosen)
        rest = [i for i in range(total) if i not in taken]
        chosen.extend(rng.sample(rest, n - len(chosen)))
        rng.shuffle(chosen)
    else:
        chosen = rng.sample(range(total), n)
    return SampleManifest([manifest.samples[i] for i in chosen])
