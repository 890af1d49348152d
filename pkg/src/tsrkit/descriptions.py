"""Per-class description generation from template sign images.

Every catalog class gets one backend-generated text stating the sign's shape,
colors, and composition. The set is persisted as one editable text file per
class plus an index, so descriptions can be hand-corrected after the fact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

from .dataset import ClassCatalog
from .gateway import GatewayError, MllmGateway, ResponseCache
from .images import RgbImage, encode_png

INDEX_FILE = "index.json"

DEFAULT_DESCRIPTION_PROMPT_TEXT = (
    "Describe this traffic sign named '{display_name}' for recognition purposes. "
    "State its shape, its colors, and its composition (symbols, numerals, arrows, "
    "text). Be concise and list only visually verifiable features."
)


class DescriptionError(Exception):
    pass


@dataclass(frozen=True)
class DescriptionPrompt:
    """Prompt template with a {display_name} placeholder; must ask for shape,
    color, and composition."""

    template_text: str = DEFAULT_DESCRIPTION_PROMPT_TEXT

    def __post_init__(self):
        lowered = self.template_text.lower()
        missing = [w for w in ("shape", "color", "composition") if w not in lowered]
        if missing:
            raise DescriptionError(
                f"description prompt must cover shape, color, and composition; missing {missing}"
            )

    def render(self, display_name: str) -> str:
        return self.template_text.replace("{display_name}", display_name)


@dataclass(frozen=True)
class ClassDescription:
    class_id: str
    text: str
    model_tag: str
    generated_at: str
    corrected: bool = False

    def __post_init__(self):
        if not self.text:
            raise DescriptionError(f"description for {self.class_id!r} must be non-empty")


@dataclass
class DescriptionSet:
    """One description per catalog class, in catalog order."""

    descriptions: dict[str, ClassDescription]
    catalog_digest: str

    def __len__(self) -> int:
        return len(self.descriptions)

    def __contains__(self, class_id: str) -> bool:
        return class_id in self.descriptions

    def class_ids(self) -> list[str]:
        return list(self.descriptions.keys())


def generate_description(
    template: RgbImage,
    class_id: str,
    display_name: str,
    prompt: DescriptionPrompt,
    gateway: MllmGateway,
    cache: ResponseCache,
) -> ClassDescription:
    """Generate one class description; regeneration is a cache hit."""
    req = gateway.request([encode_png(template)], prompt.render(display_name))
    try:
        resp, _hit = gateway.complete_cached(req, cache)
    except GatewayError as exc:
        raise DescriptionError(f"description generation failed for class {class_id!r}: {exc}") from exc
    if not resp.text:
        raise DescriptionError(f"backend returned an empty description for class {class_id!r}")
    return ClassDescription(
        class_id=class_id,
        text=resp.text,
        model_tag=resp.model_tag,
        generated_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def build_description_set(
    catalog: ClassCatalog,
    prompt: DescriptionPrompt,
    gateway: MllmGateway,
    cache: ResponseCache,
) -> DescriptionSet:
    """One description per class, catalog order preserved; any per-class
    failure aborts with the full list of failed classes."""
    descriptions: dict[str, ClassDescription] = {}
    failures: list[str] = []
    for entry in catalog.entries:
        try:
            template = catalog.load_template(entry.class_id)
            descriptions[entry.class_id] = generate_description(
                template, entry.class_id, entry.display_name, prompt, gateway, cache
            )
        except Exception as exc:  # collect per-class failures, report them all at once
            failures.append(f"{entry.class_id}: {exc}")
    if failures:
        raise DescriptionError(
            "description generation failed for "
            f"{len(failures)} class(es): " + "; ".join(failures)
        )
    return DescriptionSet(descriptions, catalog.digest())


def apply_correction(dset: DescriptionSet, class_id: str, new_text: str) -> DescriptionSet:
    """Replace one description with expert-corrected text; others untouched."""
    if class_id not in dset.descriptions:
        raise DescriptionError(f"unknown class_id {class_id!r}")
    if not new_text:
        raise DescriptionError("corrected text must be non-empty")
    updated = {
        cid: (replace(d, text=new_text, corrected=True) if cid == class_id else d)
        for cid, d in dset.descriptions.items()
    }
    return DescriptionSet(updated, dset.catalog_digest)


def save_description_set(dset: DescriptionSet, directory: str | Path) -> None:
    """Write "<class_id>.txt" per class plus an index.json with metadata."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {"catalog_digest": dset.catalog_digest, "classes": []}
    for class_id, desc in dset.descriptions.items():
        (directory / f"{class_id}.txt").write_text(desc.text, encoding="utf-8")
        index["classes"].append(
            {
                "class_id": class_id,
                "model_tag": desc.model_tag,
                "generated_at": desc.generated_at,
                "corrected": desc.corrected,
            }
        )
    (directory / INDEX_FILE).write_text(json.dumps(index, indent=2), encoding="utf-8")


def load_description_set(directory: str | Path) -> DescriptionSet:
    """Load a stored set; text comes from the per-class files, so hand edits
    to those files are picked up verbatim."""
    directory = Path(directory)
    index_path = directory / INDEX_FILE
    if not index_path.exists():
        raise DescriptionError(f"no description index at {index_path}")
    index = json.loads(index_path.read_text(encoding="utf-8"))
    descriptions: dict[str, ClassDescription] = {}
    for meta in index["classes"]:
        class_id = meta["class_id"]
        text_path = directory / f"{class_id}.txt"
        if not text_path.exists():
            raise DescriptionError(f"missing description file {text_path}")
        descriptions[class_id] = ClassDescription(
            class_id=class_id,
            text=text_path.read_text(encoding="utf-8"),
            model_tag=meta.get("model_tag", ""),
            generated_at=meta.get("generated_at", ""),
            corrected=bool(meta.get("corrected", False)),
        )
    return DescriptionSet(descriptions, index.get("catalog_digest", ""))
