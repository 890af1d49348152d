"""In-context sign recognition and ranked-answer parsing.

Three strategies: "full" sends the crop together with every class description
as in-context evidence; "baseline" sends the crop with only the class
vocabulary; "baseline_o" sends the whole road scene with the vocabulary.
The backend's free-text answer is parsed into a ranked, in-vocabulary list.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .dataset import ClassCatalog
from .descriptions import DescriptionSet
from .gateway import MllmGateway, ResponseCache
from .images import RgbImage, encode_png

STRATEGY_FULL = "full"
STRATEGY_BASELINE = "baseline"
STRATEGY_BASELINE_O = "baseline_o"
STRATEGIES = (STRATEGY_FULL, STRATEGY_BASELINE, STRATEGY_BASELINE_O)

DEFAULT_QUERY_TEXT = (
    "Identify this traffic sign using the class descriptions above. Answer with "
    "a numbered list of the {k} most likely class ids, most likely first, and "
    "nothing else."
)
BASELINE_QUERY_TEXT = (
    "Identify this traffic sign. Answer with a numbered list of the {k} most "
    "likely class ids from the list above, most likely first, and nothing else."
)

_NUMBERED_LINE = re.compile(r"^\s*\d+\s*[.):\-]?\s*(.+?)\s*$")


class RecognizerError(Exception):
    pass


@dataclass(frozen=True)
class RecognitionStrategy:
    variant: str = STRATEGY_FULL
    k_requested: int = 10

    def __post_init__(self):
        if self.variant not in STRATEGIES:
            raise RecognizerError(f"unknown strategy variant {self.variant!r}")
        if self.k_requested < 1:
            raise RecognizerError("k_requested must be >= 1")


@dataclass
class RecognitionResult:
    sample_id: str
    detection_index: int
    ranked: list[str]  # class ids, most likely first; position is the rank
    raw_response: str
    strategy: RecognitionStrategy
    parse_ok: bool = True


def build_recognition_prompt(descriptions: DescriptionSet, query: str, k: int) -> str:
    """Assemble the full-strategy prompt: every class description in catalog
    order, each labeled by class_id, followed by the ranked-answer query."""
    if k < 1:
        raise RecognizerError("k must be >= 1")
    if not descriptions.descriptions:
        raise RecognizerError("description set is empty")
    blocks = ["Class descriptions:"]
    for class_id, desc in descriptions.descriptions.items():
        blocks.append(f"[{class_id}] {desc.text}")
    blocks.append(query.replace("{k}", str(k)))
    return "\n\n".join(blocks)


def build_baseline_prompt(catalog: ClassCatalog, query: str, k: int) -> str:
    """Vocabulary-only prompt for the ablation strategies: class ids and
    display names, no description text."""
    if k < 1:
        raise RecognizerError("k must be >= 1")
    lines = ["Valid traffic sign classes:"]
    for entry in catalog.entries:
        lines.append(f"{entry.class_id} ({entry.display_name})")
    return "\n".join(lines) + "\n\n" + query.replace("{k}", str(k))


def parse_ranked_response(raw: str, catalog: ClassCatalog, k: int) -> list[str]:
    """Extract up to k catalog class ids from a free-text answer.

    Per line, in order of preference: a numbered-list payload that exactly
    matches a class_id, then exact class_id substring matches, then
    case-insensitive display-name matches. Duplicates keep their first
    occurrence; an empty result signals parse failure."""
    ids = catalog.class_ids()
    id_set = set(ids)
    display_pairs = [(e.display_name.lower(), e.class_id) for e in catalog.entries]
    found: list[str] = []
    seen: set[str] = set()

    def emit(class_id: str) -> None:
        if class_id not in seen:
            seen.add(class_id)
            found.append(class_id)

    for line in raw.splitlines():
        numbered = _NUMBERED_LINE.match(line)
        if numbered and numbered.group(1) in id_set:
            emit(numbered.group(1))
            continue
        hits = [(line.find(cid), i) for i, cid in enumerate(ids) if cid in line]
        if hits:
            for _pos, i in sorted(hits):
                emit(ids[i])
            continue
        lowered = line.lower()
        name_hits = [
            (lowered.find(name), i)
            for i, (name, _cid) in enumerate(display_pairs)
            if name and name in lowered
        ]
        for _pos, i in sorted(name_hits):
            emit(display_pairs[i][1])
    return found[:k]


def recognize(
    image: RgbImage,
    strategy: RecognitionStrategy,
    catalog: ClassCatalog,
    gateway: MllmGateway,
    cache: ResponseCache,
    descriptions: DescriptionSet | None = None,
    sample_id: str = "",
    detection_index: int = 0,
    query: str | None = None,
) -> RecognitionResult:
    """Run one recognition call and parse the ranked answer.

    The image is the sign crop for "full" and "baseline", the whole road
    scene for "baseline_o". An unparseable response yields an empty ranked
    list flagged as a parse failure rather than an exception."""
    k = strategy.k_requested
    if strategy.variant == STRATEGY_FULL:
        if descriptions is None:
            raise RecognizerError("strategy 'full' requires a description set")
        missing = [cid for cid in catalog.class_ids() if cid not in descriptions]
        if missing:
            raise RecognizerError(f"description set incomplete; missing {missing}")
        prompt = build_recognition_prompt(descriptions, query or DEFAULT_QUERY_TEXT, k)
    else:
        prompt = build_baseline_prompt(catalog, query or BASELINE_QUERY_TEXT, k)
    req = gateway.request([encode_png(image)], prompt)
    resp, _hit = gateway.complete_cached(req, cache)
    ranked = parse_ranked_response(resp.text, catalog, k)
    return RecognitionResult(
        sample_id=sample_id,
        detection_index=detection_index,
        ranked=ranked,
        raw_response=resp.text,
        strategy=strategy,
        parse_ok=bool(ranked),
    )


def result_to_json(result: RecognitionResult) -> str:
    """One line-delimited JSON record per result."""
    return json.dumps(
        {
            "sample_id": result.sample_id,
            "detection_index": result.detection_index,
            "strategy": result.strategy.variant,
            "k_requested": result.strategy.k_requested,
            "ranked": result.ranked,
            "raw_response": result.raw_response,
            "parse_ok": result.parse_ok,
        },
        sort_keys=True,
    )


def result_from_json(line: str) -> RecognitionResult:
    rec = json.loads(line)
    return RecognitionResult(
        sample_id=rec["sample_id"],
        detection_index=int(rec["detection_index"]),
        ranked=list(rec["ranked"]),
        raw_response=rec["raw_response"],
        strategy=RecognitionStrategy(rec["strategy"], int(rec.get("k_requested", 10))),
        parse_ok=bool(rec["parse_ok"]),
    )


def load_results(path: str | Path) -> list[RecognitionResult]:
    path = Path(path)
    results = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                results.append(result_from_json(line))
    return results
