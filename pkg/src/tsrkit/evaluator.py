"""Top-k accuracy over recognition results, with per-dataset report tables.

A record scores correct at k when its ground-truth class appears among the
first k ranked candidates. Records with empty ranked lists (parse failures)
count as incorrect at every k; excluding them would inflate accuracy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

DEFAULT_K_VALUES = (1, 5, 10)

# Table row order mirrors the ablation layout: scene-only, crop-only, ours.
STRATEGY_ROW_ORDER = ("baseline_o", "baseline", "full")


class EvaluatorError(Exception):
    pass


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    ground_truth_class: str
    ranked: tuple[str, ...]

    @staticmethod
    def make(sample_id: str, ground_truth_class: str, ranked) -> "EvalRecord":
        return EvalRecord(sample_id, ground_truth_class, tuple(ranked))


@dataclass
class EvalReport:
    dataset_name: str
    strategy: str
    n_samples: int
    topk: dict[int, float]
    per_class: dict[str, tuple[int, int]]  # class -> (n, top-1 correct)
    parse_failures: int
    k_values: tuple[int, ...] = DEFAULT_K_VALUES


def top_k_accuracy(records: list[EvalRecord], k: int) -> float:
    if not records:
        raise EvaluatorError("cannot evaluate an empty record list")
    if k < 1:
        raise EvaluatorError("k must be >= 1")
    hits = sum(1 for r in records if r.ground_truth_class in r.ranked[:k])
    return hits / len(records)


def build_report(
    records: list[EvalRecord],
    dataset_name: str,
    strategy: str,
    k_values: tuple[int, ...] = DEFAULT_K_VALUES,
) -> EvalReport:
    if not records:
        raise EvaluatorError("cannot evaluate an empty record list")
    topk = {k: top_k_accuracy(records, k) for k in k_values}
    per_class: dict[str, tuple[int, int]] = {}
    for r in records:
        n, correct = per_class.get(r.ground_truth_class, (0, 0))
        hit = r.ranked[:1] == (r.ground_truth_class,)
        per_class[r.ground_truth_class] = (n + 1, correct + (1 if hit else 0))
    return EvalReport(
        dataset_name=dataset_name,
        strategy=strategy,
        n_samples=len(records),
        topk=topk,
        per_class=per_class,
        parse_failures=sum(1 for r in records if not r.ranked),
        k_values=tuple(k_values),
    )


def _strategy_sort_key(strategy: str):
    try:
        return (STRATEGY_ROW_ORDER.index(strategy), strategy)
    except ValueError:
        return (len(STRATEGY_ROW_ORDER), strategy)


def render_table(reports: list[EvalReport]) -> str:
    """Plain-text table: one row per strategy, Top-k columns per dataset,
    values to 2 decimals."""
    if not reports:
        raise EvaluatorError("no reports to render")
    k_values = reports[0].k_values
    datasets: list[str] = []
    for r in reports:
        if r.dataset_name not in datasets:
            datasets.append(r.dataset_name)
    strategies = sorted({r.strategy for r in reports}, key=_strategy_sort_key)
    by_key = {(r.strategy, r.dataset_name): r for r in reports}

    label_width = max(12, max(len(s) for s in strategies) + 2)
    col = 7
    group_width = col * len(k_values)
    header1 = "Method".ljust(label_width) + "".join(d.ljust(group_width)[:group_width] for d in datasets)
    header2 = "".ljust(label_width) + "".join(
        "".join(f"Top-{k}".ljust(col) for k in k_values) for _ in datasets
    )
    lines = [header1.rstrip(), header2.rstrip()]
    for strategy in strategies:
        row = strategy.ljust(label_width)
        for dataset in datasets:
            report = by_key.get((strategy, dataset))
            if report is None:
                row += "".join("-".ljust(col) for _ in k_values)
            else:
                row += "".join(f"{report.topk[k]:.2f}".ljust(col) for k in k_values)
        lines.append(row.rstrip())
    return "\n".join(lines) + "\n"


def report_to_json(report: EvalReport) -> str:
    payload = {
        "dataset": report.dataset_name,
        "strategy": report.strategy,
        "n_samples": report.n_samples,
        "topk": {str(k): round(v, 6) for k, v in sorted(report.topk.items())},
        "per_class": {
            cid: {"n": n, "top1_correct": c} for cid, (n, c) in sorted(report.per_class.items())
        },
        "parse_failures": report.parse_failures,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def save_report(report: EvalReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report_to_json(report), encoding="utf-8")
