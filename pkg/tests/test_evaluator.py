import random

import pytest

from oracles import topk_recount
from tsrkit.evaluator import (
    EvalRecord,
    EvaluatorError,
    build_report,
    render_table,
    report_to_json,
    top_k_accuracy,
)

CLASSES = [f"c{i}" for i in range(12)]


def random_records(rng, n):
    records = []
    for i in range(n):
        truth = rng.choice(CLASSES)
        length = rng.randint(0, 10)
        ranked = rng.sample(CLASSES, min(length, len(CLASSES)))
        records.append(EvalRecord.make(f"s{i}", truth, ranked))
    return records


class TestTopKAccuracy:
    def test_half_correct_at_rank_one(self):
        records = [
            EvalRecord.make("a", "c0", ["c0", "c1"]),
            EvalRecord.make("b", "c1", ["c1"]),
            EvalRecord.make("c", "c2", ["c0", "c2"]),
            EvalRecord.make("d", "c3", ["c0"]),
        ]
        assert top_k_accuracy(records, 1) == 0.5

    def test_rank_boundary(self):
        records = [EvalRecord.make(f"s{i}", "c5", ["c0", "c1", "c5"]) for i in range(7)]
        assert top_k_accuracy(records, 5) == 1.0
        assert top_k_accuracy(records, 1) == 0.0

    def test_empty_ranked_counts_incorrect(self):
        records = [EvalRecord.make("a", "c0", []), EvalRecord.make("b", "c0", ["c0"])]
        assert top_k_accuracy(records, 10) == 0.5

    def test_empty_record_list_rejected(self):
        with pytest.raises(EvaluatorError):
            top_k_accuracy([], 1)

    def test_matches_naive_recount_on_random_sets(self):
        rng = random.Random(1001)
        for _ in range(200):
            records = random_records(rng, rng.randint(1, 60))
            for k in (1, 5, 10):
                assert top_k_accuracy(records, k) == topk_recount(records, k)

    def test_monotone_in_k_and_bounded(self):
        rng = random.Random(1002)
        for _ in range(100):
            records = random_records(rng, rng.randint(1, 40))
            values = [top_k_accuracy(records, k) for k in (1, 5, 10)]
            assert values == sorted(values)
            assert all(0.0 <= v <= 1.0 for v in values)

    def test_permutation_invariant(self):
        rng = random.Random(1003)
        records = random_records(rng, 30)
        shuffled = records[:]
        rng.shuffle(shuffled)
        for k in (1, 5, 10):
            assert top_k_accuracy(records, k) == top_k_accuracy(shuffled, k)


class TestBuildReport:
    def test_per_class_tallies_conserve_total(self):
        rng = random.Random(1004)
        records = random_records(rng, 10)
        report = build_report(records, "toy", "full")
        assert sum(n for n, _ in report.per_class.values()) == 10
        assert report.n_samples == 10

    def test_all_parse_failures(self):
        records = [EvalRecord.make(f"s{i}", "c0", []) for i in range(6)]
        report = build_report(records, "toy", "full")
        assert report.parse_failures == 6
        assert all(v == 0.0 for v in report.topk.values())

    def test_topk_monotone_invariant(self):
        rng = random.Random(1005)
        for _ in range(30):
            report = build_report(random_records(rng, rng.randint(1, 25)), "d", "s")
            assert report.topk[1] <= report.topk[5] <= report.topk[10]

    def test_per_class_top1_consistency(self):
        records = [
            EvalRecord.make("a", "c0", ["c0"]),
            EvalRecord.make("b", "c0", ["c1", "c0"]),
            EvalRecord.make("c", "c1", ["c1"]),
        ]
        report = build_report(records, "d", "s")
        assert report.per_class["c0"] == (2, 1)
        assert report.per_class["c1"] == (1, 1)


class TestRenderTable:
    def _report(self, strategy, dataset, top1, top5, top10):
        records = [EvalRecord.make("s", "c0", ["c0"])]
        report = build_report(records, dataset, strategy)
        report.topk = {1: top1, 5: top5, 10: top10}
        return report

    def test_values_formatted_to_two_decimals(self):
        table = render_table([self._report("full", "GTSRB", 0.89, 0.98, 0.98)])
        row = [line for line in table.splitlines() if line.startswith("full")][0]
        assert row.split()[1:] == ["0.89", "0.98", "0.98"]

    def test_strategy_row_order(self):
        reports = [
            self._report("full", "d", 1, 1, 1),
            self._report("baseline_o", "d", 0, 0, 0),
            self._report("baseline", "d", 0.5, 0.5, 0.5),
        ]
        table = render_table(reports)
        rows = [line.split()[0] for line in table.splitlines()[2:]]
        assert rows == ["baseline_o", "baseline", "full"]

    def test_multiple_datasets_grouped(self):
        reports = [
            self._report("full", "GTSRB", 0.89, 0.98, 0.98),
            self._report("full", "BTSD", 0.91, 0.99, 0.99),
        ]
        table = render_table(reports)
        header = table.splitlines()[0]
        assert header.index("GTSRB") < header.index("BTSD")
        row = [line for line in table.splitlines() if line.startswith("full")][0]
        assert row.split()[1:] == ["0.89", "0.98", "0.98", "0.91", "0.99", "0.99"]

    def test_empty_reports_rejected(self):
        with pytest.raises(EvaluatorError):
            render_table([])


def test_report_json_is_deterministic():
    records = [
        EvalRecord.make("a", "c1", ["c1"]),
        EvalRecord.make("b", "c0", []),
    ]
    first = report_to_json(build_report(records, "toy", "full"))
    second = report_to_json(build_report(list(reversed(records)), "toy", "full"))
    assert first == second
    assert '"parse_failures": 1' in first
