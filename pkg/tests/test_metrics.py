"""Scoring math checked against independent reimplementations and
hand-computed fixtures."""

import math

import numpy as np
import pytest

from arf_forge.clients import EvalRecord
from arf_forge.errors import ConfigError
from arf_forge.metrics import (
    ScoreReport,
    accuracy,
    bootstrap_ci,
    bootstrap_ci_statistic,
    cohen_kappa,
    correctness_vector,
    format_markdown,
    format_score_table,
    krippendorff_alpha,
    macro_f1,
    model_expert_oracle,
    namespaced,
    precision_recall,
    score,
)
from arf_forge.metrics import _predicted_class
from arf_forge.rng import child_rng


def rec(q, idx, valid=True, model="m", mode="text"):
    """Record answering question q with canonical option index idx."""
    return EvalRecord(
        question_id=q.question_id,
        model=model,
        mode=mode,
        permutation=list(range(len(q.options))),
        raw_response="",
        parsed_answer=q.options[idx] if (valid and idx is not None) else None,
        valid=bool(valid and idx is not None),
        matched_index=idx if valid else None,
    )


def brute_accuracy(records, questions):
    qmap = {q.question_id: q for q in questions}
    last = {}
    for r in records:
        last[r.question_id] = r
    hits = sum(
        1
        for r in last.values()
        if r.valid and r.matched_index == qmap[r.question_id].correct_index
    )
    return hits / len(last)


def brute_macro_f1(records, questions):
    """Single-pass macro F1; only for fixtures without invalid answers."""
    qmap = {q.question_id: q for q in questions}
    last = {}
    for r in records:
        last[r.question_id] = r
    pairs = []
    for r in last.values():
        q = qmap[r.question_id]
        truth = namespaced(q.category, q.correct_class)
        pred = namespaced(q.category, q.option_classes[r.matched_index])
        pairs.append((truth, pred))
    classes = sorted({t for t, _ in pairs} | {p for _, p in pairs})
    f1s = []
    for c in classes:
        tp = sum(1 for t, p in pairs if t == c and p == c)
        fp = sum(1 for t, p in pairs if t != c and p == c)
        fn = sum(1 for t, p in pairs if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * recall / (prec + recall) if prec + recall else 0.0)
    return sum(f1s) / len(f1s)


def random_fixture(questions, trial, p_correct=0.6):
    rng = child_rng(95, "metric-fixture", trial)
    out = []
    for q in questions:
        if rng.random() < p_correct:
            out.append(rec(q, q.correct_index))
        else:
            wrong = [i for i in range(len(q.options)) if i != q.correct_index]
            out.append(rec(q, int(wrong[rng.integers(len(wrong))])))
    return out


# -------------------------------------------------------------- accuracy


def test_accuracy_hand_fixture(bench_questions):
    qs = bench_questions[:3]
    records = [rec(qs[0], qs[0].correct_index), rec(qs[1], qs[1].correct_index)]
    wrong = (qs[2].correct_index + 1) % len(qs[2].options)
    records.append(rec(qs[2], wrong))
    assert accuracy(records, qs) == pytest.approx(2 / 3)


def test_accuracy_counts_invalid_as_wrong(bench_questions):
    q = bench_questions[0]
    assert accuracy([rec(q, None, valid=False)], [q]) == 0.0


def test_accuracy_dedupes_keeping_last(bench_questions):
    q = bench_questions[0]
    wrong = (q.correct_index + 1) % len(q.options)
    records = [rec(q, wrong), rec(q, q.correct_index)]
    assert accuracy(records, [q]) == 1.0
    assert accuracy(list(reversed(records)), [q]) == 0.0


def test_accuracy_unknown_question_rejected(bench_questions):
    q = bench_questions[0]
    stray = rec(q, 0)
    stray.question_id = "q99999"
    with pytest.raises(ConfigError):
        accuracy([stray], bench_questions)


def test_accuracy_matches_brute_force(bench_questions):
    for trial in range(40):
        records = random_fixture(bench_questions, trial)
        assert abs(
            accuracy(records, bench_questions)
            - brute_accuracy(records, bench_questions)
        ) <= 1e-12


def test_correctness_vector_mean_equals_accuracy(bench_questions):
    records = random_fixture(bench_questions, 99)
    vec = correctness_vector(records, bench_questions)
    assert float(vec.mean()) == pytest.approx(
        accuracy(records, bench_questions), abs=1e-12
    )


# -------------------------------------------------------------- macro F1


def test_macro_f1_matches_brute_force(bench_questions):
    for trial in range(40):
        records = random_fixture(bench_questions, trial)
        assert abs(
            macro_f1(records, bench_questions)
            - brute_macro_f1(records, bench_questions)
        ) <= 1e-12


def test_macro_f1_perfect_run_is_one(bench_questions):
    records = [rec(q, q.correct_index) for q in bench_questions]
    assert macro_f1(records, bench_questions) == pytest.approx(1.0)


def test_invalid_reassignment_never_lands_on_truth(bench_questions):
    for q in bench_questions[:10]:
        bad = rec(q, None, valid=False)
        truth = namespaced(q.category, q.correct_class)
        for pass_index in range(10):
            got = _predicted_class(bad, q, reassign_seed=0, pass_index=pass_index)
            assert got != truth
            again = _predicted_class(bad, q, reassign_seed=0, pass_index=pass_index)
            assert again == got


def test_macro_f1_with_invalids_deterministic(bench_questions):
    rng = child_rng(7, "invalids")
    records = []
    for q in bench_questions:
        if rng.random() < 0.3:
            records.append(rec(q, None, valid=False))
        else:
            records.append(rec(q, q.correct_index))
    a = macro_f1(records, bench_questions)
    b = macro_f1(records, bench_questions)
    assert a == b
    # Averaging passes keeps the figure strictly below a clean run.
    assert a < 1.0


def test_precision_recall_class_detail(bench_questions):
    records = [rec(q, q.correct_index) for q in bench_questions]
    out = precision_recall(records, bench_questions)
    assert out["macro_precision"] == pytest.approx(1.0)
    assert out["macro_recall"] == pytest.approx(1.0)
    total_support = sum(v["support"] for v in out["classes"].values())
    assert total_support == len(bench_questions)
    for cls, v in out["classes"].items():
        assert "/" in cls  # classes are category-namespaced
        assert v["f1"] == pytest.approx(1.0)


# ------------------------------------------------------------- bootstrap


def test_bootstrap_constant_vector_collapses():
    lo, hi = bootstrap_ci(np.full(500, 0.25))
    assert lo == 0.25 and hi == 0.25


def test_bootstrap_empty_is_nan():
    lo, hi = bootstrap_ci(np.array([]))
    assert math.isnan(lo) and math.isnan(hi)


def test_bootstrap_deterministic_and_ordered():
    values = child_rng(3, "boot").integers(0, 2, size=750).astype(float)
    a = bootstrap_ci(values, seed=11)
    b = bootstrap_ci(values, seed=11)
    assert a == b
    lo, hi = a
    assert lo <= values.mean() <= hi
    # Binomial math puts the 95% band near p +/- 1.96*sqrt(p(1-p)/n).
    p = values.mean()
    half = 1.96 * math.sqrt(p * (1 - p) / values.size)
    assert lo == pytest.approx(p - half, abs=0.015)
    assert hi == pytest.approx(p + half, abs=0.015)


def test_bootstrap_statistic_version_matches_mean_form(bench_questions):
    records = random_fixture(bench_questions, 5)
    lo, hi = bootstrap_ci_statistic(
        records, bench_questions, accuracy, n_batches=300, seed=4
    )
    assert 0.0 <= lo <= hi <= 1.0


# ------------------------------------------------------------- agreement


def test_cohen_kappa_hand_value():
    assert cohen_kappa(["x", "x", "y", "y"], ["x", "x", "y", "x"]) == pytest.approx(0.5)


def test_cohen_kappa_perfect_and_undefined():
    assert cohen_kappa(["x", "y"], ["x", "y"]) == pytest.approx(1.0)
    assert math.isnan(cohen_kappa(["x", "x"], ["x", "x"]))
    assert math.isnan(cohen_kappa([], []))


def test_cohen_kappa_requires_pairs():
    with pytest.raises(ConfigError):
        cohen_kappa(["x"], ["x", "y"])


def test_krippendorff_alpha_hand_value():
    units = [["a", "a"], ["a", "b"], ["b", "b"]]
    # coincidence: o_aa=2, o_ab=o_ba=1, o_bb=2; D_o=2, D_e=18/5.
    assert krippendorff_alpha(units) == pytest.approx(1 - 2 / 3.6)


def test_krippendorff_alpha_ignores_missing():
    units = [
        ["a", "a", None],
        ["a", None, "b"],
        [None, "b", "b"],
        [None, None, None],
        ["a", None, None],  # a single rating cannot form a pair
    ]
    assert krippendorff_alpha(units) == pytest.approx(1 - 2 / 3.6)


def test_krippendorff_alpha_degenerate_cases():
    assert krippendorff_alpha([["a", "a"], ["a", "a"]]) != krippendorff_alpha([])
    assert math.isnan(krippendorff_alpha([["a", "a"], ["a", "a"]]))
    assert math.isnan(krippendorff_alpha([]))
    assert krippendorff_alpha([["a", "a"], ["b", "b"]]) == pytest.approx(1.0)


# ---------------------------------------------------------- oracle merge


def test_model_expert_oracle_dominates_and_keeps_first(bench_questions):
    qs = bench_questions[:5]
    wrong = [(q.correct_index + 1) % len(q.options) for q in qs]
    other = [(q.correct_index + 2) % len(q.options) if len(q.options) > 2
             else (q.correct_index + 1) % len(q.options) for q in qs]
    a = [
        rec(qs[0], qs[0].correct_index, model="a"),
        rec(qs[1], wrong[1], model="a"),
        rec(qs[2], wrong[2], model="a"),
        # qs[3] missing from run a
        rec(qs[4], None, valid=False, model="a"),
    ]
    b = [
        rec(qs[0], wrong[0], model="b"),
        rec(qs[1], qs[1].correct_index, model="b"),
        rec(qs[2], other[2], model="b"),
        rec(qs[3], qs[3].correct_index, model="b"),
        rec(qs[4], None, valid=False, model="b"),
    ]
    merged = model_expert_oracle(a, b, qs)
    assert [r.question_id for r in merged] == sorted(q.question_id for q in qs)
    by_qid = {r.question_id: r for r in merged}
    acc_m = accuracy(merged, qs)
    assert acc_m >= max(accuracy(a[:3], qs[:3]), accuracy(b, qs))
    assert acc_m == pytest.approx(3 / 5)
    # Either-correct questions come out correct.
    for i in (0, 1, 3):
        assert by_qid[qs[i].question_id].valid
        assert by_qid[qs[i].question_id].matched_index == qs[i].correct_index
    # Both wrong: the first run's answer survives.
    kept = by_qid[qs[2].question_id]
    assert kept.matched_index == wrong[2]
    assert kept.parsed_answer == qs[2].options[wrong[2]]
    assert kept.model == "oracle(a,b)"
    # Invalid in both stays invalid.
    assert not by_qid[qs[4].question_id].valid


def test_model_expert_oracle_missing_both_marked(bench_questions):
    qs = bench_questions[:2]
    a = [rec(qs[0], qs[0].correct_index, model="a")]
    b = [rec(qs[0], qs[0].correct_index, model="b")]
    merged = model_expert_oracle(a, b, qs)
    missing = [r for r in merged if r.question_id == qs[1].question_id][0]
    assert not missing.valid
    assert missing.error is not None


# ----------------------------------------------------------------- score


def test_score_report_perfect_run(bench_questions):
    records = [rec(q, q.correct_index, model="ideal") for q in bench_questions]
    report = score(records, bench_questions, n_batches=200, batch_size=100)
    assert report.model == "ideal"
    assert report.n_questions == len(bench_questions)
    assert report.n_valid == len(bench_questions)
    assert report.overall["accuracy"] == 1.0
    assert report.overall["macro_f1"] == pytest.approx(1.0)
    assert report.overall["accuracy_ci"] == [1.0, 1.0]
    assert set(report.tiers) == {"1", "2", "3"}
    assert len(report.categories) == 8
    for cat, d in report.categories.items():
        assert d["accuracy"] == 1.0


def test_score_without_ci(bench_questions):
    records = [rec(q, q.correct_index) for q in bench_questions]
    report = score(records, bench_questions, with_ci=False)
    assert "accuracy_ci" not in report.overall


def test_score_requires_matching_records(bench_questions):
    with pytest.raises(ConfigError):
        score([], bench_questions)


def test_score_report_round_trip(bench_questions):
    records = random_fixture(bench_questions, 1)
    report = score(records, bench_questions, with_ci=False)
    clone = ScoreReport.from_dict(report.to_dict())
    assert clone == report


def test_formatters_smoke(bench_questions):
    records = [rec(q, q.correct_index, model="mdl-x") for q in bench_questions]
    report = score(records, bench_questions, n_batches=100, batch_size=50)
    table = format_score_table([report])
    assert "mdl-x" in table and "acc" in table
    md = format_markdown([report])
    assert md.count("\n") == 2
    assert md.startswith("| Model |")
