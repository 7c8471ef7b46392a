"""Scoring: accuracy, macro-F1 over semantic answer classes, bootstrap
confidence intervals, chance-corrected agreement, and the best-of-two
oracle ensemble.

Answer options are scored by semantic class, not by letter: each option
of a question maps to one class (for example "Early" / "Medium" /
"Late" for a timestamp question), so shuffled letters never leak into
the scores. Invalid or unanswered records count as incorrect for
accuracy; for class-level scores they are reassigned uniformly to one
of the question's incorrect classes, averaged over several seeds, so a
model cannot improve its F1 by refusing to answer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .clients import EvalRecord
from .errors import ConfigError
from .questions import SEMANTIC_CLASSES, TIER_OF, Question
from .rng import child_rng

INVALID_REASSIGN_SEEDS = 10


def _question_map(questions: list[Question]) -> dict[str, Question]:
    return {q.question_id: q for q in questions}


def _dedupe(records: list[EvalRecord]) -> list[EvalRecord]:
    seen: dict[str, EvalRecord] = {}
    for r in records:
        seen[r.question_id] = r
    return list(seen.values())


def _scope_filter(
    records: list[EvalRecord],
    questions: dict[str, Question],
    category: str | None = None,
    tier: int | None = None,
) -> list[EvalRecord]:
    out = []
    for r in records:
        q = questions.get(r.question_id)
        if q is None:
            continue
        if category is not None and q.category != category:
            continue
        if tier is not None and TIER_OF[q.category] != tier:
            continue
        out.append(r)
    return out


def namespaced(category: str, cls: str) -> str:
    return f"{category}/{cls}"


def accuracy(records: list[EvalRecord], questions: list[Question]) -> float:
    """Fraction answered correctly; invalid or missing answers count
    as wrong."""
    qmap = _question_map(questions)
    records = _dedupe(records)
    if not records:
        return float("nan")
    correct = 0
    for r in records:
        q = qmap.get(r.question_id)
        if q is None:
            raise ConfigError(f"record for unknown question {r.question_id}")
        if r.valid and r.matched_index == q.correct_index:
            correct += 1
    return correct / len(records)


def correctness_vector(records: list[EvalRecord], questions: list[Question]) -> np.ndarray:
    qmap = _question_map(questions)
    records = _dedupe(records)
    out = np.zeros(len(records), dtype=np.float64)
    for i, r in enumerate(records):
        q = qmap[r.question_id]
        out[i] = 1.0 if (r.valid and r.matched_index == q.correct_index) else 0.0
    return out


def _predicted_class(
    record: EvalRecord, question: Question, reassign_seed: int, pass_index: int
) -> str:
    if record.valid and record.matched_index is not None:
        return namespaced(question.category, question.option_classes[record.matched_index])
    wrong = [c for c in question.option_classes if c != question.correct_class]
    rng = child_rng(reassign_seed, "invalid-reassign", pass_index, question.question_id)
    return namespaced(question.category, wrong[int(rng.integers(len(wrong)))])


def _per_seed_class_stats(
    records: list[EvalRecord],
    qmap: dict[str, Question],
    reassign_seed: int,
    pass_index: int,
) -> dict[str, dict[str, float]]:
    """One confusion pass: per-class tp / fp / fn counts."""
    stats: dict[str, dict[str, float]] = {}

    def bucket(cls: str) -> dict[str, float]:
        return stats.setdefault(cls, {"tp": 0.0, "fp": 0.0, "fn": 0.0, "support": 0.0})

    for r in records:
        q = qmap[r.question_id]
        true = namespaced(q.category, q.correct_class)
        pred = _predicted_class(r, q, reassign_seed, pass_index)
        bucket(true)["support"] += 1.0
        if pred == true:
            bucket(true)["tp"] += 1.0
        else:
            bucket(true)["fn"] += 1.0
            bucket(pred)["fp"] += 1.0
    return stats


def _f1_from_stats(stats: dict[str, dict[str, float]]) -> dict[str, dict[str, float]]:
    out = {}
    for cls, s in stats.items():
        tp, fp, fn = s["tp"], s["fp"], s["fn"]
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        out[cls] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": s["support"],
        }
    return out


def precision_recall(
    records: list[EvalRecord],
    questions: list[Question],
    reassign_seed: int = 0,
    n_passes: int = INVALID_REASSIGN_SEEDS,
) -> dict:
    """Per-class precision / recall / F1 plus their macro averages.

    With invalid answers present the class assignment is randomized, so
    every figure is the mean over ``n_passes`` reassignment passes.
    Classes appearing in either truth or predictions are included; the
    macro average is the unweighted mean over that class set.
    """
    qmap = _question_map(questions)
    records = _dedupe(records)
    if not records:
        return {"classes": {}, "macro_precision": float("nan"), "macro_recall": float("nan"), "macro_f1": float("nan")}
    any_invalid = any(not (r.valid and r.matched_index is not None) for r in records)
    passes = n_passes if any_invalid else 1

    acc: dict[str, dict[str, float]] = {}
    macro_p = macro_r = macro_f = 0.0
    for k in range(passes):
        per = _f1_from_stats(_per_seed_class_stats(records, qmap, reassign_seed, k))
        macro_p += float(np.mean([v["precision"] for v in per.values()]))
        macro_r += float(np.mean([v["recall"] for v in per.values()]))
        macro_f += float(np.mean([v["f1"] for v in per.values()]))
        for cls, v in per.items():
            slot = acc.setdefault(cls, {"precision": 0.0, "recall": 0.0, "f1": 0.0, "support": 0.0, "passes": 0.0})
            for key in ("precision", "recall", "f1", "support"):
                slot[key] += v[key]
            slot["passes"] += 1.0
    classes = {}
    for cls, slot in acc.items():
        # A class absent from some passes (possible only for predicted-
        # only classes) averages over the passes it appeared in.
        k = slot["passes"]
        classes[cls] = {
            "precision": slot["precision"] / k,
            "recall": slot["recall"] / k,
            "f1": slot["f1"] / k,
            "support": slot["support"] / k,
        }
    return {
        "classes": classes,
        "macro_precision": macro_p / passes,
        "macro_recall": macro_r / passes,
        "macro_f1": macro_f / passes,
    }


def macro_f1(
    records: list[EvalRecord],
    questions: list[Question],
    reassign_seed: int = 0,
    n_passes: int = INVALID_REASSIGN_SEEDS,
) -> float:
    """Unweighted mean F1 over semantic classes (see module docstring
    for the invalid-answer policy)."""
    return precision_recall(records, questions, reassign_seed=reassign_seed, n_passes=n_passes)["macro_f1"]


def bootstrap_ci(
    values: np.ndarray,
    n_batches: int = 1000,
    batch_size: int = 750,
    seed: int = 0,
    confidence: float = 0.95,
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of ``values``.

    Each replicate draws ``batch_size`` observations with replacement;
    the interval is the (alpha/2, 1 - alpha/2) percentile of the
    replicate means.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return (float("nan"), float("nan"))
    rng = child_rng(seed, "bootstrap")
    idx = rng.integers(0, values.size, size=(n_batches, batch_size))
    means = values[idx].mean(axis=1)
    alpha = 1.0 - confidence
    lo, hi = np.percentile(means, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return (float(lo), float(hi))


def bootstrap_ci_statistic(
    records: list[EvalRecord],
    questions: list[Question],
    statistic,
    n_batches: int = 1000,
    batch_size: int = 750,
    seed: int = 0,
    confidence: float = 0.95,
) -> tuple[float, float]:
    """Bootstrap interval for an arbitrary record-level statistic
    (callable taking (records, questions) and returning a float)."""
    records = _dedupe(records)
    if not records:
        return (float("nan"), float("nan"))
    rng = child_rng(seed, "bootstrap")
    stats = np.empty(n_batches, dtype=np.float64)
    for b in range(n_batches):
        idx = rng.integers(0, len(records), size=batch_size)
        batch = [records[i] for i in idx]
        stats[b] = statistic(batch, questions)
    alpha = 1.0 - confidence
    lo, hi = np.percentile(stats, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return (float(lo), float(hi))


def cohen_kappa(labels_a: list, labels_b: list) -> float:
    """Chance-corrected agreement between two raters.

    Returns NaN when expected agreement is 1 (both raters constant),
    where the statistic is undefined.
    """
    if len(labels_a) != len(labels_b):
        raise ConfigError("kappa needs paired labels")
    n = len(labels_a)
    if n == 0:
        return float("nan")
    classes = sorted(set(labels_a) | set(labels_b), key=str)
    index = {c: i for i, c in enumerate(classes)}
    table = np.zeros((len(classes), len(classes)), dtype=np.float64)
    for a, b in zip(labels_a, labels_b):
        table[index[a], index[b]] += 1.0
    p_o = np.trace(table) / n
    row = table.sum(axis=1) / n
    col = table.sum(axis=0) / n
    p_e = float(np.dot(row, col))
    if p_e == 1.0:
        return float("nan")
    return float((p_o - p_e) / (1.0 - p_e))


def krippendorff_alpha(ratings: list[list]) -> float:
    """Nominal-level alpha for multiple raters with missing values.

    ``ratings`` is a list of units; each unit is a list of ratings
    where ``None`` marks a missing rating. Units with fewer than two
    ratings are ignored. Returns NaN when no variation exists.
    """
    values: list = sorted(
        {v for unit in ratings for v in unit if v is not None}, key=str
    )
    index = {v: i for i, v in enumerate(values)}
    k = len(values)
    if k == 0:
        return float("nan")
    coincidence = np.zeros((k, k), dtype=np.float64)
    for unit in ratings:
        present = [v for v in unit if v is not None]
        m = len(present)
        if m < 2:
            continue
        for i, a in enumerate(present):
            for j, b in enumerate(present):
                if i == j:
                    continue
                coincidence[index[a], index[b]] += 1.0 / (m - 1)
    n_total = coincidence.sum()
    if n_total == 0:
        return float("nan")
    marginals = coincidence.sum(axis=0)
    d_o = n_total - np.trace(coincidence)
    d_e = (n_total**2 - float(np.dot(marginals, marginals))) / (n_total - 1)
    if d_e == 0:
        return float("nan")
    return float(1.0 - d_o / d_e)


def model_expert_oracle(
    records_a: list[EvalRecord],
    records_b: list[EvalRecord],
    questions: list[Question],
) -> list[EvalRecord]:
    """Best-of-two ensemble: a question is answered correctly when
    either source answered it correctly; otherwise the first source's
    answer (and its semantic class) is kept."""
    qmap = _question_map(questions)
    by_a = {r.question_id: r for r in _dedupe(records_a)}
    by_b = {r.question_id: r for r in _dedupe(records_b)}
    merged = []
    for qid, q in qmap.items():
        a = by_a.get(qid)
        b = by_b.get(qid)
        a_ok = a is not None and a.valid and a.matched_index == q.correct_index
        b_ok = b is not None and b.valid and b.matched_index == q.correct_index
        name_a = a.model if a else "missing"
        name_b = b.model if b else "missing"
        model = f"oracle({name_a},{name_b})"
        if a_ok or b_ok:
            src = a if a_ok else b
            merged.append(
                EvalRecord(
                    question_id=qid,
                    model=model,
                    mode=src.mode,
                    permutation=src.permutation,
                    raw_response=src.raw_response,
                    parsed_answer=src.parsed_answer,
                    valid=True,
                    matched_index=q.correct_index,
                )
            )
        elif a is not None:
            merged.append(
                EvalRecord(
                    question_id=qid,
                    model=model,
                    mode=a.mode,
                    permutation=a.permutation,
                    raw_response=a.raw_response,
                    parsed_answer=a.parsed_answer,
                    valid=a.valid,
                    matched_index=a.matched_index,
                    error=a.error,
                )
            )
        else:
            merged.append(
                EvalRecord(
                    question_id=qid,
                    model=model,
                    mode="vision",
                    permutation=list(range(len(q.options))),
                    raw_response="",
                    parsed_answer=None,
                    valid=False,
                    matched_index=None,
                    error="missing in both runs" if b is None else "missing in first run",
                )
            )
    merged.sort(key=lambda r: r.question_id)
    return merged


@dataclass
class ScoreReport:
    """Scores for one evaluation run, overall and per slice."""

    model: str
    mode: str
    n_questions: int
    n_answered: int
    n_valid: int
    overall: dict = field(default_factory=dict)
    tiers: dict = field(default_factory=dict)
    categories: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "mode": self.mode,
            "n_questions": self.n_questions,
            "n_answered": self.n_answered,
            "n_valid": self.n_valid,
            "overall": self.overall,
            "tiers": self.tiers,
            "categories": self.categories,
            "settings": self.settings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreReport":
        return cls(**d)


def score(
    records: list[EvalRecord],
    questions: list[Question],
    reassign_seed: int = 0,
    n_passes: int = INVALID_REASSIGN_SEEDS,
    n_batches: int = 1000,
    batch_size: int = 750,
    bootstrap_seed: int = 0,
    with_ci: bool = True,
) -> ScoreReport:
    qmap = _question_map(questions)
    records = [r for r in _dedupe(records) if r.question_id in qmap]
    if not records:
        raise ConfigError("no records match the question set")
    model = records[0].model
    mode = records[0].mode

    def slice_scores(rs: list[EvalRecord], ci: bool) -> dict:
        out = {
            "n": len(rs),
            "accuracy": accuracy(rs, questions),
            "macro_f1": macro_f1(rs, questions, reassign_seed=reassign_seed, n_passes=n_passes),
        }
        if ci and rs:
            vec = correctness_vector(rs, questions)
            out["accuracy_ci"] = list(
                bootstrap_ci(vec, n_batches=n_batches, batch_size=batch_size, seed=bootstrap_seed)
            )
            out["macro_f1_ci"] = list(
                bootstrap_ci_statistic(
                    rs,
                    questions,
                    lambda b, qs: macro_f1(b, qs, reassign_seed=reassign_seed, n_passes=1),
                    n_batches=min(n_batches, 200),
                    batch_size=batch_size,
                    seed=bootstrap_seed,
                )
            )
        return out

    report = ScoreReport(
        model=model,
        mode=mode,
        n_questions=len(qmap),
        n_answered=len(records),
        n_valid=sum(1 for r in records if r.valid),
        settings={
            "reassign_seed": reassign_seed,
            "n_passes": n_passes,
            "n_batches": n_batches,
            "batch_size": batch_size,
            "bootstrap_seed": bootstrap_seed,
        },
    )
    report.overall = slice_scores(records, with_ci)
    for tier in (1, 2, 3):
        rs = _scope_filter(records, qmap, tier=tier)
        if rs:
            report.tiers[str(tier)] = slice_scores(rs, False)
    cats = sorted({qmap[r.question_id].category for r in records})
    for cat in cats:
        rs = _scope_filter(records, qmap, category=cat)
        report.categories[cat] = slice_scores(rs, False)
    return report


def format_score_table(reports: list[ScoreReport]) -> str:
    """Fixed-width text table, one row per run."""
    headers = ["model", "mode", "n", "acc", "acc 95% CI", "macro-F1", "F1 95% CI", "T1", "T2", "T3"]
    rows = []
    for r in reports:
        o = r.overall

        def fmt_ci(key):
            ci = o.get(key)
            if not ci or any(map(math.isnan, ci)):
                return "-"
            return f"[{ci[0]:.3f}, {ci[1]:.3f}]"

        def tier_acc(t):
            d = r.tiers.get(t)
            return f"{d['accuracy']:.3f}" if d else "-"

        rows.append(
            [
                r.model,
                r.mode,
                str(o.get("n", 0)),
                f"{o['accuracy']:.3f}",
                fmt_ci("accuracy_ci"),
                f"{o['macro_f1']:.3f}",
                fmt_ci("macro_f1_ci"),
                tier_acc("1"),
                tier_acc("2"),
                tier_acc("3"),
            ]
        )
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for row in rows:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(headers))))
    return "\n".join(lines)


def format_markdown(reports: list[ScoreReport]) -> str:
    lines = [
        "| Model | Mode | Accuracy (95% CI) | Macro-F1 (95% CI) | Tier 1 | Tier 2 | Tier 3 |",
        "|---|---|---|---|---|---|---|",
    ]
    for r in reports:
        o = r.overall

        def fmt(value, ci_key):
            ci = o.get(ci_key)
            if ci and not any(map(math.isnan, ci)):
                return f"{value:.3f} ({ci[0]:.3f}-{ci[1]:.3f})"
            return f"{value:.3f}"

        def tier(t):
            d = r.tiers.get(t)
            return f"{d['accuracy']:.3f}" if d else "-"

        lines.append(
            f"| {r.model} | {r.mode} | {fmt(o['accuracy'], 'accuracy_ci')} | "
            f"{fmt(o['macro_f1'], 'macro_f1_ci')} | {tier('1')} | {tier('2')} | {tier('3')} |"
        )
    return "\n".join(lines)
