"""Offline evaluation: held-out positive pairs, top-K slates, four metrics.

Protocol: compute pseudo labels for every observed pair, hold out a random
sample of strongly positive pairs (score strictly over the threshold),
train every scorer on the remaining labels, and measure how often the
held-out teacher shows up in the student's top-K slate. Recall is the
headline metric; precision, diversity, and new-teacher ratio are reported
alongside. Matrix-factorization baselines cannot score teachers missing
from their matrix, so their new-teacher ratio is reported as N/A.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field as dataclass_field
from datetime import timedelta
from typing import Mapping, Sequence

import numpy as np

from . import gbdt
from .baselines import FactorModel, ItemCFModel, RatingMatrix, nmf_fit_matrix, svd_fit
from .features import FeatureExtractor, build_schema, stat_columns_of
from .labels import LabeledPair, Polarity, build_labels
from .ranking import (
    BoostParams,
    RecommendationSlate,
    SlateEntry,
    build_slate,
    diversity,
    new_teacher_ratio,
    rank,
)
from .store import InteractionStore, PeopleTable


class SplitError(ValueError):
    pass


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class TestSplit:
    held_out: tuple[tuple[str, str], ...]
    train_labels: tuple[LabeledPair, ...]
    threshold: float
    seed: int

    def test_students(self) -> tuple[str, ...]:
        return tuple(sorted({s for s, _ in self.held_out}))


def make_split(
    labels: Sequence[LabeledPair],
    threshold: float = 0.5,
    sample_size: int | None = None,
    seed: int = 0,
) -> TestSplit:
    """Sample positive pairs with score strictly over ``threshold`` as test data.

    ``sample_size=None`` holds out every eligible pair. Sampling is uniform
    without replacement and deterministic under ``seed``.
    """
    eligible = [
        l for l in labels if l.polarity is Polarity.POSITIVE and l.score > threshold
    ]
    if sample_size is None:
        sample_size = len(eligible)
    if len(eligible) < sample_size:
        raise SplitError(
            f"only {len(eligible)} pairs have positive score over {threshold}, "
            f"need {sample_size}"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(eligible), size=sample_size, replace=False)
    held = sorted(eligible[i].pair for i in chosen)
    held_set = set(held)
    train = tuple(l for l in labels if l.pair not in held_set)
    return TestSplit(
        held_out=tuple(held), train_labels=train, threshold=threshold, seed=seed
    )


def check_no_leak(split: TestSplit) -> None:
    """Assert no held-out pair survives in the training labels."""
    held = set(split.held_out)
    leaked = [l.pair for l in split.train_labels if l.pair in held]
    if leaked:
        raise EvaluationError(f"held-out pairs leaked into training labels: {leaked[:5]}")


def _validate_slates(
    split: TestSplit, slates: Mapping[str, RecommendationSlate], k: int
) -> None:
    for student in split.test_students():
        slate = slates.get(student)
        if slate is None:
            raise EvaluationError(f"test student {student} has no slate")
        if len(slate) > k:
            raise EvaluationError(
                f"slate for {student} has {len(slate)} entries, more than K={k}"
            )


def _count_hits(split: TestSplit, slates: Mapping[str, RecommendationSlate]) -> int:
    return sum(1 for s, t in split.held_out if t in slates[s].teachers())


def recall_at_k(
    split: TestSplit, slates: Mapping[str, RecommendationSlate], k: int
) -> float:
    """Fraction of held-out pairs whose teacher appears in the student's slate."""
    if not split.held_out:
        raise EvaluationError("empty test split")
    _validate_slates(split, slates, k)
    return _count_hits(split, slates) / len(split.held_out)


def precision_at_k(
    split: TestSplit, slates: Mapping[str, RecommendationSlate], k: int
) -> float:
    """Hits over the total recommended volume (test students times K)."""
    if not split.held_out:
        raise EvaluationError("empty test split")
    _validate_slates(split, slates, k)
    return _count_hits(split, slates) / (len(split.test_students()) * k)


# -- full protocol -------------------------------------------------------


@dataclass
class EvalConfig:
    k: int = 200
    threshold: float = 0.5
    sample_size: int | None = None
    seed: int = 0
    gbdt: gbdt.TrainParams = dataclass_field(default_factory=gbdt.TrainParams)
    svd_k: int = 16
    svd_iterations: int = 100
    nmf_k: int = 16
    nmf_iterations: int = 200
    itemcf_top_n: int = 50
    max_school_vocab: int = 50
    include_baselines: bool = True


@dataclass(frozen=True)
class EvalRow:
    model: str
    precision: float
    recall: float
    diversity: float
    new_teacher_ratio: float | None  # None renders as N/A

    def __post_init__(self):
        for name in ("precision", "recall", "diversity"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise EvaluationError(f"{name} out of [0, 1]: {value}")
        if self.new_teacher_ratio is not None and not 0.0 <= self.new_teacher_ratio <= 1.0:
            raise EvaluationError(f"new_teacher_ratio out of [0, 1]: {self.new_teacher_ratio}")


METRIC_HEADERS = ("Precision", "Recall", "Diversity", "New Teacher Ratio")


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalRow, ...]
    k: int
    n_test_pairs: int
    seed: int

    def row(self, model: str) -> EvalRow:
        for r in self.rows:
            if r.model == model:
                return r
        raise KeyError(model)

    def to_text(self) -> str:
        headers = ("Model",) + METRIC_HEADERS
        body = [
            (
                r.model,
                f"{r.precision:.4f}",
                f"{r.recall:.4f}",
                f"{r.diversity:.4f}",
                "N/A" if r.new_teacher_ratio is None else f"{r.new_teacher_ratio:.4f}",
            )
            for r in self.rows
        ]
        widths = [max(len(h), *(len(row[i]) for row in body)) for i, h in enumerate(headers)]
        out = io.StringIO()
        out.write("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip() + "\n")
        for row in body:
            out.write("  ".join(c.ljust(widths[i]) for i, c in enumerate(row)).rstrip() + "\n")
        return out.getvalue()

    def to_csv_text(self) -> str:
        lines = ["model,precision,recall,diversity,new_teacher_ratio"]
        for r in self.rows:
            ratio = "N/A" if r.new_teacher_ratio is None else f"{r.new_teacher_ratio:.6f}"
            lines.append(
                f"{r.model},{r.precision:.6f},{r.recall:.6f},{r.diversity:.6f},{ratio}"
            )
        return "\n".join(lines) + "\n"


def eval_as_of(store: InteractionStore):
    """An instant strictly after every record, so nothing is masked by time."""
    latest = max(c.timestamp for c in store.courses)
    return latest + timedelta(seconds=1)


def training_matrix(
    extractor: FeatureExtractor, labels: Sequence[LabeledPair]
) -> tuple[np.ndarray, np.ndarray]:
    """Training features extracted as of each pair's match time.

    Candidates are scored before their first course ever happens, so
    training rows use only what was known then: the as-of instant is the
    pair's first course timestamp floored to the day (day granularity
    keeps the number of distinct aggregation views small). Pairs absent
    from the extractor's store fall back to the earliest day.
    """
    first_course: dict[tuple[str, str], object] = {}
    for c in extractor.store.courses:
        key = (c.student, c.teacher)
        if key not in first_course or c.timestamp < first_course[key]:
            first_course[key] = c.timestamp
    earliest = min(first_course.values()) if first_course else None

    X = np.zeros((len(labels), extractor.schema.width))
    y = np.zeros(len(labels))
    by_day: dict[object, list[int]] = {}
    for i, label in enumerate(labels):
        y[i] = label.score
        ts = first_course.get(label.pair, earliest)
        day = ts.replace(hour=0, minute=0, second=0, microsecond=0)
        by_day.setdefault(day, []).append(i)
    for day, indices in sorted(by_day.items()):
        for i in indices:
            X[i] = extractor.extract(labels[i].student, labels[i].teacher, day)
    return X, y


def evaluate_all(
    store: InteractionStore,
    students: PeopleTable,
    teachers: PeopleTable,
    boost_params: BoostParams,
    config: EvalConfig | None = None,
    external_scores: Mapping[str, Mapping[tuple[str, str], float]] | None = None,
) -> EvalReport:
    """Run the whole offline protocol and produce one report row per model.

    The held-out pairs' courses are hidden from the evaluation store, so
    candidate pools, features, and baseline matrices never see them; every
    model ranks the same candidate pool per student.
    """
    config = config or EvalConfig()
    labels = build_labels(store)
    split = make_split(labels, config.threshold, config.sample_size, config.seed)
    check_no_leak(split)

    masked = store.without_pairs(split.held_out)
    as_of = eval_as_of(store)
    schema = build_schema(
        students, teachers, stat_columns_of(masked), config.max_school_vocab
    )
    extractor = FeatureExtractor(masked, schema, students, teachers)

    X, y = training_matrix(extractor, split.train_labels)
    model = gbdt.train(X, y, config.gbdt, schema_fingerprint=schema.fingerprint)

    universe = tuple(sorted(set(teachers.ids()) | set(store.teachers())))
    test_students = split.test_students()

    our_slates = {
        s: rank(s, universe, model, extractor, boost_params, config.k, as_of)
        for s in test_students
    }
    rows = [
        _metric_row("our", split, our_slates, config.k, new_ratio="boost")
    ]

    if config.include_baselines:
        matrix = RatingMatrix.from_labels(split.train_labels)
        scorers: list[tuple[str, object]] = [
            ("itemcf", ItemCFModel(matrix, top_n=config.itemcf_top_n)),
            (
                "svd",
                svd_fit(matrix, config.svd_k, config.svd_iterations, seed=config.seed),
            ),
            (
                "nmf",
                nmf_fit_matrix(matrix, config.nmf_k, config.nmf_iterations, seed=config.seed),
            ),
        ]
        for name, scorer in scorers:
            slates = {
                s: _score_slate(s, universe, scorer, masked, config.k)
                for s in test_students
            }
            rows.append(_metric_row(name, split, slates, config.k, new_ratio=None))

    for name, scores in (external_scores or {}).items():
        slates = {
            s: _external_slate(s, universe, scores, masked, config.k)
            for s in test_students
        }
        is_new = lambda t: masked.teacher_total(t) < boost_params.delta  # noqa: E731
        rows.append(_metric_row(name, split, slates, config.k, new_ratio=is_new))

    return EvalReport(
        rows=tuple(rows),
        k=config.k,
        n_test_pairs=len(split.held_out),
        seed=config.seed,
    )


def _candidates(student: str, universe: Sequence[str], masked: InteractionStore) -> list[str]:
    taught = set(masked.teachers_of(student))
    return [t for t in universe if t not in taught]


def _score_slate(student, universe, scorer, masked, k) -> RecommendationSlate:
    pool = _candidates(student, universe, masked)
    scores = scorer.score_candidates(student, pool)
    entries = [
        SlateEntry(teacher=t, model_score=float(v), boost=0.0, combined_score=float(v))
        for t, v in zip(pool, scores)
    ]
    return build_slate(student, entries, k)


def _external_slate(student, universe, scores, masked, k) -> RecommendationSlate:
    pool = _candidates(student, universe, masked)
    entries = [
        SlateEntry(
            teacher=t,
            model_score=float(scores.get((student, t), 0.0)),
            boost=0.0,
            combined_score=float(scores.get((student, t), 0.0)),
        )
        for t in pool
    ]
    return build_slate(student, entries, k)


def _metric_row(name, split, slates, k, new_ratio) -> EvalRow:
    slate_list = [slates[s] for s in split.test_students()]
    if new_ratio == "boost":
        ratio = new_teacher_ratio(slate_list)
    elif callable(new_ratio):
        ratio = new_teacher_ratio(slate_list, is_new=new_ratio)
    else:
        ratio = None
    return EvalRow(
        model=name,
        precision=precision_at_k(split, slates, k),
        recall=recall_at_k(split, slates, k),
        diversity=diversity(slate_list) if len(slate_list) >= 2 else 1.0,
        new_teacher_ratio=ratio,
    )


def load_external_scores(path: str) -> dict[tuple[str, str], float]:
    """Read an external scorer's (student_id, teacher_id, score) CSV."""
    import csv

    scores: dict[tuple[str, str], float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"student_id", "teacher_id", "score"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise EvaluationError(f"external scores file must have columns {sorted(required)}")
        for row in reader:
            scores[(row["student_id"], row["teacher_id"])] = float(row["score"])
    return scores
