"""Top-K slate assembly and the slate-level guardrail metrics.

A candidate's combined score is the ranking model's prediction plus a
novelty boost of ``alpha / sqrt(total_courses + beta)`` while the teacher
has taught fewer than ``delta`` courses, and 0 after. The boost decays
with experience, never flips sign, and leaves slate ordering invariant
under constant shifts of the model scores.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import datetime
from typing import Callable, Iterable, Sequence

from .features import FeatureExtractor
from .gbdt import GbdtModel


@dataclass(frozen=True)
class BoostParams:
    alpha: float = 0.04
    beta: float = 1.0
    delta: int = 100  # course-count threshold under which a teacher counts as new

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")


def novelty_boost(total_courses: int, params: BoostParams) -> float:
    """Ranking incentive for new teachers; 0 once they reach ``delta`` courses."""
    if total_courses < 0:
        raise ValueError(f"total course count must be >= 0, got {total_courses}")
    if total_courses >= params.delta:
        return 0.0
    return params.alpha / math.sqrt(total_courses + params.beta)


@dataclass(frozen=True)
class SlateEntry:
    teacher: str
    model_score: float
    boost: float
    combined_score: float


@dataclass(frozen=True)
class RecommendationSlate:
    """Ordered top-K teachers for one student.

    Entries are sorted by combined score descending with ties broken by
    teacher id ascending; ``truncated`` flags a candidate pool smaller
    than the requested K.
    """

    student: str
    entries: tuple[SlateEntry, ...]
    truncated: bool = False

    def teachers(self) -> set[str]:
        return {e.teacher for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        return {
            "student_id": self.student,
            "entries": [
                {
                    "teacher_id": e.teacher,
                    "model_score": e.model_score,
                    "boost": e.boost,
                    "combined_score": e.combined_score,
                }
                for e in self.entries
            ],
        }


def build_slate(student: str, scored: Iterable[SlateEntry], k: int) -> RecommendationSlate:
    """Order scored candidates and keep the top K."""
    entries = sorted(scored, key=lambda e: (-e.combined_score, e.teacher))
    return RecommendationSlate(
        student=student,
        entries=tuple(entries[:k]),
        truncated=len(entries) < k,
    )


def rank(
    student: str,
    candidate_teachers: Sequence[str],
    model: GbdtModel,
    extractor: FeatureExtractor,
    params: BoostParams,
    k: int,
    as_of: datetime,
) -> RecommendationSlate:
    """Score candidates with the model plus novelty boost and keep the top K.

    Teachers the student has already taken courses with are excluded; if
    fewer than K candidates remain, all of them are returned and the slate
    is flagged as truncated.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not candidate_teachers:
        raise ValueError("candidate teacher pool is empty")
    taught = set(extractor.store.teachers_of(student))
    pool = [t for t in dict.fromkeys(candidate_teachers) if t not in taught]
    if not pool:
        return RecommendationSlate(student=student, entries=(), truncated=True)
    X = extractor.extract_candidates(student, pool, as_of)
    scores = model.predict_batch(X, schema_fingerprint=extractor.schema.fingerprint)
    scored = []
    for teacher, model_score in zip(pool, scores):
        boost = novelty_boost(extractor.store.teacher_total(teacher), params)
        scored.append(
            SlateEntry(
                teacher=teacher,
                model_score=float(model_score),
                boost=boost,
                combined_score=float(model_score) + boost,
            )
        )
    return build_slate(student, scored, k)


def new_teacher_ratio(
    slates: Sequence[RecommendationSlate],
    is_new: Callable[[str], bool] | None = None,
) -> float:
    """Mean per-slate fraction of new teachers among the recommendations.

    By default an entry counts as new when it carries a positive boost;
    pass ``is_new`` to apply the course-count predicate directly (for
    slates produced without boosting).
    """
    if not slates:
        raise ValueError("need at least one slate")
    total = 0.0
    for slate in slates:
        if len(slate) == 0:
            raise ValueError(f"slate for student {slate.student} is empty")
        if is_new is None:
            hits = sum(1 for e in slate.entries if e.boost > 0)
        else:
            hits = sum(1 for e in slate.entries if is_new(e.teacher))
        total += hits / len(slate)
    return total / len(slates)


def diversity(slates: Sequence[RecommendationSlate]) -> float:
    """Guardrail metric: 1 minus the mean pairwise slate overlap.

    Overlap between two slates is the intersection size normalized by the
    smaller slate; 1.0 means no two students share a recommended teacher,
    0.0 means everyone got the same slate.
    """
    if len(slates) < 2:
        raise ValueError("diversity needs at least 2 slates")
    sets = []
    for slate in slates:
        if len(slate) == 0:
            raise ValueError(f"slate for student {slate.student} is empty")
        sets.append(slate.teachers())
    n = len(sets)
    overlap = 0.0
    for i in range(n - 1):
        for j in range(i + 1, n):
            overlap += len(sets[i] & sets[j]) / min(len(sets[i]), len(sets[j]))
    return 1.0 - 2.0 * overlap / (n * (n - 1))


def write_slates_jsonl(slates: Iterable[RecommendationSlate], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for slate in slates:
            fh.write(json.dumps(slate.to_dict(), separators=(",", ": ")) + "\n")
