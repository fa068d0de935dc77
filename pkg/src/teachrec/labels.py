"""Pseudo matching scores: training targets derived from dropout signals.

A completed student distributes a positive score of 1.0 across their
teachers in proportion to course counts; a dropped student's teachers each
get ``-exp(1 - course_count)``, so quitting right after the first course
scores -1 and long-tenured dropouts approach (but never reach) 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .store import InteractionStore, Outcome


class LabelError(ValueError):
    pass


class Polarity(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class LabeledPair:
    """(student, teacher) training example with a score in [-1, 1]."""

    student: str
    teacher: str
    score: float
    polarity: Polarity

    def __post_init__(self):
        if self.polarity is Polarity.POSITIVE and not 0 < self.score <= 1:
            raise LabelError(f"positive score must be in (0, 1], got {self.score}")
        if self.polarity is Polarity.NEGATIVE and not -1 <= self.score < 0:
            raise LabelError(f"negative score must be in [-1, 0), got {self.score}")

    @property
    def pair(self) -> tuple[str, str]:
        return (self.student, self.teacher)


def positive_scores(store: InteractionStore, student: str) -> dict[str, float]:
    """Per-teacher share of the student's courses; sums to 1.

    Only defined for students who completed the class. A student who never
    changed teacher scores exactly 1.0 for that single teacher.
    """
    outcome = store.outcome(student)
    if outcome is None or outcome.outcome is not Outcome.COMPLETED:
        raise LabelError(f"student {student} has no completed outcome")
    counts = store.student_counts(student)
    if not counts:
        raise LabelError(f"student {student} has no courses")
    total = sum(counts.values())
    return {teacher: count / total for teacher, count in sorted(counts.items())}


def negative_score(course_count: int) -> float:
    """Score for a dropped pair: -exp(1 - course_count), in [-1, 0)."""
    if course_count < 1:
        raise LabelError(f"course_count must be >= 1, got {course_count}")
    return -math.exp(1 - course_count)


def build_labels(store: InteractionStore) -> list[LabeledPair]:
    """Label every pair of every student with an outcome.

    Students without an outcome contribute nothing; their courses still
    shape teacher-level aggregates elsewhere.
    """
    labels: list[LabeledPair] = []
    for student in store.students():
        outcome = store.outcome(student)
        if outcome is None:
            continue
        if outcome.outcome is Outcome.COMPLETED:
            for teacher, score in positive_scores(store, student).items():
                labels.append(LabeledPair(student, teacher, score, Polarity.POSITIVE))
        else:
            for teacher, count in sorted(store.student_counts(student).items()):
                labels.append(LabeledPair(student, teacher, negative_score(count), Polarity.NEGATIVE))
    return labels


def write_labels_csv(labels: Iterable[LabeledPair], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("student_id,teacher_id,score,polarity\n")
        for label in labels:
            fh.write(f"{label.student},{label.teacher},{label.score:.12g},{label.polarity.value}\n")
