"""Domain records, CSV ingestion, and the aggregated interaction store.

Everything downstream (labels, features, ranking) reads from an
:class:`InteractionStore`, which is immutable after ingest and safe to
share across worker threads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence


class IngestError(ValueError):
    """Raised for malformed rows or inconsistent input records.

    ``source`` and ``line`` locate the offending row when the record came
    from a file.
    """

    def __init__(self, message: str, source: str | None = None, line: int | None = None):
        self.source = source
        self.line = line
        if source is not None and line is not None:
            message = f"{source}:{line}: {message}"
        super().__init__(message)


class Outcome(Enum):
    COMPLETED = "completed"
    DROPPED = "dropped"


def _as_utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 timestamp, normalized to UTC."""
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    return _as_utc(datetime.fromisoformat(raw))


@dataclass(frozen=True)
class CourseRecord:
    """One completed lesson between a student and a teacher."""

    student: str
    teacher: str
    timestamp: datetime
    duration_minutes: float
    stats: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.student or not self.teacher:
            raise ValueError("student and teacher ids must be non-empty")
        if not self.duration_minutes > 0:
            raise ValueError(f"duration_minutes must be positive, got {self.duration_minutes}")
        for name, value in self.stats.items():
            if value < 0:
                raise ValueError(f"stat {name!r} must be non-negative, got {value}")
        object.__setattr__(self, "timestamp", _as_utc(self.timestamp))
        object.__setattr__(self, "stats", MappingProxyType(dict(self.stats)))


@dataclass(frozen=True)
class OutcomeRecord:
    """End state of a student's enrollment: completed the class or dropped."""

    student: str
    outcome: Outcome
    decided_at: datetime

    def __post_init__(self):
        if not self.student:
            raise ValueError("student id must be non-empty")
        object.__setattr__(self, "decided_at", _as_utc(self.decided_at))


class InteractionStore:
    """Aggregated course counts plus outcomes.

    Holds, per (student, teacher) pair, the number of courses taught; per
    student, the set of teachers seen; per teacher, the total course count
    and the set of taught students. Instances are immutable: build one via
    :func:`ingest`.
    """

    def __init__(
        self,
        courses: Sequence[CourseRecord],
        outcomes: Mapping[str, OutcomeRecord],
        counts: Mapping[str, Mapping[str, int]],
        teacher_totals: Mapping[str, int],
        teacher_students: Mapping[str, frozenset[str]],
    ):
        self._courses = tuple(courses)
        self._outcomes = dict(outcomes)
        self._counts = {s: dict(ts) for s, ts in counts.items()}
        self._teacher_totals = dict(teacher_totals)
        self._teacher_students = {t: frozenset(ss) for t, ss in teacher_students.items()}

    # -- counts -------------------------------------------------------

    def course_count(self, student: str, teacher: str) -> int:
        """Number of courses the teacher taught this student (0 if none)."""
        return self._counts.get(student, {}).get(teacher, 0)

    def teacher_total(self, teacher: str) -> int:
        """Total courses taught by this teacher across all students."""
        return self._teacher_totals.get(teacher, 0)

    def teachers_of(self, student: str) -> tuple[str, ...]:
        """All teachers who ever taught the student, id-ascending."""
        return tuple(sorted(self._counts.get(student, {})))

    def teacher_count(self, student: str) -> int:
        return len(self._counts.get(student, {}))

    def student_counts(self, student: str) -> dict[str, int]:
        """Per-teacher course counts for one student."""
        return dict(self._counts.get(student, {}))

    def taught_students(self, teacher: str) -> frozenset[str]:
        return self._teacher_students.get(teacher, frozenset())

    # -- population ---------------------------------------------------

    def students(self) -> tuple[str, ...]:
        return tuple(sorted(self._counts))

    def teachers(self) -> tuple[str, ...]:
        return tuple(sorted(self._teacher_totals))

    def outcome(self, student: str) -> OutcomeRecord | None:
        return self._outcomes.get(student)

    @property
    def outcomes(self) -> Mapping[str, OutcomeRecord]:
        return MappingProxyType(self._outcomes)

    @property
    def courses(self) -> tuple[CourseRecord, ...]:
        return self._courses

    @property
    def n_course_records(self) -> int:
        return len(self._courses)

    def __eq__(self, other) -> bool:
        if not isinstance(other, InteractionStore):
            return NotImplemented
        return (
            self._courses == other._courses
            and self._outcomes == other._outcomes
            and self._counts == other._counts
        )

    def __repr__(self) -> str:
        return (
            f"InteractionStore(students={len(self._counts)}, "
            f"teachers={len(self._teacher_totals)}, courses={len(self._courses)})"
        )

    def without_pairs(self, pairs: Iterable[tuple[str, str]]) -> "InteractionStore":
        """A copy with all courses of the given (student, teacher) pairs removed.

        Outcomes of students left with zero courses are dropped too, so the
        result still satisfies the store invariants. Used to hide held-out
        pairs during evaluation.
        """
        hidden = set(pairs)
        kept = [c for c in self._courses if (c.student, c.teacher) not in hidden]
        kept_students = {c.student for c in kept}
        outcomes = [o for s, o in self._outcomes.items() if s in kept_students]
        return ingest(kept, outcomes)


def ingest(
    course_records: Iterable[CourseRecord],
    outcome_records: Iterable[OutcomeRecord],
) -> InteractionStore:
    """Aggregate raw records into an :class:`InteractionStore`.

    Rejects duplicate (student, teacher, timestamp) triples (log replays
    must be detectable), conflicting outcomes for one student, and outcomes
    for students with no courses.
    """
    courses = sorted(course_records, key=lambda c: (c.student, c.teacher, c.timestamp))
    seen: set[tuple[str, str, datetime]] = set()
    counts: dict[str, dict[str, int]] = {}
    teacher_totals: dict[str, int] = {}
    teacher_students: dict[str, set[str]] = {}
    for c in courses:
        key = (c.student, c.teacher, c.timestamp)
        if key in seen:
            raise IngestError(
                f"duplicate course record (student={c.student}, teacher={c.teacher}, "
                f"timestamp={c.timestamp.isoformat()})"
            )
        seen.add(key)
        counts.setdefault(c.student, {})
        counts[c.student][c.teacher] = counts[c.student].get(c.teacher, 0) + 1
        teacher_totals[c.teacher] = teacher_totals.get(c.teacher, 0) + 1
        teacher_students.setdefault(c.teacher, set()).add(c.student)

    outcomes: dict[str, OutcomeRecord] = {}
    for o in outcome_records:
        if o.student in outcomes:
            prior = outcomes[o.student]
            detail = "conflicting" if prior.outcome is not o.outcome else "duplicate"
            raise IngestError(f"{detail} outcome for student {o.student}")
        if o.student not in counts:
            raise IngestError(f"outcome for student {o.student} who has no courses")
        outcomes[o.student] = o

    return InteractionStore(
        courses=courses,
        outcomes=outcomes,
        counts=counts,
        teacher_totals=teacher_totals,
        teacher_students={t: frozenset(s) for t, s in teacher_students.items()},
    )


# -- CSV input ---------------------------------------------------------

COURSE_COLUMNS = ("student_id", "teacher_id", "timestamp_iso8601", "duration_minutes")
OUTCOME_COLUMNS = ("student_id", "outcome", "decided_at_iso8601")


def _open_reader(path: str):
    return open(path, newline="", encoding="utf-8")


def _require_columns(header: Sequence[str], required: Sequence[str], path: str):
    missing = [c for c in required if c not in header]
    if missing:
        raise IngestError(f"missing required columns {missing}", source=path, line=1)


def load_courses(path: str) -> list[CourseRecord]:
    """Read ``courses.csv``; columns beyond the required four are stats."""
    records: list[CourseRecord] = []
    with _open_reader(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestError("empty file, header row required", source=path, line=1)
        _require_columns(reader.fieldnames, COURSE_COLUMNS, path)
        stat_columns = [c for c in reader.fieldnames if c not in COURSE_COLUMNS]
        for lineno, row in enumerate(reader, start=2):
            try:
                stats = {
                    c: float(row[c])
                    for c in stat_columns
                    if row.get(c) not in (None, "")
                }
                records.append(
                    CourseRecord(
                        student=row["student_id"].strip(),
                        teacher=row["teacher_id"].strip(),
                        timestamp=parse_timestamp(row["timestamp_iso8601"]),
                        duration_minutes=float(row["duration_minutes"]),
                        stats=stats,
                    )
                )
            except (ValueError, KeyError) as exc:
                raise IngestError(f"malformed course row: {exc}", source=path, line=lineno) from exc
    return records


def load_outcomes(path: str) -> list[OutcomeRecord]:
    records: list[OutcomeRecord] = []
    with _open_reader(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestError("empty file, header row required", source=path, line=1)
        _require_columns(reader.fieldnames, OUTCOME_COLUMNS, path)
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(
                    OutcomeRecord(
                        student=row["student_id"].strip(),
                        outcome=Outcome(row["outcome"].strip().lower()),
                        decided_at=parse_timestamp(row["decided_at_iso8601"]),
                    )
                )
            except (ValueError, KeyError) as exc:
                raise IngestError(f"malformed outcome row: {exc}", source=path, line=lineno) from exc
    return records


@dataclass(frozen=True)
class PeopleTable:
    """Demographic rows keyed by id, e.g. from ``students.csv``."""

    id_column: str
    columns: tuple[str, ...]
    rows: Mapping[str, Mapping[str, str]]

    def __post_init__(self):
        object.__setattr__(
            self, "rows", MappingProxyType({k: MappingProxyType(dict(v)) for k, v in self.rows.items()})
        )

    def ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.rows))

    def get(self, entity_id: str) -> Mapping[str, str] | None:
        return self.rows.get(entity_id)

    def __len__(self) -> int:
        return len(self.rows)


def load_people(path: str, id_column: str) -> PeopleTable:
    """Read ``students.csv`` / ``teachers.csv``: an id column plus demographics."""
    with _open_reader(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestError("empty file, header row required", source=path, line=1)
        _require_columns(reader.fieldnames, (id_column,), path)
        rows: dict[str, dict[str, str]] = {}
        for lineno, row in enumerate(reader, start=2):
            entity = row[id_column].strip()
            if not entity:
                raise IngestError("empty id", source=path, line=lineno)
            if entity in rows:
                raise IngestError(f"duplicate id {entity}", source=path, line=lineno)
            rows[entity] = {k: (v or "").strip() for k, v in row.items() if k != id_column}
        columns = tuple(c for c in reader.fieldnames if c != id_column)
    return PeopleTable(id_column=id_column, columns=columns, rows=rows)
