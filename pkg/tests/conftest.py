from datetime import datetime, timezone

import pytest

from teachrec.store import (
    CourseRecord,
    Outcome,
    OutcomeRecord,
    PeopleTable,
    ingest,
)


def ts(day: int, second: int = 0, month: int = 1) -> datetime:
    return datetime(2024, month, day, second=second, tzinfo=timezone.utc)


def course(student, teacher, day, second=0, duration=40.0, stats=None):
    return CourseRecord(
        student=student,
        teacher=teacher,
        timestamp=ts(day, second),
        duration_minutes=duration,
        stats=stats or {},
    )


def completed(student, day=20):
    return OutcomeRecord(student, Outcome.COMPLETED, ts(day))


def dropped(student, day=20):
    return OutcomeRecord(student, Outcome.DROPPED, ts(day))


@pytest.fixture
def tiny_store():
    """s1 completed with {tA:3, tB:1}; s2 dropped after one course with tA;
    s3 has courses but no outcome."""
    courses = [
        course("s1", "tA", 1),
        course("s1", "tA", 2),
        course("s1", "tA", 3),
        course("s1", "tB", 4),
        course("s2", "tA", 5),
        course("s3", "tC", 6),
    ]
    return ingest(courses, [completed("s1"), dropped("s2")])


@pytest.fixture
def people_tables():
    students = PeopleTable(
        id_column="student_id",
        columns=("gender", "grade", "school"),
        rows={
            "s1": {"gender": "F", "grade": "5", "school": "Oak"},
            "s2": {"gender": "M", "grade": "7", "school": "Pine"},
            "s3": {"gender": "F", "grade": "6", "school": "Oak"},
        },
    )
    teachers = PeopleTable(
        id_column="teacher_id",
        columns=("gender", "tenure_months", "school"),
        rows={
            "tA": {"gender": "F", "tenure_months": "24", "school": "North"},
            "tB": {"gender": "M", "tenure_months": "6", "school": "South"},
            "tC": {"gender": "M", "tenure_months": "1", "school": "North"},
        },
    )
    return students, teachers
