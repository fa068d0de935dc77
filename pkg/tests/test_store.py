import random
from datetime import timezone

import pytest

from teachrec.store import (
    CourseRecord,
    IngestError,
    Outcome,
    OutcomeRecord,
    ingest,
    load_courses,
    load_outcomes,
    load_people,
    parse_timestamp,
)

from conftest import completed, course, dropped, ts


class TestRecords:
    def test_rejects_empty_ids(self):
        with pytest.raises(ValueError):
            CourseRecord("", "t", ts(1), 40.0)

    def test_rejects_nonpositive_duration(self):
        with pytest.raises(ValueError, match="duration"):
            course("s", "t", 1, duration=0.0)

    def test_rejects_negative_stats(self):
        with pytest.raises(ValueError, match="non-negative"):
            course("s", "t", 1, stats={"talk": -1.0})

    def test_naive_timestamps_become_utc(self):
        record = CourseRecord("s", "t", ts(1).replace(tzinfo=None), 40.0)
        assert record.timestamp.tzinfo is timezone.utc


class TestIngest:
    def test_counts_aggregate(self, tiny_store):
        assert tiny_store.course_count("s1", "tA") == 3
        assert tiny_store.course_count("s1", "tB") == 1
        assert tiny_store.teacher_count("s1") == 2

    def test_absent_pair_counts_zero(self, tiny_store):
        assert tiny_store.course_count("s1", "tC") == 0
        assert tiny_store.course_count("nobody", "tA") == 0

    def test_teacher_total_sums_students(self):
        store = ingest(
            [course("s1", "tA", d) for d in (1, 2, 3)]
            + [course("s2", "tA", d) for d in (4, 5)],
            [],
        )
        assert store.teacher_total("tA") == 5

    def test_teacher_total_unknown_is_zero(self, tiny_store):
        assert tiny_store.teacher_total("tZ") == 0

    def test_single_pair_total(self):
        store = ingest([course("s1", "tB", 1)], [])
        assert store.teacher_total("tB") == 1

    def test_empty_input_yields_empty_store(self):
        store = ingest([], [])
        assert store.students() == ()
        assert store.teachers() == ()
        assert store.n_course_records == 0

    def test_duplicate_triple_rejected_with_names(self):
        records = [course("s1", "tA", 1), course("s1", "tA", 1)]
        with pytest.raises(IngestError, match=r"duplicate course record.*s1.*tA"):
            ingest(records, [])

    def test_conflicting_outcomes_rejected(self):
        records = [course("s1", "tA", 1)]
        with pytest.raises(IngestError, match="conflicting outcome"):
            ingest(records, [completed("s1"), dropped("s1")])

    def test_duplicate_outcome_rejected(self):
        records = [course("s1", "tA", 1)]
        with pytest.raises(IngestError, match="duplicate outcome"):
            ingest(records, [completed("s1"), completed("s1")])

    def test_outcome_without_courses_rejected(self):
        with pytest.raises(IngestError, match="no courses"):
            ingest([course("s1", "tA", 1)], [completed("s2")])

    def test_order_insensitive(self):
        records = [
            course("s1", "tA", 1),
            course("s1", "tB", 2),
            course("s2", "tA", 3),
            course("s2", "tA", 4),
        ]
        outcomes = [completed("s1"), dropped("s2")]
        reference = ingest(records, outcomes)
        rng = random.Random(7)
        for _ in range(5):
            shuffled = records[:]
            rng.shuffle(shuffled)
            assert ingest(shuffled, outcomes) == reference

    def test_total_courses_conservation(self):
        rng = random.Random(3)
        records = [
            course(f"s{rng.randrange(6)}", f"t{rng.randrange(4)}", 1 + i % 27, second=i)
            for i in range(60)
        ]
        store = ingest(records, [])
        assert sum(store.teacher_total(t) for t in store.teachers()) == len(records)

    def test_teachers_of_sorted(self, tiny_store):
        assert tiny_store.teachers_of("s1") == ("tA", "tB")

    def test_taught_students(self, tiny_store):
        assert tiny_store.taught_students("tA") == frozenset({"s1", "s2"})

    def test_students_without_outcome_retained(self, tiny_store):
        assert "s3" in tiny_store.students()
        assert tiny_store.outcome("s3") is None


class TestWithoutPairs:
    def test_removes_pair_courses(self, tiny_store):
        masked = tiny_store.without_pairs([("s1", "tA")])
        assert masked.course_count("s1", "tA") == 0
        assert masked.course_count("s1", "tB") == 1
        assert masked.teacher_total("tA") == 1  # s2's course remains

    def test_drops_outcome_when_student_empties(self, tiny_store):
        masked = tiny_store.without_pairs([("s2", "tA")])
        assert masked.outcome("s2") is None
        assert "s2" not in masked.students()


class TestParseTimestamp:
    def test_zulu_suffix(self):
        parsed = parse_timestamp("2024-03-01T10:00:00Z")
        assert parsed.tzinfo is timezone.utc and parsed.hour == 10

    def test_offset_normalized_to_utc(self):
        parsed = parse_timestamp("2024-03-01T10:00:00+02:00")
        assert parsed.hour == 8


class TestCsvLoading:
    def test_courses_roundtrip(self, tmp_path):
        path = tmp_path / "courses.csv"
        path.write_text(
            "student_id,teacher_id,timestamp_iso8601,duration_minutes,talk_seconds\n"
            "s1,tA,2024-01-01T10:00:00Z,40,600\n"
            "s1,tA,2024-01-02T10:00:00Z,40,\n"
        )
        records = load_courses(str(path))
        assert len(records) == 2
        assert records[0].stats == {"talk_seconds": 600.0}
        assert records[1].stats == {}

    def test_malformed_row_reports_file_and_line(self, tmp_path):
        path = tmp_path / "courses.csv"
        path.write_text(
            "student_id,teacher_id,timestamp_iso8601,duration_minutes\n"
            "s1,tA,2024-01-01T10:00:00Z,40\n"
            "s2,tB,not-a-date,40\n"
        )
        with pytest.raises(IngestError, match=r"courses\.csv:3"):
            load_courses(str(path))

    def test_missing_columns_rejected(self, tmp_path):
        path = tmp_path / "courses.csv"
        path.write_text("student_id,teacher_id\ns1,tA\n")
        with pytest.raises(IngestError, match="missing required columns"):
            load_courses(str(path))

    def test_outcomes_parse(self, tmp_path):
        path = tmp_path / "outcomes.csv"
        path.write_text(
            "student_id,outcome,decided_at_iso8601\n"
            "s1,completed,2024-02-01T00:00:00Z\n"
            "s2,dropped,2024-02-02T00:00:00Z\n"
        )
        records = load_outcomes(str(path))
        assert [r.outcome for r in records] == [Outcome.COMPLETED, Outcome.DROPPED]

    def test_bad_outcome_value_reports_line(self, tmp_path):
        path = tmp_path / "outcomes.csv"
        path.write_text("student_id,outcome,decided_at_iso8601\ns1,paused,2024-02-01T00:00:00Z\n")
        with pytest.raises(IngestError, match=r"outcomes\.csv:2"):
            load_outcomes(str(path))

    def test_people_table(self, tmp_path):
        path = tmp_path / "students.csv"
        path.write_text("student_id,gender,grade\ns1,F,5\ns2,M,\n")
        table = load_people(str(path), "student_id")
        assert table.ids() == ("s1", "s2")
        assert table.get("s2")["grade"] == ""
        assert table.columns == ("gender", "grade")

    def test_people_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "students.csv"
        path.write_text("student_id,gender\ns1,F\ns1,M\n")
        with pytest.raises(IngestError, match="duplicate id"):
            load_people(str(path), "student_id")

    def test_union_duplicate_triple_caught_at_ingest(self, tmp_path):
        header = "student_id,teacher_id,timestamp_iso8601,duration_minutes\n"
        row = "s1,tA,2024-01-01T10:00:00Z,40\n"
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        a.write_text(header + row)
        b.write_text(header + row)
        records = load_courses(str(a)) + load_courses(str(b))
        with pytest.raises(IngestError, match="duplicate course record"):
            ingest(records, [])
