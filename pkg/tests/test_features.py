import numpy as np
import pytest

from teachrec.features import (
    MISSING,
    OTHER,
    FeatureExtractor,
    FeatureFamily,
    FeatureSchema,
    build_schema,
    stat_columns_of,
)
from teachrec.store import PeopleTable, ingest

from conftest import completed, course, dropped, ts


def schema_for(people_tables, stats=()):
    students, teachers = people_tables
    return build_schema(students, teachers, stats)


class TestBuildSchema:
    def test_gender_vocabulary_two_columns(self, people_tables):
        schema = schema_for(people_tables)
        field = next(f for f in schema.fields if f.name == "student_gender")
        assert field.vocabulary == ("F", "M")
        assert field.width == 2

    def test_missing_value_gets_dedicated_category(self):
        students = PeopleTable(
            "student_id", ("gender",), {"s1": {"gender": "F"}, "s2": {"gender": ""}}
        )
        teachers = PeopleTable("teacher_id", ("gender",), {"t1": {"gender": "M"}})
        schema = build_schema(students, teachers)
        field = next(f for f in schema.fields if f.name == "student_gender")
        assert MISSING in field.vocabulary

    def test_no_stat_columns_means_no_inclass_block(self, people_tables):
        schema = schema_for(people_tables)
        assert not [f for f in schema.fields if f.family is FeatureFamily.IN_CLASS]
        with_stats = schema_for(people_tables, ("talk",))
        assert [f.name for f in with_stats.fields if f.family is FeatureFamily.IN_CLASS] == [
            "pair_mean_talk"
        ]

    def test_deterministic(self, people_tables):
        a = schema_for(people_tables, ("b_stat", "a_stat"))
        b = schema_for(people_tables, ("a_stat", "b_stat"))
        assert a.to_json() == b.to_json()
        assert a.fingerprint == b.fingerprint

    def test_school_vocabulary_capped_to_other(self):
        rows = {f"s{i}": {"school": f"School{i}"} for i in range(30)}
        rows["s_popular1"] = {"school": "Big"}
        rows["s_popular2"] = {"school": "Big"}
        students = PeopleTable("student_id", ("school",), rows)
        teachers = PeopleTable("teacher_id", ("gender",), {"t": {"gender": "F"}})
        schema = build_schema(students, teachers, max_school_vocab=3)
        field = next(f for f in schema.fields if f.name == "student_school")
        assert OTHER in field.vocabulary
        assert "Big" in field.vocabulary
        assert len(field.vocabulary) == 4  # 3 kept + OTHER

    def test_empty_tables_rejected(self, people_tables):
        students, teachers = people_tables
        empty = PeopleTable("student_id", (), {})
        with pytest.raises(ValueError):
            build_schema(empty, teachers)

    def test_json_roundtrip(self, people_tables):
        schema = schema_for(people_tables, ("talk",))
        again = FeatureSchema.from_json(schema.to_json())
        assert again == schema
        assert again.fingerprint == schema.fingerprint

    def test_width_is_sum_of_field_widths(self, people_tables):
        schema = schema_for(people_tables, ("talk",))
        assert schema.width == sum(f.width for f in schema.fields)
        assert len(schema.column_names()) == schema.width


class TestExtract:
    def test_vector_length_matches_schema(self, tiny_store, people_tables):
        schema = schema_for(people_tables)
        extractor = FeatureExtractor(tiny_store, schema, *people_tables)
        vec = extractor.extract("s1", "tA", ts(27))
        assert vec.shape == (schema.width,)
        assert np.isfinite(vec).all()

    def test_demographics_encoded(self, tiny_store, people_tables):
        schema = schema_for(people_tables)
        extractor = FeatureExtractor(tiny_store, schema, *people_tables)
        vec = extractor.extract("s1", "tA", ts(27))
        cols = dict(zip(schema.column_names(), vec))
        assert cols["student_known"] == 1.0
        assert cols["student_gender=F"] == 1.0
        assert cols["student_gender=M"] == 0.0
        assert cols["student_grade"] == 5.0
        assert cols["teacher_tenure_months"] == 24.0

    def test_unknown_entities_zeroed_with_indicator(self, tiny_store, people_tables):
        schema = schema_for(people_tables)
        extractor = FeatureExtractor(tiny_store, schema, *people_tables)
        vec = extractor.extract("ghost", "phantom", ts(27))
        cols = dict(zip(schema.column_names(), vec))
        assert cols["student_known"] == 0.0
        assert cols["teacher_known"] == 0.0
        assert cols["student_gender=F"] == 0.0 and cols["student_gender=M"] == 0.0

    def test_brand_new_teacher_has_zero_history(self, tiny_store, people_tables):
        schema = schema_for(people_tables)
        extractor = FeatureExtractor(tiny_store, schema, *people_tables)
        vec = extractor.extract("s1", "tZ", ts(27))
        cols = dict(zip(schema.column_names(), vec))
        assert cols["teacher_courses_log1p"] == 0.0
        assert cols["teacher_dropout_rate"] == 0.0
        assert cols["teacher_has_outcome_history"] == 0.0

    def test_dropout_rate_ratio(self, people_tables):
        records = []
        second = 0
        for i in range(10):
            second += 1
            records.append(course(f"x{i}", "tA", 1, second=second))
        outcomes = [dropped(f"x{i}", day=5) for i in range(4)] + [
            completed(f"x{i}", day=5) for i in range(4, 10)
        ]
        store = ingest(records, outcomes)
        schema = schema_for(people_tables)
        extractor = FeatureExtractor(store, schema, *people_tables)
        cols = dict(zip(schema.column_names(), extractor.extract("x0", "tA", ts(20))))
        assert cols["teacher_dropout_rate"] == pytest.approx(0.4)
        assert cols["teacher_has_outcome_history"] == 1.0
        assert cols["teacher_distinct_students"] == 10.0
        assert cols["teacher_courses_log1p"] == pytest.approx(np.log1p(10))

    def test_pair_stat_mean(self, people_tables):
        records = [
            course("s1", "tA", 1, stats={"talk": 600.0}),
            course("s1", "tA", 2, stats={"talk": 1200.0}),
        ]
        store = ingest(records, [])
        schema = schema_for(people_tables, stat_columns_of(store))
        extractor = FeatureExtractor(store, schema, *people_tables)
        cols = dict(zip(schema.column_names(), extractor.extract("s1", "tA", ts(20))))
        assert cols["pair_mean_talk"] == pytest.approx(900.0)

    def test_temporal_hygiene_ignores_future_records(self, people_tables):
        past = [course("s1", "tA", 1, stats={"talk": 100.0})]
        store_past = ingest(past, [])
        future = past + [
            course("s1", "tA", 15, stats={"talk": 9000.0}),
            course("s9", "tA", 16),
        ]
        store_future = ingest(future, [])
        schema = schema_for(people_tables, ("talk",))
        as_of = ts(10)
        vec_a = FeatureExtractor(store_past, schema, *people_tables).extract("s1", "tA", as_of)
        vec_b = FeatureExtractor(store_future, schema, *people_tables).extract("s1", "tA", as_of)
        assert np.array_equal(vec_a, vec_b)

    def test_outcomes_after_as_of_ignored(self, people_tables):
        records = [course("s1", "tA", 1)]
        with_outcome = ingest(records, [dropped("s1", day=20)])
        schema = schema_for(people_tables)
        extractor = FeatureExtractor(with_outcome, schema, *people_tables)
        cols = dict(zip(schema.column_names(), extractor.extract("s2", "tA", ts(10))))
        assert cols["teacher_has_outcome_history"] == 0.0

    def test_mean_positive_score_feature(self, people_tables):
        # completed student split 3:1 across tA and tB -> tA mean positive 0.75
        records = [
            course("s1", "tA", 1),
            course("s1", "tA", 2),
            course("s1", "tA", 3),
            course("s1", "tB", 4),
        ]
        store = ingest(records, [completed("s1", day=6)])
        schema = schema_for(people_tables)
        extractor = FeatureExtractor(store, schema, *people_tables)
        cols = dict(zip(schema.column_names(), extractor.extract("s2", "tA", ts(10))))
        assert cols["teacher_mean_positive_score"] == pytest.approx(0.75)

    def test_determinism(self, tiny_store, people_tables):
        schema = schema_for(people_tables)
        a = FeatureExtractor(tiny_store, schema, *people_tables).extract("s1", "tA", ts(27))
        b = FeatureExtractor(tiny_store, schema, *people_tables).extract("s1", "tA", ts(27))
        assert np.array_equal(a, b)

    def test_out_of_vocabulary_school_buckets_to_other(self, tiny_store):
        students = PeopleTable(
            "student_id",
            ("school",),
            {"s1": {"school": "Oak"}, "s2": {"school": "Oak"}, "sX": {"school": "Elm"}},
        )
        teachers = PeopleTable("teacher_id", ("gender",), {"tA": {"gender": "F"}})
        schema = build_schema(students, teachers, max_school_vocab=1)
        extractor = FeatureExtractor(tiny_store, schema, students, teachers)
        cols = dict(zip(schema.column_names(), extractor.extract("sX", "tA", ts(20))))
        assert cols[f"student_school={OTHER}"] == 1.0

    def test_out_of_vocabulary_gender_encodes_all_zero(self, tiny_store, people_tables):
        students = PeopleTable("student_id", ("gender",), {"s1": {"gender": "F"}})
        teachers = PeopleTable("teacher_id", ("gender",), {"tA": {"gender": "M"}})
        schema = build_schema(students, teachers)
        patched = PeopleTable("student_id", ("gender",), {"s1": {"gender": "X"}})
        extractor = FeatureExtractor(tiny_store, schema, patched, teachers)
        cols = dict(zip(schema.column_names(), extractor.extract("s1", "tA", ts(20))))
        assert cols["student_gender=F"] == 0.0

    def test_candidates_match_single_extraction(self, tiny_store, people_tables):
        schema = schema_for(people_tables)
        extractor = FeatureExtractor(tiny_store, schema, *people_tables)
        batch = extractor.extract_candidates("s1", ["tA", "tB", "tC"], ts(27))
        for i, teacher in enumerate(["tA", "tB", "tC"]):
            assert np.array_equal(batch[i], extractor.extract("s1", teacher, ts(27)))
