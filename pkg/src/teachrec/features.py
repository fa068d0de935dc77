"""Fixed-length feature vectors for (student, teacher) pairs.

Three feature families:

* demographic — gender/school one-hots, student grade, teacher tenure,
  plus "known entity" indicators for ids absent from the tables;
* in-class — per-pair means of the behavioral stat columns carried on
  course records (talk time, sentence counts, ...);
* historical — teacher-side aggregates: total courses (log1p), distinct
  students, dropout rate, and mean positive pseudo score.

All aggregation is as-of aware: ``extract(..., as_of=t)`` reads only
courses with timestamp < t and outcomes decided before t, so training and
serving can share one store without peeking into the future.

The schema is published as a versioned JSON document whose fingerprint is
embedded in trained models, so training and serving agree bit-exactly on
the encoding.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .store import InteractionStore, Outcome, PeopleTable

MISSING = "MISSING"
OTHER = "OTHER"

SCHEMA_FORMAT_VERSION = 1


class FeatureFamily(str, Enum):
    DEMOGRAPHIC = "demographic"
    IN_CLASS = "in_class"
    HISTORICAL = "historical"


@dataclass(frozen=True)
class FeatureField:
    """One schema entry: a numeric column or a one-hot block."""

    name: str
    family: FeatureFamily
    kind: str  # "numeric" | "onehot"
    vocabulary: tuple[str, ...] = ()
    fallback: str | None = None  # out-of-vocabulary bucket, e.g. OTHER

    def __post_init__(self):
        if self.kind not in ("numeric", "onehot"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.kind == "onehot" and not self.vocabulary:
            raise ValueError(f"one-hot field {self.name!r} needs a vocabulary")

    @property
    def width(self) -> int:
        return len(self.vocabulary) if self.kind == "onehot" else 1


@dataclass(frozen=True)
class FeatureSchema:
    fields: tuple[FeatureField, ...]
    version: int = SCHEMA_FORMAT_VERSION

    @property
    def width(self) -> int:
        return sum(f.width for f in self.fields)

    def column_names(self) -> tuple[str, ...]:
        names: list[str] = []
        for f in self.fields:
            if f.kind == "onehot":
                names.extend(f"{f.name}={v}" for v in f.vocabulary)
            else:
                names.append(f.name)
        return tuple(names)

    def slices(self) -> dict[str, slice]:
        out: dict[str, slice] = {}
        offset = 0
        for f in self.fields:
            out[f.name] = slice(offset, offset + f.width)
            offset += f.width
        return out

    def to_json(self) -> str:
        doc = {
            "format": "feature-schema",
            "version": self.version,
            "fields": [
                {
                    "name": f.name,
                    "family": f.family.value,
                    "kind": f.kind,
                    **({"vocabulary": list(f.vocabulary)} if f.kind == "onehot" else {}),
                    **({"fallback": f.fallback} if f.fallback else {}),
                }
                for f in self.fields
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FeatureSchema":
        doc = json.loads(text)
        if doc.get("format") != "feature-schema":
            raise ValueError("not a feature schema document")
        fields = tuple(
            FeatureField(
                name=f["name"],
                family=FeatureFamily(f["family"]),
                kind=f["kind"],
                vocabulary=tuple(f.get("vocabulary", ())),
                fallback=f.get("fallback"),
            )
            for f in doc["fields"]
        )
        return cls(fields=fields, version=doc["version"])

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def _norm(value: str | None) -> str:
    value = (value or "").strip()
    return value if value else MISSING


def _categorical_vocab(table: PeopleTable, column: str) -> tuple[str, ...]:
    return tuple(sorted({_norm(row.get(column)) for row in table.rows.values()}))


def _capped_vocab(table: PeopleTable, column: str, cap: int) -> tuple[str, ...]:
    """Keep the ``cap`` most frequent values, bucket the rest into OTHER."""
    freq: dict[str, int] = {}
    for row in table.rows.values():
        v = _norm(row.get(column))
        freq[v] = freq.get(v, 0) + 1
    ranked = sorted(freq, key=lambda v: (-freq[v], v))
    kept = set(ranked[:cap])
    vocab = set(kept) | {OTHER}
    if MISSING in freq:
        vocab.add(MISSING)
    return tuple(sorted(vocab))


def stat_columns_of(store: InteractionStore) -> tuple[str, ...]:
    """Behavioral stat names observed on any course record, sorted."""
    names: set[str] = set()
    for c in store.courses:
        names.update(c.stats)
    return tuple(sorted(names))


def build_schema(
    students: PeopleTable,
    teachers: PeopleTable,
    stat_columns: Sequence[str] = (),
    max_school_vocab: int = 50,
) -> FeatureSchema:
    """Derive a deterministic schema from the demographic tables.

    Vocabularies are built from observed values (missing entries become a
    dedicated MISSING category, so missingness stays learnable); school
    vocabularies are capped with rare values bucketed into OTHER.
    """
    if len(students) == 0 or len(teachers) == 0:
        raise ValueError("students and teachers tables must be non-empty")

    fields: list[FeatureField] = [
        FeatureField("student_known", FeatureFamily.DEMOGRAPHIC, "numeric")
    ]
    if "gender" in students.columns:
        fields.append(
            FeatureField(
                "student_gender",
                FeatureFamily.DEMOGRAPHIC,
                "onehot",
                _categorical_vocab(students, "gender"),
            )
        )
    if "grade" in students.columns:
        fields.append(FeatureField("student_grade", FeatureFamily.DEMOGRAPHIC, "numeric"))
    if "school" in students.columns:
        fields.append(
            FeatureField(
                "student_school",
                FeatureFamily.DEMOGRAPHIC,
                "onehot",
                _capped_vocab(students, "school", max_school_vocab),
                fallback=OTHER,
            )
        )
    fields.append(FeatureField("teacher_known", FeatureFamily.DEMOGRAPHIC, "numeric"))
    if "gender" in teachers.columns:
        fields.append(
            FeatureField(
                "teacher_gender",
                FeatureFamily.DEMOGRAPHIC,
                "onehot",
                _categorical_vocab(teachers, "gender"),
            )
        )
    if "tenure_months" in teachers.columns:
        fields.append(FeatureField("teacher_tenure_months", FeatureFamily.DEMOGRAPHIC, "numeric"))
    if "school" in teachers.columns:
        fields.append(
            FeatureField(
                "teacher_school",
                FeatureFamily.DEMOGRAPHIC,
                "onehot",
                _capped_vocab(teachers, "school", max_school_vocab),
                fallback=OTHER,
            )
        )

    for stat in sorted(stat_columns):
        fields.append(FeatureField(f"pair_mean_{stat}", FeatureFamily.IN_CLASS, "numeric"))

    fields.extend(
        [
            FeatureField("teacher_courses_log1p", FeatureFamily.HISTORICAL, "numeric"),
            FeatureField("teacher_distinct_students", FeatureFamily.HISTORICAL, "numeric"),
            FeatureField("teacher_has_outcome_history", FeatureFamily.HISTORICAL, "numeric"),
            FeatureField("teacher_dropout_rate", FeatureFamily.HISTORICAL, "numeric"),
            FeatureField("teacher_mean_positive_score", FeatureFamily.HISTORICAL, "numeric"),
        ]
    )
    return FeatureSchema(fields=tuple(fields))


class _HistoryView:
    """Aggregates over courses/outcomes strictly before one as-of instant."""

    def __init__(self, store: InteractionStore, as_of: datetime):
        counts: dict[str, dict[str, int]] = {}
        stat_sums: dict[tuple[str, str], dict[str, list[float]]] = {}
        totals: dict[str, int] = {}
        distinct: dict[str, set[str]] = {}
        for c in store.courses:
            if c.timestamp >= as_of:
                continue
            counts.setdefault(c.student, {})
            counts[c.student][c.teacher] = counts[c.student].get(c.teacher, 0) + 1
            totals[c.teacher] = totals.get(c.teacher, 0) + 1
            distinct.setdefault(c.teacher, set()).add(c.student)
            if c.stats:
                acc = stat_sums.setdefault((c.student, c.teacher), {})
                for name, value in c.stats.items():
                    cell = acc.setdefault(name, [0.0, 0])
                    cell[0] += value
                    cell[1] += 1

        completed: dict[str, int] = {}
        dropped: dict[str, int] = {}
        pos_sum: dict[str, float] = {}
        pos_n: dict[str, int] = {}
        for student, outcome in store.outcomes.items():
            if outcome.decided_at >= as_of or student not in counts:
                continue
            total = sum(counts[student].values())
            for teacher, count in counts[student].items():
                if outcome.outcome is Outcome.COMPLETED:
                    completed[teacher] = completed.get(teacher, 0) + 1
                    pos_sum[teacher] = pos_sum.get(teacher, 0.0) + count / total
                    pos_n[teacher] = pos_n.get(teacher, 0) + 1
                else:
                    dropped[teacher] = dropped.get(teacher, 0) + 1

        self.pair_counts = counts
        self.pair_stats = stat_sums
        self.teacher_totals = totals
        self.teacher_distinct = {t: len(s) for t, s in distinct.items()}
        self.teacher_completed = completed
        self.teacher_dropped = dropped
        self.teacher_pos_sum = pos_sum
        self.teacher_pos_n = pos_n

    def pair_stat_mean(self, student: str, teacher: str, stat: str) -> float:
        acc = self.pair_stats.get((student, teacher))
        if not acc or stat not in acc:
            return 0.0
        total, n = acc[stat]
        return total / n


class FeatureExtractor:
    """Encodes (student, teacher, as_of) triples against a fixed schema.

    Read-only over the store and tables; per-as_of aggregate views and
    per-entity sub-vectors are cached, so batch candidate scoring stays
    cheap.
    """

    def __init__(
        self,
        store: InteractionStore,
        schema: FeatureSchema,
        students: PeopleTable,
        teachers: PeopleTable,
    ):
        self.store = store
        self.schema = schema
        self.students = students
        self.teachers = teachers
        self._slices = schema.slices()
        self._fields = {f.name: f for f in schema.fields}
        self._stat_fields = [
            f.name for f in schema.fields if f.family is FeatureFamily.IN_CLASS
        ]
        self._views: dict[datetime, _HistoryView] = {}
        self._student_rows: dict[str, np.ndarray] = {}
        self._teacher_demo_rows: dict[str, np.ndarray] = {}
        self._teacher_hist_rows: dict[tuple[datetime, str], np.ndarray] = {}

    # -- encoding helpers ----------------------------------------------

    def _view(self, as_of: datetime) -> _HistoryView:
        view = self._views.get(as_of)
        if view is None:
            view = _HistoryView(self.store, as_of)
            self._views[as_of] = view
        return view

    @staticmethod
    def _onehot(fld: FeatureField, value: str) -> np.ndarray:
        out = np.zeros(fld.width)
        if value in fld.vocabulary:
            out[fld.vocabulary.index(value)] = 1.0
        elif fld.fallback is not None and fld.fallback in fld.vocabulary:
            out[fld.vocabulary.index(fld.fallback)] = 1.0
        return out

    @staticmethod
    def _numeric(raw: str | None) -> float:
        try:
            value = float(raw) if raw not in (None, "") else 0.0
        except ValueError:
            value = 0.0
        return value if math.isfinite(value) else 0.0

    def _demo_block(self, row: Mapping[str, str] | None, prefix: str) -> dict[str, np.ndarray]:
        """Values for all ``prefix``-side demographic fields; zeros if unknown."""
        out: dict[str, np.ndarray] = {}
        known = self._fields.get(f"{prefix}_known")
        if known is not None:
            out[known.name] = np.array([0.0 if row is None else 1.0])
        for name, fld in self._fields.items():
            if fld.family is not FeatureFamily.DEMOGRAPHIC or not name.startswith(f"{prefix}_"):
                continue
            if name == f"{prefix}_known":
                continue
            column = name[len(prefix) + 1 :]
            if fld.kind == "onehot":
                if row is None:
                    out[name] = np.zeros(fld.width)
                else:
                    out[name] = self._onehot(fld, _norm(row.get(column)))
            else:
                out[name] = np.array([0.0 if row is None else self._numeric(row.get(column))])
        return out

    def _student_row(self, student: str) -> np.ndarray:
        cached = self._student_rows.get(student)
        if cached is not None:
            return cached
        blocks = self._demo_block(self.students.get(student), "student")
        row = np.zeros(self.schema.width)
        for name, values in blocks.items():
            row[self._slices[name]] = values
        self._student_rows[student] = row
        return row

    def _teacher_demo_row(self, teacher: str) -> np.ndarray:
        cached = self._teacher_demo_rows.get(teacher)
        if cached is not None:
            return cached
        blocks = self._demo_block(self.teachers.get(teacher), "teacher")
        row = np.zeros(self.schema.width)
        for name, values in blocks.items():
            row[self._slices[name]] = values
        self._teacher_demo_rows[teacher] = row
        return row

    def _teacher_hist_row(self, teacher: str, as_of: datetime) -> np.ndarray:
        key = (as_of, teacher)
        cached = self._teacher_hist_rows.get(key)
        if cached is not None:
            return cached
        view = self._view(as_of)
        total = view.teacher_totals.get(teacher, 0)
        finished = view.teacher_completed.get(teacher, 0) + view.teacher_dropped.get(teacher, 0)
        values = {
            "teacher_courses_log1p": math.log1p(total),
            "teacher_distinct_students": float(view.teacher_distinct.get(teacher, 0)),
            "teacher_has_outcome_history": 1.0 if finished > 0 else 0.0,
            "teacher_dropout_rate": (
                view.teacher_dropped.get(teacher, 0) / finished if finished > 0 else 0.0
            ),
            "teacher_mean_positive_score": (
                view.teacher_pos_sum.get(teacher, 0.0) / view.teacher_pos_n[teacher]
                if view.teacher_pos_n.get(teacher, 0) > 0
                else 0.0
            ),
        }
        row = np.zeros(self.schema.width)
        for name, value in values.items():
            row[self._slices[name]] = value
        self._teacher_hist_rows[key] = row
        return row

    # -- public API -----------------------------------------------------

    def extract(self, student: str, teacher: str, as_of: datetime) -> np.ndarray:
        """Feature vector for one pair; length equals the schema width."""
        return self.extract_candidates(student, [teacher], as_of)[0]

    def extract_candidates(
        self, student: str, teachers: Sequence[str], as_of: datetime
    ) -> np.ndarray:
        """Feature matrix for one student against many candidate teachers."""
        view = self._view(as_of)
        out = np.tile(self._student_row(student), (len(teachers), 1))
        for i, teacher in enumerate(teachers):
            out[i] += self._teacher_demo_row(teacher)
            out[i] += self._teacher_hist_row(teacher, as_of)
            for stat_name in self._stat_fields:
                mean = view.pair_stat_mean(student, teacher, stat_name[len("pair_mean_") :])
                if mean:
                    out[i, self._slices[stat_name]] = mean
        if not np.isfinite(out).all():
            raise ValueError("feature vector contains NaN or Inf")
        return out

    def extract_pairs(
        self, pairs: Iterable[tuple[str, str]], as_of: datetime
    ) -> np.ndarray:
        """Feature matrix for explicit (student, teacher) pairs, row per pair."""
        pairs = list(pairs)
        out = np.zeros((len(pairs), self.schema.width))
        for i, (student, teacher) in enumerate(pairs):
            out[i] = self.extract_candidates(student, [teacher], as_of)[0]
        return out
