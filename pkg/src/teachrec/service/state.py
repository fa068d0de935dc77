"""Service state: append-only event log, store snapshots, model hot-swap.

Recommendations always read one consistent snapshot; events posted to the
API only become visible after an explicit refresh rebuilds the snapshot
from the seed CSVs plus the full event log. Model files are loaded
completely before the serving reference is swapped, so a request never
sees a half-loaded model.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone

from ..config import AppConfig
from ..features import FeatureExtractor, FeatureSchema, build_schema, stat_columns_of
from ..gbdt import GbdtModel
from ..labels import build_labels
from ..ranking import RecommendationSlate, diversity, new_teacher_ratio, rank
from ..store import (
    CourseRecord,
    InteractionStore,
    Outcome,
    OutcomeRecord,
    PeopleTable,
    ingest,
    load_courses,
    load_outcomes,
    load_people,
    parse_timestamp,
)

logger = logging.getLogger(__name__)


class ServiceError(Exception):
    def __init__(self, status_code: int, code: str, message: str):
        self.status_code = status_code
        self.code = code
        self.message = message
        super().__init__(message)


@dataclass
class Snapshot:
    store: InteractionStore
    extractor: FeatureExtractor | None
    as_of: datetime


def _snapshot_as_of(store: InteractionStore) -> datetime:
    if store.courses:
        from ..evaluation import eval_as_of

        return eval_as_of(store)
    return datetime(1970, 1, 1, tzinfo=timezone.utc)


class ServiceState:
    """Single-writer mutable state behind the HTTP handlers."""

    def __init__(self, config: AppConfig):
        self.config = config
        self._lock = threading.Lock()
        self._events: list[dict] = []
        self._event_ids: set[str] = set()
        self._seed_courses: list[CourseRecord] = []
        self._seed_outcomes: list[OutcomeRecord] = []
        self.students = PeopleTable(id_column="student_id", columns=(), rows={})
        self.teachers = PeopleTable(id_column="teacher_id", columns=(), rows={})
        self.schema: FeatureSchema | None = None
        self.model: GbdtModel | None = None
        self.model_version: str | None = None
        self.snapshot: Snapshot | None = None
        self.served_slates: list[RecommendationSlate] = []

    # -- startup --------------------------------------------------------

    def load_initial(self) -> None:
        cfg = self.config
        if os.path.exists(cfg.courses_csv):
            self._seed_courses = load_courses(cfg.courses_csv)
        if os.path.exists(cfg.outcomes_csv):
            self._seed_outcomes = load_outcomes(cfg.outcomes_csv)
        if os.path.exists(cfg.students_csv):
            self.students = load_people(cfg.students_csv, "student_id")
        if os.path.exists(cfg.teachers_csv):
            self.teachers = load_people(cfg.teachers_csv, "teacher_id")
        if os.path.exists(cfg.event_log_path):
            with open(cfg.event_log_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    event = json.loads(line)
                    self._events.append(event)
                    self._event_ids.add(event["event_id"])
        self.refresh()

    # -- event log --------------------------------------------------------

    def _event_records(self) -> tuple[list[CourseRecord], list[OutcomeRecord]]:
        courses: list[CourseRecord] = []
        outcomes: list[OutcomeRecord] = []
        for event in self._events:
            data = event["data"]
            if event["kind"] == "course":
                courses.append(
                    CourseRecord(
                        student=data["student_id"],
                        teacher=data["teacher_id"],
                        timestamp=parse_timestamp(data["timestamp_iso8601"]),
                        duration_minutes=data["duration_minutes"],
                        stats=data.get("stats", {}),
                    )
                )
            else:
                outcomes.append(
                    OutcomeRecord(
                        student=data["student_id"],
                        outcome=Outcome(data["outcome"]),
                        decided_at=parse_timestamp(data["decided_at_iso8601"]),
                    )
                )
        return courses, outcomes

    def _known_course_students(self) -> set[str]:
        known = {c.student for c in self._seed_courses}
        known.update(
            e["data"]["student_id"] for e in self._events if e["kind"] == "course"
        )
        return known

    def append_event(self, event_id: str, kind: str, data: dict) -> None:
        """Validate and persist one event; visible after the next refresh."""
        with self._lock:
            if event_id in self._event_ids:
                raise ServiceError(409, "duplicate_event", f"event id {event_id!r} already ingested")
            if kind == "course":
                try:
                    ts = parse_timestamp(data["timestamp_iso8601"])
                except ValueError as exc:
                    raise ServiceError(400, "invalid_timestamp", str(exc)) from exc
                triple = (data["student_id"], data["teacher_id"], ts)
                existing = {(c.student, c.teacher, c.timestamp) for c in self._seed_courses}
                event_courses, _ = self._event_records()
                existing.update((c.student, c.teacher, c.timestamp) for c in event_courses)
                if triple in existing:
                    raise ServiceError(
                        409,
                        "duplicate_course",
                        f"course (student={triple[0]}, teacher={triple[1]}, "
                        f"timestamp={ts.isoformat()}) already logged",
                    )
            elif kind == "outcome":
                try:
                    parse_timestamp(data["decided_at_iso8601"])
                except ValueError as exc:
                    raise ServiceError(400, "invalid_timestamp", str(exc)) from exc
                student = data["student_id"]
                if student not in self._known_course_students():
                    raise ServiceError(
                        400, "unknown_student", f"student {student!r} has no logged courses"
                    )
                decided = {o.student for o in self._seed_outcomes}
                decided.update(
                    e["data"]["student_id"] for e in self._events if e["kind"] == "outcome"
                )
                if student in decided:
                    raise ServiceError(
                        409, "conflicting_outcome", f"student {student!r} already has an outcome"
                    )
            else:
                raise ServiceError(400, "bad_request", f"unknown event kind {kind!r}")

            event = {"event_id": event_id, "kind": kind, "data": data}
            os.makedirs(os.path.dirname(self.config.event_log_path) or ".", exist_ok=True)
            with open(self.config.event_log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event, separators=(",", ":")) + "\n")
            self._events.append(event)
            self._event_ids.add(event_id)

    # -- snapshot / model -------------------------------------------------

    def _build_store(self) -> InteractionStore:
        event_courses, event_outcomes = self._event_records()
        return ingest(
            self._seed_courses + event_courses, self._seed_outcomes + event_outcomes
        )

    def refresh(self) -> dict:
        """Rebuild the snapshot from seeds + events and reload the model file."""
        with self._lock:
            store = self._build_store()
            schema = self._load_schema(store)
            extractor = (
                FeatureExtractor(store, schema, self.students, self.teachers)
                if schema is not None
                else None
            )
            model_reloaded = self._reload_model(schema)
            self.schema = schema
            self.snapshot = Snapshot(
                store=store, extractor=extractor, as_of=_snapshot_as_of(store)
            )
            self.served_slates = []
            return {
                "students": len(store.students()),
                "teachers": len(self._teacher_universe(store)),
                "course_records": store.n_course_records,
                "model_version": self.model_version,
                "model_reloaded": model_reloaded,
            }

    def _load_schema(self, store: InteractionStore) -> FeatureSchema | None:
        if os.path.exists(self.config.schema_path):
            with open(self.config.schema_path, encoding="utf-8") as fh:
                return FeatureSchema.from_json(fh.read())
        if len(self.students) and len(self.teachers):
            return build_schema(
                self.students,
                self.teachers,
                stat_columns_of(store),
                self.config.max_school_vocab,
            )
        return None

    def _reload_model(self, schema: FeatureSchema | None) -> bool:
        path = self.config.model_path
        if not os.path.exists(path):
            return False
        with open(path, "rb") as fh:
            blob = fh.read()
        model = GbdtModel.from_bytes(blob)  # fully parsed before the swap below
        if schema is not None and model.schema_fingerprint != schema.fingerprint:
            logger.warning(
                "model at %s was trained for a different feature schema; not loading", path
            )
            return False
        version = hashlib.sha256(blob).hexdigest()[:12]
        changed = version != self.model_version
        self.model = model
        self.model_version = version
        return changed

    def _teacher_universe(self, store: InteractionStore) -> tuple[str, ...]:
        return tuple(sorted(set(self.teachers.ids()) | set(store.teachers())))

    # -- serving ----------------------------------------------------------

    def recommend(self, student_id: str, k: int | None) -> dict:
        snapshot = self.snapshot
        model = self.model
        if model is None or snapshot is None or snapshot.extractor is None:
            raise ServiceError(
                503,
                "model_not_loaded",
                "no model is loaded yet; train one and call /v1/refresh, then retry",
            )
        k = k or self.config.k
        cold = snapshot.store.teacher_count(student_id) == 0
        if cold and not self.config.cold_start_serving:
            raise ServiceError(
                404, "unknown_student", f"student {student_id!r} has no interaction history"
            )
        universe = self._teacher_universe(snapshot.store)
        if not universe:
            raise ServiceError(503, "no_candidates", "no teachers available to recommend")
        slate = rank(
            student_id,
            universe,
            model,
            snapshot.extractor,
            self.config.boost.to_params(),
            k,
            snapshot.as_of,
        )
        with self._lock:
            if len(slate) > 0:
                self.served_slates.append(slate)
        return {
            "student_id": student_id,
            "generated_at": datetime.now(timezone.utc).isoformat(),
            "model_version": self.model_version or "",
            "cold_student": cold,
            "entries": [
                {
                    "teacher_id": e.teacher,
                    "model_score": e.model_score,
                    "boost": e.boost,
                    "combined_score": e.combined_score,
                }
                for e in slate.entries
            ],
        }

    def metrics(self) -> dict:
        with self._lock:
            window = list(self.served_slates)
        if len(window) < 2:
            raise ServiceError(
                409,
                "insufficient_slates",
                f"need at least 2 served slates for metrics, have {len(window)}",
            )
        return {
            "diversity": diversity(window),
            "new_teacher_ratio": new_teacher_ratio(window),
            "slate_count": len(window),
        }

    def health(self) -> dict:
        store = self.snapshot.store if self.snapshot else None
        return {
            "status": "ok",
            "model_loaded": self.model is not None,
            "students": len(store.students()) if store else 0,
            "teachers": len(self._teacher_universe(store)) if store else 0,
        }

    def current_labels_count(self) -> int:
        if self.snapshot is None:
            return 0
        return len(build_labels(self.snapshot.store))
