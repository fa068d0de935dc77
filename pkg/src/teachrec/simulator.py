"""Synthetic two-sided marketplace for matching students with teachers.

The world plants a latent affinity between every student and teacher:
a sigmoid of a scaled dot product of latent vectors, whose leading
components encode observable signal (teacher quality, reflected in the
tenure demographic, and grade compatibility, reflected in the teacher's
school label). During an episode each unmatched student is paired by a
policy, takes one course block per round, and after each block drops the
teacher with probability decreasing in affinity. Matching attempts are
counted until the student accumulates enough blocks to complete (or the
horizon runs out). Episodes log ordinary course and outcome records, so a
learned ranking policy can retrain on its own marketplace history.

The same machinery doubles as the synthetic offline dataset generator:
one long episode with a softmax-over-affinity browsing policy produces
demographic tables plus course/outcome logs of realistic shape.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .features import FeatureExtractor
from .gbdt import GbdtModel
from .ranking import BoostParams, novelty_boost
from .store import CourseRecord, Outcome, OutcomeRecord, PeopleTable


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    n_students: int = 300
    n_teachers: int = 120
    latent_dim: int = 8
    dropout_steepness: float = 8.0
    teacher_capacity: int = 8
    fraction_new_teachers: float = 0.15
    rng_seed: int = 0
    affinity_scale: float = 3.0
    quality_weight: float = 1.5
    grade_weight: float = 0.6
    taste_weight: float = 0.3
    quality_center: float = 0.72  # > mean quality, so mediocre matches skew low

    def __post_init__(self):
        if self.n_students < 1 or self.n_teachers < 1:
            raise ValueError("n_students and n_teachers must be >= 1")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if not self.dropout_steepness > 0:
            raise ValueError("dropout_steepness must be positive")
        if self.teacher_capacity < 1:
            raise ValueError("teacher_capacity must be >= 1")
        if not 0.0 <= self.fraction_new_teachers < 1.0:
            raise ValueError("fraction_new_teachers must be in [0, 1)")


def latent_affinity(
    student_vectors: np.ndarray, teacher_vectors: np.ndarray, scale: float
) -> np.ndarray:
    """sigmoid(scale * U V^T); zero vectors give 0.5 everywhere."""
    logits = scale * (student_vectors @ teacher_vectors.T)
    return 1.0 / (1.0 + np.exp(-logits))


@dataclass
class World:
    config: WorldConfig
    student_ids: tuple[str, ...]
    teacher_ids: tuple[str, ...]
    student_latent: np.ndarray
    teacher_latent: np.ndarray
    affinity: np.ndarray  # students x teachers
    teacher_quality: np.ndarray
    new_teacher_mask: np.ndarray  # True for teachers outside the historical log
    initial_teacher_courses: np.ndarray  # platform-lifetime totals before episode start
    students_table: PeopleTable
    teachers_table: PeopleTable

    def drop_probability(self, affinity_value: float) -> float:
        return 1.0 / (1.0 + math.exp(self.config.dropout_steepness * (affinity_value - 0.5)))

    def course_stats(self, s_idx: int, t_idx: int, rng: np.random.Generator) -> dict[str, float]:
        a = self.affinity[s_idx, t_idx]
        return {
            "teacher_talk_seconds": max(0.0, 600 + 500 * (a - 0.5) + rng.normal(0, 40)),
            "student_talk_seconds": max(0.0, 450 + 350 * (a - 0.5) + rng.normal(0, 40)),
            "teacher_sentences": max(0.0, 80 + 40 * (a - 0.5) + rng.normal(0, 8)),
            "student_sentences": max(0.0, 60 + 30 * (a - 0.5) + rng.normal(0, 8)),
        }


def generate_world(config: WorldConfig) -> World:
    """Build a deterministic world from the config seed."""
    rng = np.random.default_rng(config.rng_seed)
    n_s, n_t, dim = config.n_students, config.n_teachers, config.latent_dim

    quality = rng.uniform(0.0, 1.0, size=n_t)
    grades = rng.integers(1, 13, size=n_s)
    focus = rng.integers(1, 13, size=n_t)

    U = np.zeros((n_s, dim))
    V = np.zeros((n_t, dim))
    U[:, 0] = config.quality_weight
    V[:, 0] = quality - config.quality_center
    if dim >= 3:
        angle_s = math.pi * grades / 12.0
        angle_t = math.pi * focus / 12.0
        U[:, 1] = config.grade_weight * np.cos(angle_s)
        U[:, 2] = config.grade_weight * np.sin(angle_s)
        V[:, 1] = config.grade_weight * np.cos(angle_t)
        V[:, 2] = config.grade_weight * np.sin(angle_t)
    if dim > 3:
        rest = dim - 3
        U[:, 3:] = rng.normal(0.0, config.taste_weight / math.sqrt(rest), size=(n_s, rest))
        V[:, 3:] = rng.normal(0.0, 1.0, size=(n_t, rest))

    affinity = latent_affinity(U, V, config.affinity_scale)

    new_mask = np.zeros(n_t, dtype=bool)
    n_new = int(round(config.fraction_new_teachers * n_t))
    if n_new:
        new_mask[rng.choice(n_t, size=n_new, replace=False)] = True

    tenure = np.clip(np.round(quality * 120 + rng.normal(0, 8, size=n_t)), 1, 240)
    tenure[new_mask] = rng.integers(0, 3, size=new_mask.sum())
    initial_courses = np.round(tenure * 4).astype(np.int64)
    initial_courses[new_mask] = 0
    genders_s = rng.choice(["F", "M"], size=n_s)
    genders_t = rng.choice(["F", "M"], size=n_t)
    school_s = rng.integers(1, 11, size=n_s)

    student_ids = tuple(f"S{i:05d}" for i in range(n_s))
    teacher_ids = tuple(f"T{j:05d}" for j in range(n_t))
    students_table = PeopleTable(
        id_column="student_id",
        columns=("gender", "grade", "school"),
        rows={
            student_ids[i]: {
                "gender": genders_s[i],
                "grade": str(int(grades[i])),
                "school": f"SS{int(school_s[i]):02d}",
            }
            for i in range(n_s)
        },
    )
    teachers_table = PeopleTable(
        id_column="teacher_id",
        columns=("gender", "tenure_months", "school"),
        rows={
            teacher_ids[j]: {
                "gender": genders_t[j],
                "tenure_months": str(int(tenure[j])),
                "school": f"TS{int(focus[j]):02d}",
            }
            for j in range(n_t)
        },
    )
    return World(
        config=config,
        student_ids=student_ids,
        teacher_ids=teacher_ids,
        student_latent=U,
        teacher_latent=V,
        affinity=affinity,
        teacher_quality=quality,
        new_teacher_mask=new_mask,
        initial_teacher_courses=initial_courses,
        students_table=students_table,
        teachers_table=teachers_table,
    )


# -- policies ------------------------------------------------------------


@dataclass
class EpisodeContext:
    """What a policy may observe when choosing a teacher."""

    world: World
    teacher_courses: np.ndarray  # live per-teacher course totals
    rng: np.random.Generator


class Policy(Protocol):
    name: str

    def begin_episode(self, world: World, rng: np.random.Generator) -> None: ...

    def select(self, student_idx: int, available: np.ndarray, ctx: EpisodeContext) -> int: ...


class RandomPolicy:
    """Uniform choice among available teachers."""

    name = "random"

    def begin_episode(self, world, rng):
        pass

    def select(self, student_idx, available, ctx):
        return int(available[ctx.rng.integers(len(available))])


class OraclePolicy:
    """Argmax of true affinity; an upper reference, not learnable."""

    name = "oracle"

    def begin_episode(self, world, rng):
        pass

    def select(self, student_idx, available, ctx):
        return int(available[np.argmax(ctx.world.affinity[student_idx, available])])


class RankerPolicy:
    """Greedy argmax of a trained scoring model, optionally novelty-boosted.

    Model scores per student are computed once per episode (features come
    from the fixed training-time store); the boost tracks live course
    totals so it decays as new teachers pick up students.
    """

    def __init__(
        self,
        model: GbdtModel,
        extractor: FeatureExtractor,
        as_of: datetime,
        boost: BoostParams | None = None,
        name: str | None = None,
    ):
        self.model = model
        self.extractor = extractor
        self.as_of = as_of
        self.boost = boost
        self.name = name or ("ranker+boost" if boost else "ranker")
        self._scores: dict[int, np.ndarray] = {}

    def begin_episode(self, world, rng):
        pass  # scores depend only on the fixed store; keep the cache

    def _student_scores(self, student_idx: int, world: World) -> np.ndarray:
        cached = self._scores.get(student_idx)
        if cached is None:
            X = self.extractor.extract_candidates(
                world.student_ids[student_idx], world.teacher_ids, self.as_of
            )
            cached = self.model.predict_batch(
                X, schema_fingerprint=self.extractor.schema.fingerprint
            )
            self._scores[student_idx] = cached
        return cached

    def select(self, student_idx, available, ctx):
        scores = self._student_scores(student_idx, ctx.world)[available].copy()
        if self.boost is not None:
            scores += np.array(
                [novelty_boost(int(ctx.teacher_courses[t]), self.boost) for t in available]
            )
        return int(available[np.argmax(scores)])


class AffinitySamplingPolicy:
    """Softmax-over-affinity browsing within a random candidate subset.

    Mimics organic marketplace behavior for dataset generation: students
    mostly pick well-matched teachers but not always the best one.
    ``exclude_mask`` keeps designated teachers (e.g. not-yet-joined ones)
    out of the log entirely.
    """

    name = "affinity-sampling"

    def __init__(
        self,
        subset_size: int = 25,
        temperature: float = 0.08,
        exclude_mask: np.ndarray | None = None,
    ):
        if subset_size < 1:
            raise ValueError("subset_size must be >= 1")
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        self.subset_size = subset_size
        self.temperature = temperature
        self.exclude_mask = exclude_mask

    def begin_episode(self, world, rng):
        pass

    def select(self, student_idx, available, ctx):
        pool = available
        if self.exclude_mask is not None:
            kept = pool[~self.exclude_mask[pool]]
            if len(kept):
                pool = kept
        if len(pool) > self.subset_size:
            pool = ctx.rng.choice(pool, size=self.subset_size, replace=False)
        logits = ctx.world.affinity[student_idx, pool] / self.temperature
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        return int(ctx.rng.choice(pool, p=probs))


# -- episodes ------------------------------------------------------------

LOG_EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)


@dataclass
class EpisodeStats:
    attempts: np.ndarray
    completed: np.ndarray
    courses: list[CourseRecord]
    outcomes: list[OutcomeRecord]
    assignments: list[tuple[int, int, int]]  # (student, teacher, courses-so-far)

    @property
    def mean_matching_attempts(self) -> float:
        matched = self.attempts[self.attempts > 0]
        if len(matched) == 0:
            raise SimulationError("no student was ever matched")
        return float(matched.mean())

    @property
    def completion_rate(self) -> float:
        return float(self.completed.mean())

    def new_assignment_rate(self, delta: int) -> float:
        """Fraction of pairing events that went to a teacher with < delta courses."""
        if not self.assignments:
            raise SimulationError("no assignments recorded")
        return float(np.mean([z < delta for _, _, z in self.assignments]))


def run_episode(
    world: World,
    policy: Policy,
    horizon: int,
    blocks_to_complete: int = 4,
    rng_seed: int = 0,
    initial_teacher_courses: np.ndarray | None = None,
    quit_probability: float = 0.0,
    log_start: datetime = LOG_EPOCH,
    trace: Callable[[dict], None] | None = None,
) -> EpisodeStats:
    """Run one marketplace episode and log its courses/outcomes.

    Per round: unmatched students get paired by the policy (capacity
    respected, previously dropped teachers excluded), then every matched
    student takes one course block and either completes, keeps the teacher,
    or drops and re-enters the matching queue next round. After dropping a
    teacher the student abandons the class entirely with
    ``quit_probability``, which is how dropout outcomes enter the log.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if blocks_to_complete < 1:
        raise ValueError("blocks_to_complete must be >= 1")
    if not 0.0 <= quit_probability <= 1.0:
        raise ValueError("quit_probability must be in [0, 1]")
    n_s, n_t = world.affinity.shape
    rng = np.random.default_rng(rng_seed)
    policy.begin_episode(world, rng)

    teacher_courses = (
        initial_teacher_courses.astype(np.int64).copy()
        if initial_teacher_courses is not None
        else np.zeros(n_t, dtype=np.int64)
    )
    ctx = EpisodeContext(world=world, teacher_courses=teacher_courses, rng=rng)

    load = np.zeros(n_t, dtype=np.int64)
    current = np.full(n_s, -1, dtype=np.int64)
    blocks = np.zeros(n_s, dtype=np.int64)
    attempts = np.zeros(n_s, dtype=np.int64)
    completed = np.zeros(n_s, dtype=bool)
    quit_class = np.zeros(n_s, dtype=bool)
    dropped = np.zeros((n_s, n_t), dtype=bool)
    courses: list[CourseRecord] = []
    outcomes: list[OutcomeRecord] = []
    assignments: list[tuple[int, int, int]] = []
    last_ts = log_start

    capacity = world.config.teacher_capacity
    for round_no in range(1, horizon + 1):
        for s in range(n_s):
            if completed[s] or quit_class[s] or current[s] >= 0:
                continue
            available = np.flatnonzero((load < capacity) & ~dropped[s])
            if len(available) == 0:
                continue
            choice = int(policy.select(s, available, ctx))
            if choice < 0 or choice >= n_t or load[choice] >= capacity or dropped[s, choice]:
                raise SimulationError(
                    f"policy {policy.name!r} chose unavailable teacher index {choice} "
                    f"for student index {s}"
                )
            current[s] = choice
            load[choice] += 1
            attempts[s] += 1
            assignments.append((s, choice, int(teacher_courses[choice])))
            if trace:
                trace(
                    {
                        "event": "match",
                        "round": round_no,
                        "student": world.student_ids[s],
                        "teacher": world.teacher_ids[choice],
                        "attempt": int(attempts[s]),
                    }
                )

        for s in range(n_s):
            if completed[s] or quit_class[s] or current[s] < 0:
                continue
            t = int(current[s])
            ts = log_start + timedelta(days=round_no, seconds=int(s))
            last_ts = max(last_ts, ts)
            courses.append(
                CourseRecord(
                    student=world.student_ids[s],
                    teacher=world.teacher_ids[t],
                    timestamp=ts,
                    duration_minutes=40.0,
                    stats=world.course_stats(s, t, rng),
                )
            )
            teacher_courses[t] += 1
            blocks[s] += 1
            if blocks[s] >= blocks_to_complete:
                completed[s] = True
                current[s] = -1
                load[t] -= 1
                outcomes.append(
                    OutcomeRecord(world.student_ids[s], Outcome.COMPLETED, decided_at=ts)
                )
            elif rng.random() < world.drop_probability(world.affinity[s, t]):
                dropped[s, t] = True
                current[s] = -1
                load[t] -= 1
                if quit_probability > 0 and rng.random() < quit_probability:
                    quit_class[s] = True
                    outcomes.append(
                        OutcomeRecord(world.student_ids[s], Outcome.DROPPED, decided_at=ts)
                    )
                if trace:
                    trace(
                        {
                            "event": "drop",
                            "round": round_no,
                            "student": world.student_ids[s],
                            "teacher": world.teacher_ids[t],
                            "quit": bool(quit_class[s]),
                        }
                    )
        if (completed | quit_class).all():
            break

    final_ts = last_ts + timedelta(seconds=1)
    for s in range(n_s):
        if not completed[s] and not quit_class[s] and attempts[s] > 0:
            outcomes.append(
                OutcomeRecord(world.student_ids[s], Outcome.DROPPED, decided_at=final_ts)
            )
    return EpisodeStats(
        attempts=attempts,
        completed=completed,
        courses=courses,
        outcomes=outcomes,
        assignments=assignments,
    )


# -- policy comparison -----------------------------------------------------


@dataclass(frozen=True)
class PolicyResult:
    policy: str
    mean_attempts: float
    std_attempts: float
    completion_rate: float
    new_assignment_rate: float


@dataclass(frozen=True)
class PolicyComparison:
    rows: tuple[PolicyResult, ...]
    episodes: int

    def row(self, policy: str) -> PolicyResult:
        for r in self.rows:
            if r.policy == policy:
                return r
        raise KeyError(policy)

    def to_text(self) -> str:
        headers = ("Policy", "Mean Attempts", "Std", "Completion Rate", "New Assignment Rate")
        body = [
            (
                r.policy,
                f"{r.mean_attempts:.3f}",
                f"{r.std_attempts:.3f}",
                f"{r.completion_rate:.3f}",
                f"{r.new_assignment_rate:.3f}",
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
        lines = ["policy,mean_attempts,std_attempts,completion_rate,new_assignment_rate"]
        for r in self.rows:
            lines.append(
                f"{r.policy},{r.mean_attempts:.6f},{r.std_attempts:.6f},"
                f"{r.completion_rate:.6f},{r.new_assignment_rate:.6f}"
            )
        return "\n".join(lines) + "\n"


def compare_policies(
    world: World,
    policies: Mapping[str, Policy],
    episodes: int,
    horizon: int,
    blocks_to_complete: int = 4,
    base_seed: int = 0,
    new_teacher_delta: int = 100,
    initial_teacher_courses: np.ndarray | None = None,
) -> PolicyComparison:
    """Run every policy over the same episode seeds and tabulate attempts."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rows = []
    for name, policy in policies.items():
        per_episode = [
            run_episode(
                world,
                policy,
                horizon=horizon,
                blocks_to_complete=blocks_to_complete,
                rng_seed=base_seed + e,
                initial_teacher_courses=initial_teacher_courses,
            )
            for e in range(episodes)
        ]
        means = [st.mean_matching_attempts for st in per_episode]
        rates = [st.new_assignment_rate(new_teacher_delta) for st in per_episode]
        rows.append(
            PolicyResult(
                policy=name,
                mean_attempts=float(np.mean(means)),
                std_attempts=float(np.std(means)),
                completion_rate=float(np.mean([st.completion_rate for st in per_episode])),
                new_assignment_rate=float(np.mean(rates)),
            )
        )
    return PolicyComparison(rows=tuple(rows), episodes=episodes)


# -- learned policy plumbing -------------------------------------------------


def fit_ranker(
    world: World,
    courses: Sequence[CourseRecord],
    outcomes: Sequence[OutcomeRecord],
    train_params=None,
    max_school_vocab: int = 50,
):
    """Train a scoring model on marketplace logs.

    Returns ``(model, extractor, as_of)`` ready to drive a
    :class:`RankerPolicy`; retraining after more episodes is just calling
    this again with the grown logs.
    """
    from . import gbdt
    from .evaluation import eval_as_of, training_matrix
    from .features import build_schema, stat_columns_of
    from .labels import build_labels
    from .store import ingest

    store = ingest(courses, outcomes)
    labels = build_labels(store)
    if not labels:
        raise SimulationError("logs contain no labeled pairs to train on")
    schema = build_schema(
        world.students_table, world.teachers_table, stat_columns_of(store), max_school_vocab
    )
    extractor = FeatureExtractor(store, schema, world.students_table, world.teachers_table)
    X, y = training_matrix(extractor, labels)
    model = gbdt.train(X, y, train_params, schema_fingerprint=schema.fingerprint)
    return model, extractor, eval_as_of(store)


# -- offline dataset generation ---------------------------------------------


@dataclass(frozen=True)
class OfflineDatasetConfig:
    """Shape of a synthetic enrollment log for offline evaluation."""

    world: WorldConfig = field(
        default_factory=lambda: WorldConfig(
            n_students=2000, n_teachers=1000, teacher_capacity=30, fraction_new_teachers=0.15
        )
    )
    horizon: int = 40
    blocks_to_complete: int = 5
    candidate_subset: int = 25
    temperature: float = 0.5
    quit_probability: float = 0.3
    rng_seed: int = 0


@dataclass
class OfflineDataset:
    world: World
    courses: list[CourseRecord]
    outcomes: list[OutcomeRecord]

    @property
    def students_table(self) -> PeopleTable:
        return self.world.students_table

    @property
    def teachers_table(self) -> PeopleTable:
        return self.world.teachers_table


def generate_offline_dataset(config: OfflineDatasetConfig) -> OfflineDataset:
    """One long browsing episode; new teachers stay out of the log."""
    world = generate_world(config.world)
    policy = AffinitySamplingPolicy(
        subset_size=config.candidate_subset,
        temperature=config.temperature,
        exclude_mask=world.new_teacher_mask,
    )
    stats = run_episode(
        world,
        policy,
        horizon=config.horizon,
        blocks_to_complete=config.blocks_to_complete,
        rng_seed=config.rng_seed,
        quit_probability=config.quit_probability,
    )
    return OfflineDataset(world=world, courses=stats.courses, outcomes=stats.outcomes)
