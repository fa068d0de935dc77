"""Classical collaborative-filtering baselines over the pseudo-score matrix.

All three treat unobserved entries as 0 and can only score teachers that
appear in the matrix, which is exactly the cold-start limitation that
motivates the novelty boost: a teacher with an all-zero column is
invisible to them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .labels import LabeledPair


@dataclass
class RatingMatrix:
    """Dense |students| x |teachers| matrix of pseudo scores (0 = unobserved)."""

    values: np.ndarray
    observed: np.ndarray
    student_ids: tuple[str, ...]
    teacher_ids: tuple[str, ...]
    student_index: dict[str, int] = field(init=False)
    teacher_index: dict[str, int] = field(init=False)

    def __post_init__(self):
        if self.values.shape != self.observed.shape:
            raise ValueError("values and observed mask must have the same shape")
        if np.abs(self.values).max(initial=0.0) > 1.0:
            raise ValueError("pseudo scores must lie in [-1, 1]")
        self.student_index = {s: i for i, s in enumerate(self.student_ids)}
        self.teacher_index = {t: j for j, t in enumerate(self.teacher_ids)}

    @classmethod
    def from_labels(cls, labels: Iterable[LabeledPair]) -> "RatingMatrix":
        labels = list(labels)
        students = tuple(sorted({l.student for l in labels}))
        teachers = tuple(sorted({l.teacher for l in labels}))
        values = np.zeros((len(students), len(teachers)))
        observed = np.zeros_like(values, dtype=bool)
        srow = {s: i for i, s in enumerate(students)}
        tcol = {t: j for j, t in enumerate(teachers)}
        for l in labels:
            values[srow[l.student], tcol[l.teacher]] = l.score
            observed[srow[l.student], tcol[l.teacher]] = True
        return cls(values=values, observed=observed, student_ids=students, teacher_ids=teachers)

    def shifted_nonnegative(self) -> np.ndarray:
        """Observed scores mapped from [-1, 1] to [0, 1]; unobserved stay 0."""
        out = np.zeros_like(self.values)
        out[self.observed] = (self.values[self.observed] + 1.0) / 2.0
        return out


@dataclass
class FactorModel:
    """Low-rank scorer: score(student, teacher) = U[s] . V[t]."""

    user_factors: np.ndarray
    item_factors: np.ndarray
    method: str  # "svd" | "nmf"
    student_ids: tuple[str, ...]
    teacher_ids: tuple[str, ...]
    objective_history: tuple[float, ...] = ()

    @property
    def k(self) -> int:
        return self.user_factors.shape[1]

    def score(self, student: str, teacher: str) -> float:
        i = dict_index(self.student_ids, student)
        j = dict_index(self.teacher_ids, teacher)
        if i is None or j is None:
            return 0.0
        return float(self.user_factors[i] @ self.item_factors[j])

    def score_candidates(self, student: str, teachers: Sequence[str]) -> np.ndarray:
        i = dict_index(self.student_ids, student)
        if i is None:
            return np.zeros(len(teachers))
        row = self.user_factors[i] @ self.item_factors.T
        index = {t: j for j, t in enumerate(self.teacher_ids)}
        return np.array([row[index[t]] if t in index else 0.0 for t in teachers])

    def reconstruction(self) -> np.ndarray:
        return self.user_factors @ self.item_factors.T


def dict_index(ids: tuple[str, ...], wanted: str) -> int | None:
    # tuple.index raises; linear scan is fine at these sizes but cache anyway
    try:
        return ids.index(wanted)
    except ValueError:
        return None


# -- item-based collaborative filtering ---------------------------------


class ItemCFModel:
    """Teacher-teacher cosine similarity scorer.

    score(s, t) sums similarity(t, t') * rating(s, t') over the student's
    rated teachers, restricted to the ``top_n`` most similar of them.
    """

    def __init__(self, matrix: RatingMatrix, top_n: int = 50):
        if top_n < 1:
            raise ValueError("top_n must be >= 1")
        self.matrix = matrix
        self.top_n = top_n
        norms = np.linalg.norm(matrix.values, axis=0)
        safe = np.where(norms > 0, norms, 1.0)
        normalized = matrix.values / safe
        self.similarity = normalized.T @ normalized
        self.similarity[norms == 0, :] = 0.0
        self.similarity[:, norms == 0] = 0.0

    def score(self, student: str, teacher: str) -> float:
        i = self.matrix.student_index.get(student)
        j = self.matrix.teacher_index.get(teacher)
        if i is None or j is None:
            return 0.0
        rated = np.flatnonzero(self.matrix.observed[i])
        if len(rated) == 0:
            return 0.0
        sims = self.similarity[rated, j]
        if len(rated) > self.top_n:
            keep = np.argsort(-sims, kind="stable")[: self.top_n]
            rated, sims = rated[keep], sims[keep]
        return float(sims @ self.matrix.values[i, rated])

    def score_candidates(self, student: str, teachers: Sequence[str]) -> np.ndarray:
        i = self.matrix.student_index.get(student)
        if i is None:
            return np.zeros(len(teachers))
        rated = np.flatnonzero(self.matrix.observed[i])
        if len(rated) == 0:
            return np.zeros(len(teachers))
        ratings = self.matrix.values[i, rated]
        sims = self.similarity[rated, :]  # rated x teachers
        if len(rated) <= self.top_n:
            full = ratings @ sims
        else:
            order = np.argsort(-sims, axis=0, kind="stable")[: self.top_n]
            full = np.take_along_axis(sims, order, axis=0)
            full = (full * ratings[order]).sum(axis=0)
        index = self.matrix.teacher_index
        return np.array([full[index[t]] if t in index else 0.0 for t in teachers])


def itemcf_score(
    matrix: RatingMatrix, student: str, teacher: str, top_n_neighbors: int = 50
) -> float:
    """One-off ItemCF score; build an :class:`ItemCFModel` for batch use."""
    return ItemCFModel(matrix, top_n=top_n_neighbors).score(student, teacher)


# -- truncated SVD via orthogonal iteration ------------------------------


def svd_fit(
    matrix: RatingMatrix,
    k: int,
    n_power_iterations: int = 100,
    seed: int = 0,
) -> FactorModel:
    """Rank-k factorization by orthogonal iteration on the zero-filled matrix."""
    A = matrix.values
    if not 1 <= k <= min(A.shape):
        raise ValueError(f"k must be in [1, {min(A.shape)}], got {k}")
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((A.shape[0], k)))
    for _ in range(n_power_iterations):
        Q, _ = np.linalg.qr(A @ (A.T @ Q))
    B = A.T @ Q
    V, R = np.linalg.qr(B)
    U = Q @ R.T
    return FactorModel(
        user_factors=U,
        item_factors=V,
        method="svd",
        student_ids=matrix.student_ids,
        teacher_ids=matrix.teacher_ids,
    )


# -- non-negative matrix factorization -----------------------------------


def nmf_fit(
    nonnegative: np.ndarray,
    k: int,
    iterations: int = 200,
    seed: int = 0,
    student_ids: tuple[str, ...] = (),
    teacher_ids: tuple[str, ...] = (),
) -> FactorModel:
    """Multiplicative-update NMF of a non-negative matrix.

    The squared Frobenius objective is recorded before the first update and
    after every iteration; multiplicative updates make it non-increasing.
    """
    A = np.asarray(nonnegative, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("input must be a 2-D matrix")
    if (A < 0).any():
        raise ValueError("NMF input must be non-negative; shift scores first")
    if k < 1:
        raise ValueError("k must be >= 1")
    eps = 1e-12
    rng = np.random.default_rng(seed)
    W = rng.uniform(0.1, 1.0, size=(A.shape[0], k))
    H = rng.uniform(0.1, 1.0, size=(k, A.shape[1]))
    objective = [float(np.linalg.norm(A - W @ H) ** 2)]
    for _ in range(iterations):
        H *= (W.T @ A) / (W.T @ W @ H + eps)
        W *= (A @ H.T) / (W @ (H @ H.T) + eps)
        objective.append(float(np.linalg.norm(A - W @ H) ** 2))
    return FactorModel(
        user_factors=W,
        item_factors=H.T,
        method="nmf",
        student_ids=tuple(student_ids),
        teacher_ids=tuple(teacher_ids),
        objective_history=tuple(objective),
    )


def nmf_fit_matrix(
    matrix: RatingMatrix, k: int, iterations: int = 200, seed: int = 0
) -> FactorModel:
    """NMF over the rating matrix after shifting scores into [0, 1]."""
    return nmf_fit(
        matrix.shifted_nonnegative(),
        k=k,
        iterations=iterations,
        seed=seed,
        student_ids=matrix.student_ids,
        teacher_ids=matrix.teacher_ids,
    )
