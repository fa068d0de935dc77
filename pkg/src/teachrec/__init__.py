"""Teacher recommendation engine for one-on-one online classes.

Pipeline: ingest enrollment logs, derive pseudo matching scores from
completion/dropout outcomes, train a gradient-boosted tree ranker over
(student, teacher) feature vectors, boost cold-start teachers at slate
time, and guard recommendation diversity. Ships with classical
collaborative-filtering baselines, an offline evaluation protocol, a
marketplace simulator, and an HTTP serving layer.
"""

__version__ = "0.1.0"

from .labels import build_labels, negative_score, positive_scores
from .ranking import BoostParams, diversity, new_teacher_ratio, novelty_boost, rank
from .store import InteractionStore, ingest

__all__ = [
    "__version__",
    "BoostParams",
    "InteractionStore",
    "build_labels",
    "diversity",
    "ingest",
    "negative_score",
    "new_teacher_ratio",
    "novelty_boost",
    "positive_scores",
    "rank",
]
