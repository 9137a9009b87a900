"""Multi-label evaluation metrics.

All ranking-based metrics use the "worst rank" convention for ties (an item
tied with others takes the deepest of their shared positions) and score tied
pairs as half-correct, which keeps every metric invariant under sample and
class permutations. Rows or classes that cannot support a metric (no
relevant label, single-valued class column) are skipped, not zero-filled,
and the skip counts are carried in the report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError

CSV_COLUMNS = [
    "ranking_loss",
    "hamming_loss",
    "coverage",
    "map",
    "macro_auc",
    "macro_gbeta",
    "skipped_ranking_rows",
    "skipped_coverage_rows",
    "skipped_map_classes",
    "skipped_auc_classes",
]


@dataclass
class ScoreMatrix:
    scores: np.ndarray  # (n, C) in [0, 1]
    labels: np.ndarray  # (n, C) binary

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 2:
            raise ValueError(
                f"scores {self.scores.shape} and labels {self.labels.shape} must be matching 2-D"
            )
        if not np.all((self.labels == 0.0) | (self.labels == 1.0)):
            raise ValueError("labels must be binary")


@dataclass
class MetricsReport:
    ranking_loss: float
    hamming_loss: float
    coverage: float
    map: float
    macro_auc: float
    macro_gbeta: float
    skipped: dict = field(default_factory=dict)
    per_class: dict = field(default_factory=dict)

    def value(self, name: str) -> float:
        return float(getattr(self, name))

    def to_csv_row(self) -> list[str]:
        vals = [self.ranking_loss, self.hamming_loss, self.coverage,
                self.map, self.macro_auc, self.macro_gbeta]
        skips = [self.skipped.get("ranking_rows", 0), self.skipped.get("coverage_rows", 0),
                 self.skipped.get("map_classes", 0), self.skipped.get("auc_classes", 0)]
        return [repr(float(v)) for v in vals] + [str(int(s)) for s in skips]

    @classmethod
    def from_csv_row(cls, row) -> "MetricsReport":
        vals = [float(v) for v in row[:6]]
        skips = [int(v) for v in row[6:10]] if len(row) >= 10 else [0, 0, 0, 0]
        return cls(*vals, skipped={
            "ranking_rows": skips[0], "coverage_rows": skips[1],
            "map_classes": skips[2], "auc_classes": skips[3],
        })


# Metric orientation: True when larger values mean better performance.
HIGHER_IS_BETTER = {
    "ranking_loss": False,
    "hamming_loss": False,
    "coverage": False,
    "map": True,
    "macro_auc": True,
    "macro_gbeta": True,
}


def _worst_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based descending ranks where ties share the deepest position."""
    s = scores[None, :] if scores.ndim == 1 else scores
    greater = (s[:, :, None] > s[:, None, :]).sum(axis=1)
    equal = (s[:, :, None] == s[:, None, :]).sum(axis=1)
    ranks = greater + equal
    return ranks[0] if scores.ndim == 1 else ranks


def _ranking_loss(sm: ScoreMatrix):
    total, counted, skipped = 0.0, 0, 0
    for s, y in zip(sm.scores, sm.labels):
        pos = s[y == 1.0]
        neg = s[y == 0.0]
        if pos.size == 0 or neg.size == 0:
            skipped += 1
            continue
        wrong = (neg[None, :] > pos[:, None]).sum() + 0.5 * (neg[None, :] == pos[:, None]).sum()
        total += wrong / (pos.size * neg.size)
        counted += 1
    return total, counted, skipped


def ranking_loss(sm: ScoreMatrix) -> float:
    """Mean fraction of (relevant, irrelevant) pairs ranked out of order (ties count half)."""
    total, counted, skipped = _ranking_loss(sm)
    if counted == 0:
        raise UndefinedMetricError("ranking loss: no row has both relevant and irrelevant labels")
    return total / counted


def hamming_loss(sm: ScoreMatrix, threshold: float = 0.5) -> float:
    """Fraction of cells where the thresholded score disagrees with the label."""
    pred = (sm.scores > threshold).astype(float)
    return float(np.mean(pred != sm.labels))


def _coverage(sm: ScoreMatrix):
    total, counted, skipped = 0.0, 0, 0
    for s, y in zip(sm.scores, sm.labels):
        if y.sum() == 0:
            skipped += 1
            continue
        ranks = _worst_ranks(s)
        total += ranks[y == 1.0].max()
        counted += 1
    return total, counted, skipped


def coverage(sm: ScoreMatrix) -> float:
    """Mean depth (1-based rank) needed to cover every relevant label."""
    total, counted, skipped = _coverage(sm)
    if counted == 0:
        raise UndefinedMetricError("coverage: no row has a relevant label")
    return total / counted


def _average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    pos_scores = scores[labels == 1.0]
    precisions = []
    for s in pos_scores:
        rank = (scores > s).sum() + (scores == s).sum()
        hits = (pos_scores > s).sum() + (pos_scores == s).sum()
        precisions.append(hits / rank)
    return float(np.mean(precisions))


def _map(sm: ScoreMatrix):
    per_class, skipped = {}, 0
    for c in range(sm.scores.shape[1]):
        if sm.labels[:, c].sum() == 0:
            skipped += 1
            continue
        per_class[c] = _average_precision(sm.scores[:, c], sm.labels[:, c])
    return per_class, skipped


def mean_average_precision(sm: ScoreMatrix) -> float:
    """Macro mean over classes of average precision (classes without positives skipped)."""
    per_class, _ = _map(sm)
    if not per_class:
        raise UndefinedMetricError("MAP: no class has a positive sample")
    return float(np.mean(list(per_class.values())))


def _auc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = scores[labels == 1.0]
    neg = scores[labels == 0.0]
    correct = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return float(correct / (pos.size * neg.size))


def _macro_auc(sm: ScoreMatrix):
    per_class, skipped = {}, 0
    for c in range(sm.scores.shape[1]):
        col = sm.labels[:, c]
        if col.sum() == 0 or col.sum() == col.size:
            skipped += 1
            continue
        per_class[c] = _auc(sm.scores[:, c], col)
    return per_class, skipped


def macro_auc(sm: ScoreMatrix) -> float:
    """Macro mean pairwise AUC (ties half credit); single-valued classes skipped."""
    per_class, _ = _macro_auc(sm)
    if not per_class:
        raise UndefinedMetricError("macro AUC: no class has both positives and negatives")
    return float(np.mean(list(per_class.values())))


def _gbeta_per_class(sm: ScoreMatrix, beta: float, threshold: float):
    pred = sm.scores > threshold
    truth = sm.labels == 1.0
    values = []
    for c in range(sm.scores.shape[1]):
        tp = float(np.sum(pred[:, c] & truth[:, c]))
        fp = float(np.sum(pred[:, c] & ~truth[:, c]))
        fn = float(np.sum(~pred[:, c] & truth[:, c]))
        denom = tp + fn + beta * fp
        values.append(tp / denom if denom > 0 else 0.0)
    return values


def macro_gbeta(sm: ScoreMatrix, beta: float = 2.0, threshold: float = 0.5) -> float:
    """Macro mean of TP / (TP + FN + beta*FP) after thresholding (0 on empty denominators)."""
    return float(np.mean(_gbeta_per_class(sm, beta, threshold)))


def compute_all(scores, labels, threshold: float = 0.5, beta: float = 2.0) -> MetricsReport:
    """All six metrics in one report; undefined metrics become NaN with their skips recorded."""
    sm = ScoreMatrix(scores, labels)
    rl_total, rl_count, rl_skip = _ranking_loss(sm)
    cov_total, cov_count, cov_skip = _coverage(sm)
    map_per_class, map_skip = _map(sm)
    auc_per_class, auc_skip = _macro_auc(sm)
    gbeta_values = _gbeta_per_class(sm, beta, threshold)
    return MetricsReport(
        ranking_loss=rl_total / rl_count if rl_count else float("nan"),
        hamming_loss=hamming_loss(sm, threshold),
        coverage=cov_total / cov_count if cov_count else float("nan"),
        map=float(np.mean(list(map_per_class.values()))) if map_per_class else float("nan"),
        macro_auc=float(np.mean(list(auc_per_class.values()))) if auc_per_class else float("nan"),
        macro_gbeta=float(np.mean(gbeta_values)),
        skipped={
            "ranking_rows": rl_skip,
            "coverage_rows": cov_skip,
            "map_classes": map_skip,
            "auc_classes": auc_skip,
        },
        per_class={
            "map": map_per_class,
            "macro_auc": auc_per_class,
            "macro_gbeta": {c: v for c, v in enumerate(gbeta_values)},
        },
    )
