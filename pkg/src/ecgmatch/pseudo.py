"""Teacher-side memory banks and neighbor-vote pseudo-labels.

The teacher maintains two row-aligned banks over the unlabeled pool: a
feature bank (one d-dimensional vector per sample) and a prediction bank
(one probability vector per sample). A pseudo-label for a query is the
columnwise mean of its K nearest bank neighbors' predictions, and each
class's weight is the neighbor agreement

    alpha_c = |2 * mean_k(p_kc) - 1|

which is 1 when the neighbors are unanimous for class c (all 0 or all 1)
and 0 when their mean prediction sits at one half.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigurationError, ContractViolation


@dataclass(frozen=True)
class KnnConfig:
    k: int = 10
    distance: str = "cosine"
    exclude_self: bool = False  # drop the query's own bank row before voting

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"k must be positive, got {self.k}")
        if self.distance not in ("cosine", "euclidean"):
            raise ConfigurationError(f"distance must be cosine or euclidean, got {self.distance!r}")


class MemoryBanks:
    """Row-aligned feature and prediction stores for the unlabeled pool."""

    def __init__(self, n_unlabeled: int, feature_dim: int, num_classes: int):
        if n_unlabeled < 1:
            raise ConfigurationError("memory banks need at least one unlabeled sample")
        self.features = np.zeros((n_unlabeled, feature_dim))
        self.predictions = np.zeros((n_unlabeled, num_classes))
        self.filled = np.zeros(n_unlabeled, dtype=bool)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    def update(self, indices, features, predictions) -> None:
        """Overwrite the addressed rows of both banks together."""
        indices = np.asarray(indices, dtype=int)
        if indices.size == 0:
            return
        if indices.min() < 0 or indices.max() >= self.size:
            raise ContractViolation(f"bank index out of range [0, {self.size})")
        self.features[indices] = features
        self.predictions[indices] = predictions
        self.filled[indices] = True

    def save(self, path) -> None:
        nn.write_matrices(path, [self.features, self.predictions, self.filled.reshape(1, -1)])

    @classmethod
    def load(cls, path) -> "MemoryBanks":
        feats, preds, filled = nn.read_matrices(path)
        banks = cls(feats.shape[0], feats.shape[1], preds.shape[1])
        banks.features = feats
        banks.predictions = preds
        banks.filled = filled.reshape(-1).astype(bool)
        return banks


def bank_init(teacher_cfg: nn.ModelConfig, teacher: nn.ParameterSet, unlabeled_inputs: np.ndarray) -> MemoryBanks:
    """One full teacher pass over the (weak-augmented, encoded) unlabeled pool."""
    x = np.asarray(unlabeled_inputs, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ConfigurationError("bank_init needs a nonempty unlabeled input matrix")
    features, predictions = nn.forward(teacher_cfg, teacher, x)
    banks = MemoryBanks(x.shape[0], features.shape[1], predictions.shape[1])
    banks.update(np.arange(x.shape[0]), features, predictions)
    return banks


def bank_update(banks: MemoryBanks, indices, teacher_cfg: nn.ModelConfig,
                teacher: nn.ParameterSet, batch: np.ndarray) -> MemoryBanks:
    """Refresh the addressed rows with the teacher's view of the current mini-batch."""
    indices = np.asarray(indices, dtype=int)
    if indices.size == 0:
        return banks
    features, predictions = nn.forward(teacher_cfg, teacher, np.asarray(batch, dtype=float))
    if features.shape[0] != indices.size:
        raise ContractViolation("index list and batch size differ")
    banks.update(indices, features, predictions)
    return banks


def _distances(bank_features: np.ndarray, queries: np.ndarray, distance: str) -> np.ndarray:
    """(n_queries, n_bank) distance matrix."""
    if distance == "euclidean":
        diff = queries[:, None, :] - bank_features[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=2))
    # cosine distance: 1 - cos similarity; zero vectors get similarity 0
    qn = np.linalg.norm(queries, axis=1, keepdims=True)
    bn = np.linalg.norm(bank_features, axis=1, keepdims=True)
    q = queries / np.where(qn > 0.0, qn, 1.0)
    b = bank_features / np.where(bn > 0.0, bn, 1.0)
    return 1.0 - q @ b.T


def knn_query(banks: MemoryBanks, query: np.ndarray, cfg: KnnConfig, exclude: int | None = None):
    """The K bank rows nearest to `query`; ties resolve to the lower index.

    Returns a list of (bank_index, prediction_row) pairs sorted by distance.
    `exclude` drops one bank row (the query's own slot) before ranking.
    """
    if cfg.k > banks.size - (1 if exclude is not None else 0):
        raise ConfigurationError(f"k={cfg.k} exceeds available bank rows ({banks.size})")
    q = np.asarray(query, dtype=float).reshape(1, -1)
    dist = _distances(banks.features, q, cfg.distance)[0]
    if exclude is not None:
        dist[exclude] = np.inf
    order = np.argsort(dist, kind="stable")[: cfg.k]
    return [(int(i), banks.predictions[i].copy()) for i in order]


def soft_vote(neighbor_preds: np.ndarray) -> np.ndarray:
    """Columnwise mean of the neighbors' prediction rows."""
    p = np.asarray(neighbor_preds, dtype=float)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ContractViolation("soft_vote needs a nonempty K x C matrix")
    return p.mean(axis=0)


def neighbor_agreement(neighbor_preds: np.ndarray) -> np.ndarray:
    """Per-class unanimity score |2/K * sum_k p_kc - 1|."""
    p = np.asarray(neighbor_preds, dtype=float)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ContractViolation("neighbor_agreement needs a nonempty K x C matrix")
    return np.abs(2.0 * p.mean(axis=0) - 1.0)


def generate_pseudo_labels(banks: MemoryBanks, query_features: np.ndarray, cfg: KnnConfig,
                           self_indices=None):
    """Vectorized soft vote + agreement for a batch of query feature rows.

    Returns (pseudo n x C, agreement n x C). Ranking matches knn_query row
    by row (stable ties toward lower bank indices). With cfg.exclude_self,
    `self_indices` names each query's own bank row, which is skipped.
    """
    queries = np.asarray(query_features, dtype=float)
    needed = cfg.k + (1 if cfg.exclude_self and self_indices is not None else 0)
    if needed > banks.size:
        raise ConfigurationError(f"k={cfg.k} exceeds bank size {banks.size}")
    dist = _distances(banks.features, queries, cfg.distance)
    if cfg.exclude_self and self_indices is not None:
        dist[np.arange(queries.shape[0]), np.asarray(self_indices, dtype=int)] = np.inf
    order = np.argsort(dist, axis=1, kind="stable")[:, : cfg.k]
    neighbor_preds = banks.predictions[order]  # (n, K, C)
    means = neighbor_preds.mean(axis=1)
    return means, np.abs(2.0 * means - 1.0)
