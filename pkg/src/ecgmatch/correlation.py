"""Label co-occurrence matrices and the Frobenius alignment penalty.

For an n x C matrix Y of labels (binary ground truth) or predictions
(values in [0, 1]), the cosine correlation matrix is

    R = N(Y)^T N(Y)

where N normalizes every nonzero column to unit Euclidean length. On binary
labels the (c1, c2) entry equals the geometric mean of the two empirical
conditional co-occurrence probabilities sqrt(P(c1|c2) * P(c2|c1)), which is
why this estimate does not move when the class marginals change (row
duplication, padding with rows empty in both classes). Squared Pearson and
an inverse-Euclidean similarity are available as alternatives; both depend
on the marginals.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

SIMILARITY_KINDS = ("cosine", "pearson", "euclidean")


@dataclass
class CorrelationMatrix:
    values: np.ndarray  # (C, C), symmetric
    source: str  # "labeled" or "unlabeled"


def normalize_columns(y: np.ndarray) -> np.ndarray:
    """Scale each nonzero column to unit norm; all-zero columns stay zero."""
    y = np.asarray(y, dtype=float)
    norms = np.linalg.norm(y, axis=0)
    safe = np.where(norms > 0.0, norms, 1.0)
    return y / safe


def correlation_matrix(y: np.ndarray, kind: str = "cosine") -> np.ndarray:
    """C x C similarity matrix between the columns of y."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[0] < 1:
        raise ContractViolation(f"need at least one row, got shape {y.shape}")
    if kind == "cosine":
        u = normalize_columns(y)
        return u.T @ u
    if kind == "pearson":
        centered = y - y.mean(axis=0, keepdims=True)
        u = normalize_columns(centered)
        rho = u.T @ u
        return rho * rho
    if kind == "euclidean":
        c = y.shape[1]
        r = np.empty((c, c))
        for i in range(c):
            for j in range(i, c):
                d = np.linalg.norm(y[:, i] - y[:, j])
                r[i, j] = r[j, i] = 1.0 / (1.0 + d)
        return r
    raise ContractViolation(f"unknown similarity kind {kind!r}")


def correlation_labeled(y_b: np.ndarray) -> CorrelationMatrix:
    """Cosine correlation of a binary ground-truth matrix."""
    y_b = np.asarray(y_b, dtype=float)
    if not np.all((y_b == 0.0) | (y_b == 1.0)):
        raise ContractViolation("labeled correlation expects a binary matrix")
    return CorrelationMatrix(correlation_matrix(y_b, "cosine"), source="labeled")


def correlation_unlabeled(p_u: np.ndarray, kind: str = "cosine") -> CorrelationMatrix:
    """Correlation of stacked prediction rows (strong and weak views together)."""
    p_u = np.asarray(p_u, dtype=float)
    if p_u.ndim != 2 or p_u.shape[0] < 1:
        raise ContractViolation("prediction matrix needs at least one row")
    if np.any(p_u < 0.0) or np.any(p_u > 1.0):
        raise ContractViolation("prediction entries must lie in [0, 1]")
    return CorrelationMatrix(correlation_matrix(p_u, kind), source="unlabeled")


def frobenius_loss(r_b, r_u) -> float:
    """Frobenius norm of the difference between two correlation matrices."""
    a = r_b.values if isinstance(r_b, CorrelationMatrix) else np.asarray(r_b, dtype=float)
    b = r_u.values if isinstance(r_u, CorrelationMatrix) else np.asarray(r_u, dtype=float)
    if a.shape != b.shape:
        raise ContractViolation(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b, ord="fro"))


# --- scalar similarity forms --------------------------------------------------


def pearson_correlation(y_c1: np.ndarray, y_c2: np.ndarray) -> float:
    """Squared Pearson coefficient of two label sequences, in [0, 1]."""
    a = np.asarray(y_c1, dtype=float)
    b = np.asarray(y_c2, dtype=float)
    ac = a - a.mean()
    bc = b - b.mean()
    na, nb = np.linalg.norm(ac), np.linalg.norm(bc)
    if na == 0.0 or nb == 0.0:
        warnings.warn("pearson correlation undefined for a constant column; returning 0")
        return 0.0
    rho = float(ac @ bc / (na * nb))
    return rho * rho


def euclidean_correlation(y_c1: np.ndarray, y_c2: np.ndarray) -> float:
    """Inverse-distance similarity 1 / (1 + ||y_c1 - y_c2||)."""
    a = np.asarray(y_c1, dtype=float)
    b = np.asarray(y_c2, dtype=float)
    if a.shape != b.shape:
        raise ContractViolation("vectors must share a length")
    return float(1.0 / (1.0 + np.linalg.norm(a - b)))


def conditional_probability_form(y: np.ndarray, c1: int, c2: int) -> float:
    """sqrt(P(c1=1|c2=1) * P(c2=1|c1=1)) from empirical counts of a binary matrix."""
    y = np.asarray(y, dtype=float)
    n1 = float(y[:, c1].sum())
    n2 = float(y[:, c2].sum())
    if n1 == 0.0 or n2 == 0.0:
        warnings.warn("conditional co-occurrence undefined for an empty class; returning 0")
        return 0.0
    both = float((y[:, c1] * y[:, c2]).sum())
    return float(np.sqrt((both / n2) * (both / n1)))


# --- gradients for the alignment loss ----------------------------------------


def _normalize_backward(y: np.ndarray, d_u: np.ndarray) -> np.ndarray:
    """Backprop through column normalization u = y / ||y|| (zero columns get zero grad)."""
    norms = np.linalg.norm(y, axis=0)
    safe = np.where(norms > 0.0, norms, 1.0)
    u = y / safe
    # d y = (d_u - u * <u, d_u>) / ||y|| columnwise
    dots = np.sum(u * d_u, axis=0, keepdims=True)
    d_y = (d_u - u * dots) / safe
    return np.where(norms > 0.0, d_y, 0.0)


def correlation_matrix_backward(y: np.ndarray, kind: str, d_r: np.ndarray) -> np.ndarray:
    """Gradient of sum(R * d_r) w.r.t. the input rows, for R = correlation_matrix(y, kind)."""
    y = np.asarray(y, dtype=float)
    d_r = np.asarray(d_r, dtype=float)
    if kind == "cosine":
        u = normalize_columns(y)
        d_u = u @ (d_r + d_r.T)
        return _normalize_backward(y, d_u)
    if kind == "pearson":
        centered = y - y.mean(axis=0, keepdims=True)
        u = normalize_columns(centered)
        rho = u.T @ u
        d_rho = 2.0 * rho * d_r
        d_u = u @ (d_rho + d_rho.T)
        d_centered = _normalize_backward(centered, d_u)
        return d_centered - d_centered.mean(axis=0, keepdims=True)
    if kind == "euclidean":
        c = y.shape[1]
        d_y = np.zeros_like(y)
        for i in range(c):
            for j in range(c):
                if i == j:
                    continue
                diff = y[:, i] - y[:, j]
                d = np.linalg.norm(diff)
                if d == 0.0:
                    continue
                coeff = -d_r[i, j] / (1.0 + d) ** 2
                d_y[:, i] += coeff * diff / d
                d_y[:, j] -= coeff * diff / d
        return d_y
    raise ContractViolation(f"unknown similarity kind {kind!r}")


def export_csv(path, matrix: CorrelationMatrix, class_names=None) -> None:
    """Write a correlation matrix as CSV with a header row of class names."""
    values = matrix.values
    names = list(class_names) if class_names else [f"class_{i}" for i in range(values.shape[0])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["", *names])
        for name, row in zip(names, values):
            writer.writerow([name, *(repr(float(v)) for v in row)])
