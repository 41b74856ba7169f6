"""Shared and differential graph operators, and generalized Laplacian scores.

The shared operator b*(L_x L_y + L_y L_x) amplifies structure present in both
modalities; the differential operator b*(L_other + cI)^{-1} L_target
(L_other + cI)^{-1} amplifies structure unique to the target modality.
"""

from __future__ import annotations

import numpy as np

from .tape import ContractError, DimensionError, Node, Tape, eigh_descending

__all__ = [
    "shared_operator",
    "differential_operator",
    "shared_operator_array",
    "differential_operator_array",
    "generalized_laplacian_score",
    "score_all_features",
    "zscore_columns",
    "principal_angle_degrees",
]

DEFAULT_C = 0.1


def shared_operator(tape: Tape, l_x: Node, l_y: Node, b: float = 1.0) -> Node:
    """b * (L_x L_y + L_y L_x), on tape."""
    if l_x.value.shape != l_y.value.shape:
        raise DimensionError("Laplacians must share shape")
    p = tape.add(tape.matmul(l_x, l_y), tape.matmul(l_y, l_x))
    return tape.scale(p, b) if b != 1.0 else p


def differential_operator(
    tape: Tape, l_target: Node, l_other: Node, c: float = DEFAULT_C, b: float = 1.0
) -> Node:
    """b * (L_other + cI)^{-1} L_target (L_other + cI)^{-1}, on tape."""
    if l_target.value.shape != l_other.value.shape:
        raise DimensionError("Laplacians must share shape")
    if c <= 0:
        raise ContractError("regularization constant c must be positive")
    n = l_other.value.shape[0]
    reg = tape.add(l_other, tape.constant(c * np.eye(n)))
    inv = tape.inverse(reg)
    q = tape.matmul(inv, tape.matmul(l_target, inv))
    return tape.scale(q, b) if b != 1.0 else q


def shared_operator_array(l_x: np.ndarray, l_y: np.ndarray, b: float = 1.0) -> np.ndarray:
    p = l_x @ l_y + l_y @ l_x
    return 0.5 * b * (p + p.T)


def differential_operator_array(
    l_target: np.ndarray, l_other: np.ndarray, c: float = DEFAULT_C, b: float = 1.0
) -> np.ndarray:
    if c <= 0:
        raise ContractError("regularization constant c must be positive")
    inv = np.linalg.inv(l_other + c * np.eye(l_other.shape[0]))
    q = b * (inv @ l_target @ inv)
    return 0.5 * (q + q.T)


def generalized_laplacian_score(f: np.ndarray, op: np.ndarray) -> float:
    """f^T Op f for a single feature vector."""
    f = np.asarray(f, dtype=np.float64).ravel()
    op = np.asarray(op, dtype=np.float64)
    if op.shape != (f.size, f.size):
        raise DimensionError(f"operator {op.shape} does not match feature length {f.size}")
    return float(f @ op @ f)


def zscore_columns(data: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance columns; constant columns map to zero."""
    data = np.asarray(data, dtype=np.float64)
    mu = data.mean(axis=0)
    sd = data.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (data - mu) / sd


def score_all_features(data: np.ndarray, op: np.ndarray, zscore: bool = False) -> np.ndarray:
    """Per-column generalized scores, diag(X^T Op X)."""
    data = np.asarray(data, dtype=np.float64)
    if zscore:
        data = zscore_columns(data)
    if op.shape[0] != data.shape[0]:
        raise DimensionError("operator size does not match sample count")
    return np.einsum("ij,ik,kj->j", data, op, data)


def principal_angle_degrees(basis_a: np.ndarray, basis_b: np.ndarray) -> float:
    """Largest principal angle between the column spans, in degrees."""
    qa, _ = np.linalg.qr(np.asarray(basis_a, dtype=np.float64))
    qb, _ = np.linalg.qr(np.asarray(basis_b, dtype=np.float64))
    sv = np.linalg.svd(qa.T @ qb, compute_uv=False)
    sv = np.clip(sv, -1.0, 1.0)
    return float(np.degrees(np.arccos(sv.min())))


def top_eigenspace(op: np.ndarray, k: int) -> np.ndarray:
    """Orthonormal basis of the eigenspace of the k largest eigenvalues."""
    _, vecs = eigh_descending(op)
    return vecs[:, :k]
