"""Numeric kernels for hierarchical lane queries.

Point queries are sum-pooled into one global vector which is added to
every instance query. Lane queries can further be extended with the
lane's start and end point before pairwise topology scoring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QueryConfig:
    n_instances: int
    dim: int
    n_points: int = 11

    def __post_init__(self):
        if self.n_points < 1 or self.n_instances < 1 or self.dim < 1:
            raise ValueError("n_points, n_instances and dim must all be >= 1")


def _as_matrix(values, name: str) -> np.ndarray:
    m = np.asarray(values, dtype=float)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite values")
    return m


def point_pooling(q_p) -> np.ndarray:
    """Column-wise sum of the point queries, shape (N_p, D) -> (D,)."""
    return _as_matrix(q_p, "point queries").sum(axis=0)


def assemble_lc_queries(q_i, pooled) -> np.ndarray:
    """Add the pooled point feature to each instance query row."""
    q_i = _as_matrix(q_i, "instance queries")
    pooled = np.asarray(pooled, dtype=float)
    if pooled.shape != (q_i.shape[1],):
        raise ValueError(
            f"pooled vector has shape {pooled.shape}, expected ({q_i.shape[1]},)"
        )
    return q_i + pooled


def hierarchical_queries(q_p, q_i) -> np.ndarray:
    return assemble_lc_queries(q_i, point_pooling(q_p))


def augment_with_endpoints(query, start, end) -> np.ndarray:
    """Return ``[query, start_xyz, end_xyz]`` as one vector of length D + 6."""
    query = np.asarray(query, dtype=float).reshape(-1)
    if not np.all(np.isfinite(query)):
        raise ValueError("query contains non-finite values")
    start = np.asarray(start, dtype=float).reshape(3)
    end = np.asarray(end, dtype=float).reshape(3)
    return np.concatenate([query, start, end])
