"""Inter-node distance completion and classical MDS embedding.

Node-to-node distances are never observed directly: only node-to-source
distances are.  For every node pair the triangle inequality applied over
shared sources yields a lower and an upper bound on the true inter-node
distance; the midpoint of the two bounds serves as the completed estimate,
which is then embedded in the plane by classical (Torgerson) MDS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from garde.errors import DataError, NumericalError
from garde.geometry import ObservationSet, _frozen

__all__ = ["CompletedDistanceMatrix", "complete_distances", "classical_mds"]


@dataclass(frozen=True, eq=False)
class CompletedDistanceMatrix:
    """Completed inter-node distances with their triangle-inequality bounds.

    ``lower[i, j] <= d_hat[i, j] <= upper[i, j]`` for every off-diagonal
    pair; all three matrices are symmetric with zero diagonal.  Wide
    ``upper - lower`` gaps flag pairs whose completion is poorly
    constrained by the available sources.
    """

    d_hat: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        for name in ("d_hat", "lower", "upper"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                raise DataError(f"{name} must be square, got shape {arr.shape}")
            object.__setattr__(self, name, _frozen(arr))


def complete_distances(obs: ObservationSet) -> CompletedDistanceMatrix:
    """Bound and estimate every inter-node distance from shared sources.

    For nodes ``i`` and ``j`` with distance estimates to a common source
    ``l``, the triangle inequality gives ``|d[i,l] - d[j,l]|`` as a lower
    bound and ``d[i,l] + d[j,l]`` as an upper bound on the node-to-node
    distance.  Taking the tightest bound over all shared sources and the
    midpoint of the resulting interval yields the completed estimate.

    Raises
    ------
    DataError
        If some node pair has no source observed validly by both.
    """
    d = np.where(obs.valid, obs.distances, 0.0)
    v = obs.valid
    both = v[:, None, :] & v[None, :, :]  # (N, N, K)
    shared = both.any(axis=2)
    np.fill_diagonal(shared, True)
    if not shared.all():
        i, j = np.argwhere(~shared)[0]
        raise DataError(f"node pair ({i}, {j}) shares no valid source")
    diffs = np.abs(d[:, None, :] - d[None, :, :])
    sums = d[:, None, :] + d[None, :, :]
    lower = np.where(both, diffs, -np.inf).max(axis=2)
    upper = np.where(both, sums, np.inf).min(axis=2)
    d_hat = 0.5 * (lower + upper)
    for m in (lower, upper, d_hat):
        np.fill_diagonal(m, 0.0)
    return CompletedDistanceMatrix(d_hat=d_hat, lower=lower, upper=upper)


def classical_mds(d_hat, target_dim: int = 2) -> np.ndarray:
    """Embed a symmetric distance matrix in the plane by classical MDS.

    Double-centers the squared-distance matrix, ``B = -1/2 J D^2 J`` with
    ``J = I - 1/n``, eigendecomposes ``B``, and builds coordinates from the
    ``target_dim`` largest eigenvalues.  Completed distance matrices are
    generally non-Euclidean, so trailing negative eigenvalues are expected
    and ignored; any negative value among the leading ones is clamped to
    zero.  The output is centered at the origin.

    Raises
    ------
    DataError
        If the matrix is not symmetric, not hollow, or has negative entries.
    NumericalError
        If fewer than ``target_dim`` eigenvalues are positive
        (degenerate, e.g. collinear configuration).
    """
    d = np.asarray(d_hat, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise DataError(f"distance matrix must be square, got shape {d.shape}")
    n = d.shape[0]
    if n < target_dim + 1:
        raise DataError(f"need at least {target_dim + 1} points, got {n}")
    scale = max(1.0, np.abs(d).max())
    if np.abs(d - d.T).max() > 1e-9 * scale:
        raise DataError("distance matrix is not symmetric")
    if np.abs(np.diag(d)).max() > 1e-9 * scale:
        raise DataError("distance matrix diagonal is not zero")
    if d.min() < 0:
        raise DataError("distance matrix has negative entries")

    j = np.eye(n) - np.ones((n, n)) / n
    b = -0.5 * j @ (d**2) @ j
    evals, evecs = np.linalg.eigh(b)  # ascending
    evals = evals[::-1]
    evecs = evecs[:, ::-1]
    if evals[0] <= 0 or evals[target_dim - 1] <= 1e-12 * evals[0]:
        raise NumericalError(
            f"distance matrix is degenerate: fewer than {target_dim} positive eigenvalues"
        )
    lead = np.maximum(evals[:target_dim], 0.0)
    return evecs[:, :target_dim] * np.sqrt(lead)
