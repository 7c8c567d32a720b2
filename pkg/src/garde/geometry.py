"""Core domain types, the calibration cost, residuals, and rigid alignment.

Positions are plain float arrays throughout: a single point has shape
``(2,)`` and a point set has shape ``(n, 2)``, with coordinates in meters.
All containers are immutable after construction and safe to share between
threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from garde.errors import DataError, NumericalError

__all__ = [
    "Geometry",
    "ObservationSet",
    "RigidTransform",
    "distance",
    "pairwise_distances",
    "cost",
    "residuals",
    "mean_abs_residual",
    "align",
    "calibration_error",
    "assert_calibratable",
]


def _point_array(points, name: str) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DataError(f"{name} must have shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite coordinates")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Geometry:
    """Node and source positions sharing one coordinate frame.

    Indices into ``nodes`` and ``sources`` are stable identifiers; no
    operation in this package reorders them.
    """

    nodes: np.ndarray
    sources: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen(_point_array(self.nodes, "nodes")))
        object.__setattr__(self, "sources", _frozen(_point_array(self.sources, "sources")))

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def source_count(self) -> int:
        return self.sources.shape[0]

    def all_points(self) -> np.ndarray:
        """All positions stacked into one ``(N + K, 2)`` array, nodes first."""
        return np.vstack([self.nodes, self.sources])


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Distance estimates between every node (row) and source (column).

    ``valid`` marks usable entries; ``False`` means the estimate is missing
    or was flagged out of range.  Valid entries must be finite and strictly
    positive; masked entries may hold any value and are never read.
    """

    distances: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        dist = np.asarray(self.distances, dtype=float)
        if dist.ndim != 2:
            raise DataError(f"distances must be a 2-D matrix, got shape {dist.shape}")
        if self.valid is None:
            valid = np.ones(dist.shape, dtype=bool)
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != dist.shape:
                raise DataError(
                    f"valid mask shape {valid.shape} does not match distances {dist.shape}"
                )
        used = dist[valid]
        if used.size and not (np.all(np.isfinite(used)) and np.all(used > 0)):
            raise DataError("valid distance entries must be finite and > 0")
        object.__setattr__(self, "distances", _frozen(dist))
        object.__setattr__(self, "valid", _frozen(valid))

    @property
    def node_count(self) -> int:
        return self.distances.shape[0]

    @property
    def source_count(self) -> int:
        return self.distances.shape[1]

    def restrict_sources(self, indices) -> "ObservationSet":
        """Observation subset containing only the given source columns."""
        idx = np.asarray(indices, dtype=int)
        if idx.ndim != 1:
            raise DataError("source indices must be a 1-D sequence")
        if idx.size and (idx.min() < 0 or idx.max() >= self.source_count):
            raise DataError("source index out of range")
        return ObservationSet(self.distances[:, idx], self.valid[:, idx])


def assert_calibratable(obs: ObservationSet, min_nodes: int = 4, min_sources: int = 4) -> None:
    """Validate that ``obs`` is solvable by a full calibration run.

    Requires at least ``min_nodes`` rows and ``min_sources`` columns, and
    at least 3 valid entries in every row and column (2-D localization
    needs 3 anchors after reference subtraction).

    Raises
    ------
    DataError
        Naming the first offending row or column.
    """
    if obs.node_count < min_nodes:
        raise DataError(f"calibration needs >= {min_nodes} nodes, got {obs.node_count}")
    if obs.source_count < min_sources:
        raise DataError(f"calibration needs >= {min_sources} sources, got {obs.source_count}")
    row_counts = obs.valid.sum(axis=1)
    col_counts = obs.valid.sum(axis=0)
    bad_rows = np.flatnonzero(row_counts < 3)
    if bad_rows.size:
        n = bad_rows[0]
        raise DataError(
            f"node row {n} has only {row_counts[n]} valid observations (needs >= 3)"
        )
    bad_cols = np.flatnonzero(col_counts < 3)
    if bad_cols.size:
        k = bad_cols[0]
        raise DataError(
            f"source column {k} has only {col_counts[k]} valid observations (needs >= 3)"
        )


def distance(p, q) -> float:
    """Euclidean distance between two points, in meters."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (2,) or q.shape != (2,):
        raise DataError("distance expects two points of shape (2,)")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise DataError("distance expects finite coordinates")
    return float(np.hypot(p[0] - q[0], p[1] - q[1]))


def pairwise_distances(points_a, points_b) -> np.ndarray:
    """Matrix of distances between two point sets, shape ``(len(a), len(b))``."""
    a = _point_array(points_a, "points_a")
    b = _point_array(points_b, "points_b")
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _check_dims(geometry: Geometry, obs: ObservationSet) -> None:
    if geometry.node_count != obs.node_count or geometry.source_count != obs.source_count:
        raise DataError(
            f"geometry ({geometry.node_count} nodes, {geometry.source_count} sources) "
            f"does not match observations ({obs.node_count} x {obs.source_count})"
        )


def cost(geometry: Geometry, obs: ObservationSet) -> float:
    """Sum of squared differences between squared observed and model distances.

    Over valid entries only:  ``sum_k sum_n (d_hat[n,k]^2 - |p_n - o_k|^2)^2``
    (units m^4).  Zero exactly when every valid squared-distance residual
    vanishes.
    """
    _check_dims(geometry, obs)
    model = pairwise_distances(geometry.nodes, geometry.sources)
    terms = np.where(obs.valid, obs.distances**2 - model**2, 0.0)
    return float(np.sum(terms**2))


def residuals(geometry: Geometry, obs: ObservationSet) -> np.ndarray:
    """Distance residuals ``d_hat[n,k] - |p_n - o_k|`` with NaN at masked entries."""
    _check_dims(geometry, obs)
    model = pairwise_distances(geometry.nodes, geometry.sources)
    return np.where(obs.valid, obs.distances - model, np.nan)


def mean_abs_residual(geometry: Geometry, obs: ObservationSet) -> float:
    """Mean absolute distance residual over valid entries (meters)."""
    _check_dims(geometry, obs)
    if not obs.valid.any():
        raise DataError("observation set has no valid entries")
    model = pairwise_distances(geometry.nodes, geometry.sources)
    return float(np.abs(obs.distances - model)[obs.valid].mean())


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation (optionally a reflection) plus translation, ``y = R x + t``."""

    rotation: np.ndarray
    translation: np.ndarray
    reflected: bool

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        tr = np.asarray(self.translation, dtype=float)
        if rot.shape != (2, 2) or tr.shape != (2,):
            raise DataError("rotation must be 2x2 and translation length 2")
        if not np.allclose(rot.T @ rot, np.eye(2), atol=1e-10):
            raise DataError("rotation matrix is not orthogonal within 1e-10")
        det = float(np.linalg.det(rot))
        expected = -1.0 if self.reflected else 1.0
        if abs(det - expected) > 1e-8:
            raise DataError(f"determinant {det} inconsistent with reflected={self.reflected}")
        object.__setattr__(self, "rotation", _frozen(rot))
        object.__setattr__(self, "translation", _frozen(tr))

    def apply(self, points) -> np.ndarray:
        """Transform one point of shape ``(2,)`` or a set of shape ``(n, 2)``."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation


def _kabsch(x: np.ndarray, y: np.ndarray, allow_reflection: bool) -> tuple[np.ndarray, np.ndarray]:
    """Optimal (rotation, translation) mapping point set x onto y.

    Lean internal kernel shared by :func:`align` and the calibration hot
    loop; inputs must already be validated ``(n, 2)`` float arrays.
    """
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    xc = x - mx
    yc = y - my
    tiny = 1e-12 * max(1.0, float(np.abs(x).max()), float(np.abs(y).max()))
    if float(np.abs(xc).max()) <= tiny or float(np.abs(yc).max()) <= tiny:
        raise NumericalError("alignment is degenerate: all points coincide")
    u, _, vt = np.linalg.svd(xc.T @ yc)
    rot = vt.T @ u.T
    if rot[0, 0] * rot[1, 1] - rot[0, 1] * rot[1, 0] < 0 and not allow_reflection:
        rot = vt.T @ np.diag([1.0, -1.0]) @ u.T
    return rot, my - rot @ mx


def align(moving, reference, allow_reflection: bool = True) -> tuple[RigidTransform, np.ndarray]:
    """Optimal rigid mapping of one point set onto another (orthogonal Procrustes).

    Finds the rotation (and, if allowed, reflection) plus translation
    minimizing the mean squared distance between transformed ``moving``
    points and ``reference`` points with index-wise correspondence.

    Parameters
    ----------
    moving, reference : (n, 2) arrays with n >= 2.
    allow_reflection : bool
        When False the rotation determinant is constrained to +1.

    Returns
    -------
    (transform, aligned) : the optimal :class:`RigidTransform` and the
        transformed moving points.

    Raises
    ------
    NumericalError
        If either point set is degenerate (all points coincide).
    """
    x = _point_array(moving, "moving")
    y = _point_array(reference, "reference")
    if x.shape != y.shape:
        raise DataError(f"point sets differ in shape: {x.shape} vs {y.shape}")
    if x.shape[0] < 2:
        raise DataError("alignment needs at least 2 points")
    rot, translation = _kabsch(x, y, allow_reflection)
    reflected = bool(np.linalg.det(rot) < 0)
    transform = RigidTransform(rotation=rot, translation=translation, reflected=reflected)
    return transform, transform.apply(x)


def _as_point_sets(estimated, truth) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(estimated, Geometry) != isinstance(truth, Geometry):
        raise DataError("estimate and truth must both be Geometry or both be point sets")
    if isinstance(estimated, Geometry):
        if estimated.node_count != truth.node_count or \
                estimated.source_count != truth.source_count:
            raise DataError("estimate and truth differ in node or source counts")
        return estimated.all_points(), truth.all_points()
    a = _point_array(estimated, "estimated")
    b = _point_array(truth, "truth")
    if a.shape != b.shape:
        raise DataError(f"point counts differ: {a.shape[0]} vs {b.shape[0]}")
    return a, b


def calibration_error(estimated, truth, allow_reflection: bool = True) -> float:
    """RMSE between two geometries after an optimal rigid alignment (meters).

    Accepts either two :class:`Geometry` objects (compared over nodes and
    sources jointly, in one shared frame) or two plain point sets.  The
    default allows reflections because distance-only observations cannot
    resolve them; pass ``allow_reflection=False`` to restrict the mapping
    to proper rotations.
    """
    a, b = _as_point_sets(estimated, truth)
    _, aligned = align(a, b, allow_reflection=allow_reflection)
    return float(np.sqrt(np.mean(np.sum((aligned - b) ** 2, axis=1))))
