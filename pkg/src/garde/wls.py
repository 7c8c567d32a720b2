"""Anchor-based point localization by reference subtraction and weighted least squares.

One unknown point is located from distances to at least three known
anchors.  The anchor with the smallest distance estimate becomes the
reference: subtracting its circle equation from the others linearizes the
system, which is then solved by weighted least squares with diagonal
weights ``1 / d^2`` so that short (more reliable) ranges dominate.

The same solver localizes sources from node positions and nodes from
source positions; only the roles of rows and columns change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from garde.errors import DataError, NumericalError
from garde.geometry import ObservationSet, _frozen, _point_array

__all__ = [
    "WEIGHT_DIST_FLOOR",
    "WlsProblem",
    "select_reference",
    "wls_solve",
    "localize_all_sources",
    "localize_all_nodes",
]

# Weighting distances are clamped here before squaring so that a zero or
# near-zero model distance cannot blow up the 1/d^2 weight.
WEIGHT_DIST_FLOOR = 1e-3

# Reciprocal condition number below which the normal matrix is treated as
# singular (collinear anchor configuration).
_RCOND_MIN = 1e-12


def select_reference(dists) -> int:
    """Index of the smallest distance estimate; ties go to the lowest index."""
    d = np.asarray(dists, dtype=float)
    if d.ndim != 1 or d.size == 0:
        raise DataError("reference selection needs a nonempty 1-D distance list")
    return int(np.argmin(d))


@dataclass(frozen=True, eq=False)
class WlsProblem:
    """One localization problem: anchors, ranges, and weighting distances.

    ``weight_dists`` holds the distances used to build the ``1 / d^2``
    weights; they may be the observed ranges themselves or model distances
    from a current geometry estimate, depending on the caller.
    ``reference_index`` is always the argmin of ``dists`` (lowest index on
    ties); it is computed when omitted and validated when supplied.
    """

    anchors: np.ndarray
    dists: np.ndarray
    weight_dists: np.ndarray
    reference_index: int | None = None

    def __post_init__(self):
        anchors = _point_array(self.anchors, "anchors")
        if anchors.shape[0] < 3:
            raise DataError(f"need at least 3 anchors, got {anchors.shape[0]}")
        dists = np.asarray(self.dists, dtype=float)
        wdists = np.asarray(self.weight_dists, dtype=float)
        if dists.shape != (anchors.shape[0],) or wdists.shape != dists.shape:
            raise DataError("dists and weight_dists must match the anchor count")
        for name, arr in (("dists", dists), ("weight_dists", wdists)):
            if not (np.all(np.isfinite(arr)) and np.all(arr > 0)):
                raise DataError(f"{name} must be finite and > 0")
        ref = select_reference(dists)
        if self.reference_index is not None and int(self.reference_index) != ref:
            raise DataError(
                f"reference_index {self.reference_index} is not the argmin ({ref})"
            )
        object.__setattr__(self, "anchors", _frozen(anchors))
        object.__setattr__(self, "dists", _frozen(dists))
        object.__setattr__(self, "weight_dists", _frozen(wdists))
        object.__setattr__(self, "reference_index", ref)


def _solve_prepared(anchors, ref_dists, d2, weights, label) -> np.ndarray:
    """Core batched solve on pre-masked inputs.

    Parameters
    ----------
    anchors : (M, 2)
    ref_dists : (M, U)
        Distances with invalid entries replaced by +inf (reference choice).
    d2 : (M, U)
        Squared distances; invalid entries may hold any finite value.
    weights : (U, M)
        Final row weights, zero at invalid entries.
    """
    m = anchors.shape[0]
    u = d2.shape[1]
    ref = np.argmin(ref_dists, axis=0)  # (U,)
    ref_pos = anchors[ref]  # (U, 2)
    rel = anchors[None, :, :] - ref_pos[:, None, :]  # (U, M, 2)
    dref2 = d2[ref, np.arange(u)]  # (U,)
    rhs_terms = dref2[:, None] + np.einsum("umi,umi->um", rel, rel) - d2.T  # (U, M)
    rows = 2.0 * rel

    a = np.einsum("um,umi,umj->uij", weights, rows, rows)  # (U, 2, 2)
    rhs = np.einsum("um,umi,um->ui", weights, rows, rhs_terms)  # (U, 2)

    # Eigenvalues of the symmetric 2x2 normal matrices, in closed form.
    axx, axy, ayy = a[:, 0, 0], a[:, 0, 1], a[:, 1, 1]
    mean = 0.5 * (axx + ayy)
    disc = np.hypot(0.5 * (axx - ayy), axy)
    lo, hi = mean - disc, mean + disc
    bad = (hi <= 0) | (lo <= _RCOND_MIN * hi)
    if bad.any():
        raise NumericalError(
            f"{label} {np.flatnonzero(bad)[0]}: singular anchor configuration "
            "(collinear anchors)"
        )

    det = axx * ayy - axy * axy
    x = (ayy * rhs[:, 0] - axy * rhs[:, 1]) / det
    y = (axx * rhs[:, 1] - axy * rhs[:, 0]) / det
    return np.stack([x, y], axis=1) + ref_pos


def _check_counts(valid, label) -> None:
    counts = valid.sum(axis=0)
    short = counts < 3
    if short.any():
        u = int(np.flatnonzero(short)[0])
        raise DataError(f"{label} {u} has only {counts[u]} valid anchors (needs >= 3)")


def _prepared_weights(weight_dists, valid) -> np.ndarray:
    wd = np.maximum(weight_dists, WEIGHT_DIST_FLOOR)
    return (valid / (wd * wd)).T


def solve_point_batch(anchors, dists, weight_dists, valid, label: str = "column") -> np.ndarray:
    """Solve many independent localization problems sharing one anchor set.

    Parameters
    ----------
    anchors : (M, 2) array
        Known positions.
    dists, weight_dists, valid : (M, U) arrays
        Per-problem ranges, weighting distances, and validity mask; each of
        the U columns is solved independently using its valid rows only.
    label : str
        Problem name used in error messages ("source column", "node row").

    Returns
    -------
    (U, 2) array of localized points.

    Notes
    -----
    Per column the reference anchor is the valid argmin of the ranges.  The
    linear system uses coordinates relative to the reference anchor, giving
    rows ``2 * p_m`` and right-hand side ``d_ref^2 + |p_m|^2 - d_m^2``.
    Invalid rows enter with zero weight, and the reference row contributes
    identically zero, so the stacked 2x2 normal equations can be assembled
    for all columns at once.
    """
    anchors = np.asarray(anchors, dtype=float)
    dists = np.asarray(dists, dtype=float)
    weight_dists = np.asarray(weight_dists, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    if dists.shape[0] != anchors.shape[0] or dists.shape != weight_dists.shape \
            or dists.shape != valid.shape:
        raise DataError("anchor, distance, weight, and mask shapes are inconsistent")
    _check_counts(valid, label)
    masked = np.where(valid, dists, np.inf)
    d2 = np.where(valid, dists, 1.0) ** 2  # masked values never used
    weights = _prepared_weights(weight_dists, valid)
    return _solve_prepared(anchors, masked, d2, weights, label)


def wls_solve(problem: WlsProblem) -> np.ndarray:
    """Solve one localization problem; returns the estimated point ``(2,)``.

    Raises
    ------
    NumericalError
        If the anchors are collinear through the reference (normal matrix
        with reciprocal condition number below 1e-12).
    """
    valid = np.ones((problem.anchors.shape[0], 1), dtype=bool)
    out = solve_point_batch(
        problem.anchors,
        problem.dists[:, None],
        problem.weight_dists[:, None],
        valid,
        label="problem",
    )
    return out[0]


def localize_all_sources(node_positions, obs: ObservationSet) -> np.ndarray:
    """Localize every source from the node positions, one column at a time.

    Both the ranges and the ``1 / d^2`` weighting distances are the
    observed values for that column; masked entries are skipped.

    Returns a ``(K, 2)`` array.  Errors carry the source index.
    """
    nodes = _point_array(node_positions, "node_positions")
    if nodes.shape[0] != obs.node_count:
        raise DataError(
            f"got {nodes.shape[0]} node positions for {obs.node_count} observation rows"
        )
    return solve_point_batch(
        nodes, obs.distances, obs.distances, obs.valid, label="source column"
    )


def localize_all_nodes(source_positions, obs: ObservationSet, weight_dists) -> np.ndarray:
    """Localize every node from the source positions, one row at a time.

    The ranges are the observed values for that row; the weighting
    distances are supplied by the caller (typically model distances
    ``|p_n - o_k|`` from the current geometry estimate), as an
    ``(N, K)`` array aligned with ``obs``.

    Returns an ``(N, 2)`` array.  Errors carry the node index.
    """
    sources = _point_array(source_positions, "source_positions")
    if sources.shape[0] != obs.source_count:
        raise DataError(
            f"got {sources.shape[0]} source positions for {obs.source_count} observation columns"
        )
    wd = np.asarray(weight_dists, dtype=float)
    if wd.shape != obs.distances.shape:
        raise DataError(
            f"weight_dists shape {wd.shape} does not match observations "
            f"({obs.node_count} x {obs.source_count})"
        )
    return solve_point_batch(
        sources, obs.distances.T, wd.T, obs.valid.T, label="node row"
    )
