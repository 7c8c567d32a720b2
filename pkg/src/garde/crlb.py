"""Cramér–Rao lower bounds on position-estimate RMSE.

Distance errors are modeled as zero-mean Gaussian with a common standard
deviation ``sigma_d``.  For one unknown point observed from known anchors,
the expected curvature of the log-likelihood gives the Fisher information
terms

    gamma_xx = -(1/sigma_d^2) * sum_m (a_m,x - p_x)^2 / |a_m - p|^2
    gamma_yy = -(1/sigma_d^2) * sum_m (a_m,y - p_y)^2 / |a_m - p|^2
    gamma_xy = -(1/sigma_d^2) * sum_m (a_m,x - p_x)(a_m,y - p_y) / |a_m - p|^2

and the bound ``RMSE >= sqrt((gamma_xx + gamma_yy) /
(gamma_xy^2 - gamma_xx * gamma_yy))``.  Sources are bounded from the node
positions, nodes from the source positions; each bound conditions on the
other set being known.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from garde.errors import DataError, NumericalError
from garde.geometry import Geometry, _point_array

__all__ = [
    "CrlbEntry",
    "CrlbReport",
    "gammas_for_source",
    "source_rmse_bound",
    "node_rmse_bound",
    "crlb_report",
]


def _gammas(anchors: np.ndarray, point: np.ndarray, sigma_d: float) -> tuple[float, float, float]:
    if sigma_d <= 0:
        raise DataError(f"sigma_d must be > 0, got {sigma_d}")
    diff = anchors - point
    r2 = np.einsum("mi,mi->m", diff, diff)
    if np.any(r2 <= 0):
        m = int(np.flatnonzero(r2 <= 0)[0])
        raise NumericalError(f"anchor {m} coincides with the evaluated position")
    inv = 1.0 / sigma_d**2
    gxx = -inv * float(np.sum(diff[:, 0] ** 2 / r2))
    gyy = -inv * float(np.sum(diff[:, 1] ** 2 / r2))
    gxy = -inv * float(np.sum(diff[:, 0] * diff[:, 1] / r2))
    return gxx, gyy, gxy


def _rmse_bound(gxx: float, gyy: float, gxy: float) -> float:
    denom = gxy**2 - gxx * gyy
    scale = gxy**2 + gxx * gyy  # both addends >= 0
    if denom >= -1e-12 * max(scale, np.finfo(float).tiny):
        raise NumericalError(
            "singular information matrix (anchors collinear with the position)"
        )
    return float(np.sqrt((gxx + gyy) / denom))


def gammas_for_source(node_positions, source, sigma_d: float) -> tuple[float, float, float]:
    """Fisher information terms ``(gamma_xx, gamma_yy, gamma_xy)`` for one
    source position observed from the given nodes.

    Raises :class:`NumericalError` if a node coincides with the source.
    """
    nodes = _point_array(node_positions, "node_positions")
    src = np.asarray(source, dtype=float).reshape(2)
    return _gammas(nodes, src, sigma_d)


def source_rmse_bound(node_positions, source, sigma_d: float) -> float:
    """Lower bound on the RMSE of a source-position estimate (meters).

    Raises :class:`NumericalError` when the information matrix is singular,
    e.g. all nodes collinear with the source.
    """
    return _rmse_bound(*gammas_for_source(node_positions, source, sigma_d))


def node_rmse_bound(source_positions, node, sigma_d: float) -> float:
    """Lower bound on the RMSE of a node-position estimate (meters).

    Same bound as :func:`source_rmse_bound` with the roles exchanged: the
    sums run over the observed sources.
    """
    sources = _point_array(source_positions, "source_positions")
    pt = np.asarray(node, dtype=float).reshape(2)
    return _rmse_bound(*_gammas(sources, pt, sigma_d))


@dataclass(frozen=True)
class CrlbEntry:
    """Bound for one position; ``error`` is set (and the numeric fields are
    NaN where undefined) when that position's bound could not be computed."""

    kind: str  # "source" or "node"
    index: int
    gamma_xx: float
    gamma_yy: float
    gamma_xy: float
    rmse_bound: float
    error: str | None = None


@dataclass(frozen=True)
class CrlbReport:
    """Per-position lower bounds for every source and every node."""

    entries: tuple[CrlbEntry, ...]
    sigma_d: float

    def bounds(self, kind: str) -> np.ndarray:
        """RMSE bounds for one position class, NaN where computation failed."""
        return np.array(
            [e.rmse_bound for e in self.entries if e.kind == kind], dtype=float
        )


def _entry(kind: str, index: int, anchors: np.ndarray, point: np.ndarray,
           sigma_d: float) -> CrlbEntry:
    nan = float("nan")
    try:
        if anchors.shape[0] == 0:
            raise DataError("no valid observations for this position")
        gxx, gyy, gxy = _gammas(anchors, point, sigma_d)
    except (DataError, NumericalError) as exc:
        return CrlbEntry(kind, index, nan, nan, nan, nan, error=str(exc))
    try:
        bound = _rmse_bound(gxx, gyy, gxy)
    except NumericalError as exc:
        return CrlbEntry(kind, index, gxx, gyy, gxy, nan, error=str(exc))
    return CrlbEntry(kind, index, gxx, gyy, gxy, bound)


def crlb_report(geometry: Geometry, sigma_d: float, valid=None) -> CrlbReport:
    """Bounds for every source (from all nodes) and every node (from all sources).

    When ``valid`` is given (an ``(N, K)`` boolean mask), only observed
    node/source pairs enter the information sums, so the bound conditions
    on the realized observation pattern.  Per-position failures (coincident
    pairs, collinear anchors) are recorded in their entry; the rest of the
    report is still produced.
    """
    if sigma_d <= 0:
        raise DataError(f"sigma_d must be > 0, got {sigma_d}")
    if valid is None:
        mask = np.ones((geometry.node_count, geometry.source_count), dtype=bool)
    else:
        mask = np.asarray(valid, dtype=bool)
        if mask.shape != (geometry.node_count, geometry.source_count):
            raise DataError(
                f"valid mask shape {mask.shape} does not match geometry "
                f"({geometry.node_count} x {geometry.source_count})"
            )
    entries = []
    for k in range(geometry.source_count):
        anchors = geometry.nodes[mask[:, k]]
        entries.append(_entry("source", k, anchors, geometry.sources[k], sigma_d))
    for n in range(geometry.node_count):
        anchors = geometry.sources[mask[n, :]]
        entries.append(_entry("node", n, anchors, geometry.nodes[n], sigma_d))
    return CrlbReport(entries=tuple(entries), sigma_d=sigma_d)
