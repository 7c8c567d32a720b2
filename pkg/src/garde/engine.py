"""The full calibration loop: MDS start, alternating WLS refinement, annealed restarts.

Starting from the MDS embedding of the completed inter-node distances, the
engine alternates between re-localizing nodes from the best-fitting subset
of source estimates and re-localizing sources from the node estimates,
blending each fresh solution with the previous one.  Around that inner
loop, annealed random restarts perturb the best geometry found so far with
shrinking noise to escape poor local optima; the geometry with the
smallest mean absolute distance residual wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from garde.errors import DataError, GardeError, NumericalError
from garde.geometry import (
    Geometry,
    ObservationSet,
    _kabsch,
    assert_calibratable,
    mean_abs_residual,
)
from garde.mds import classical_mds, complete_distances
from garde.wls import (
    WEIGHT_DIST_FLOOR,
    _prepared_weights,
    _solve_prepared,
    localize_all_sources,
)

__all__ = [
    "GardeConfig",
    "TraceRecord",
    "CalibrationResult",
    "fit_select",
    "opt_select",
    "iterate",
    "calibrate",
]


@dataclass(frozen=True)
class GardeConfig:
    """Tuning knobs of the calibration engine.

    ``alpha`` and ``beta`` are the blend weights kept on the *previous*
    node and source estimates in each refinement pass.  ``mu0`` and
    ``mu_decay`` define the annealing perturbation scale
    ``mu(g) = mu0 * mu_decay**g`` for round ``g``.  ``fit_fraction`` is the
    share of sources retained by residual-based selection, never fewer
    than ``min_fit_sources``.  Results are a pure function of the inputs
    and ``rng_seed``.
    """

    alpha: float = 0.2
    beta: float = 0.2
    num_iterations: int = 30
    num_annealing: int = 30
    mu0: float = 1.0
    mu_decay: float = 0.6
    fit_fraction: float = 0.8
    min_fit_sources: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        if not (0 <= self.alpha < 1 and 0 <= self.beta < 1):
            raise DataError("alpha and beta must lie in [0, 1)")
        if self.num_iterations < 0 or self.num_annealing < 0:
            raise DataError("iteration and annealing counts must be >= 0")
        if self.mu0 < 0:
            raise DataError("mu0 must be >= 0")
        if not 0 < self.mu_decay < 1:
            raise DataError("mu_decay must lie in (0, 1)")
        if not 0 < self.fit_fraction <= 1:
            raise DataError("fit_fraction must lie in (0, 1]")
        if self.min_fit_sources < 4:
            raise DataError("min_fit_sources must be >= 4")


@dataclass(frozen=True)
class TraceRecord:
    """One annealing round: candidate score, best score so far, and the
    perturbation scale applied at the end of the round.  Round 0 is the
    initial refinement (no perturbation); a NaN candidate score marks a
    round whose refinement hit a degenerate configuration and was
    rejected."""

    round: int
    candidate_score: float
    best_score: float
    mu: float


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Best geometry found, its source subset, score, and per-round trace.

    ``fit_score`` is the mean absolute distance residual of ``geometry``
    against the observations, recomputed from the returned geometry.
    """

    geometry: Geometry
    selected_sources: np.ndarray
    fit_score: float
    trace: tuple[TraceRecord, ...] = field(default_factory=tuple)


class _Plan:
    """Observation-dependent quantities reused across refinement passes."""

    def __init__(self, obs: ObservationSet, config: GardeConfig):
        if obs.source_count < config.min_fit_sources:
            raise DataError(
                f"need at least {config.min_fit_sources} sources, got {obs.source_count}"
            )
        self.config = config
        self.distances = obs.distances
        self.valid = obs.valid
        self.valid_f = obs.valid.astype(float)
        self.col_counts = obs.valid.sum(axis=0)
        # Source localization: anchors are the nodes, ranges and weights are
        # the observed distances; everything but the anchors is fixed.
        self.src_masked = np.where(obs.valid, obs.distances, np.inf)
        self.src_d2 = np.where(obs.valid, obs.distances, 1.0) ** 2
        self.src_weights = _prepared_weights(obs.distances, obs.valid)
        # Node localization: anchors are selected sources; the ranges per
        # node row are fixed, the weights change with the model distances.
        self.node_masked = self.src_masked.T.copy()
        self.node_d2 = self.src_d2.T.copy()
        self.valid_t = obs.valid.T.copy()
        n_keep = max(config.min_fit_sources,
                     math.ceil(config.fit_fraction * obs.source_count))
        self.n_keep = min(n_keep, obs.source_count)

    def model_distances(self, nodes, sources) -> np.ndarray:
        diff = nodes[:, None, :] - sources[None, :, :]
        return np.sqrt(np.einsum("nki,nki->nk", diff, diff))

    def fit_scores(self, model) -> np.ndarray:
        total = np.einsum("nk,nk->k", self.valid_f, np.abs(self.distances - model))
        return np.where(self.col_counts > 0, total / np.maximum(self.col_counts, 1), np.inf)

    def select(self, model) -> np.ndarray:
        chosen = np.argsort(self.fit_scores(model), kind="stable")[: self.n_keep]
        return np.sort(chosen)

    def mean_abs_residual(self, nodes, sources) -> float:
        model = self.model_distances(nodes, sources)
        total = np.einsum("nk,nk->", self.valid_f, np.abs(self.distances - model))
        return float(total / self.valid.sum())

    def run_pass(self, nodes, sources) -> tuple[np.ndarray, np.ndarray]:
        config = self.config
        model = self.model_distances(nodes, sources)
        sel = self.select(model)

        sel_valid = self.valid_t[sel]
        counts = sel_valid.sum(axis=0)
        if (counts < 3).any():
            n = int(np.flatnonzero(counts < 3)[0])
            raise DataError(
                f"node row {n} has only {counts[n]} valid anchors (needs >= 3)"
            )
        node_weights = (sel_valid / np.maximum(model[:, sel].T, WEIGHT_DIST_FLOOR) ** 2).T
        fresh_nodes = _solve_prepared(
            sources[sel], self.node_masked[sel], self.node_d2[sel], node_weights,
            label="node row",
        )
        rot, shift = _kabsch(fresh_nodes, nodes, allow_reflection=False)
        mapped = fresh_nodes @ rot.T + shift
        nodes = config.alpha * nodes + (1.0 - config.alpha) * mapped

        fresh_sources = _solve_prepared(
            nodes, self.src_masked, self.src_d2, self.src_weights,
            label="source column",
        )
        sources = config.beta * sources + (1.0 - config.beta) * fresh_sources
        return nodes, sources

    def refine(self, nodes, sources) -> tuple[np.ndarray, np.ndarray]:
        for i in range(self.config.num_iterations):
            try:
                nodes, sources = self.run_pass(nodes, sources)
            except GardeError as exc:
                raise type(exc)(f"refinement pass {i}: {exc}") from exc
        return nodes, sources


def fit_select(geometry: Geometry, obs: ObservationSet, config: GardeConfig) -> np.ndarray:
    """Indices of the sources whose observations best fit the geometry.

    Each source is scored by the mean absolute residual of its column;
    the ``ceil(fit_fraction * K)`` best-scoring sources are kept (never
    fewer than ``min_fit_sources``), ties broken toward lower indices.
    Returns indices in ascending order.
    """
    if geometry.node_count != obs.node_count or geometry.source_count != obs.source_count:
        raise DataError("geometry does not match observation dimensions")
    plan = _Plan(obs, config)
    return plan.select(plan.model_distances(geometry.nodes, geometry.sources))


def opt_select(candidate: Geometry, incumbent: Geometry, obs: ObservationSet) -> Geometry:
    """Whichever geometry has the smaller mean absolute residual; ties keep
    the incumbent."""
    if mean_abs_residual(candidate, obs) < mean_abs_residual(incumbent, obs):
        return candidate
    return incumbent


def iterate(geometry: Geometry, obs: ObservationSet, config: GardeConfig) -> Geometry:
    """Run ``config.num_iterations`` alternating refinement passes.

    Each pass: select the best-fitting sources; re-localize the nodes from
    them (weights from current model distances); rigidly map the fresh
    node set back onto the current frame (no reflection: both come from
    the same run); blend with weight ``alpha`` on the old nodes; then
    re-localize all sources from the updated nodes (weights from observed
    distances) and blend with weight ``beta`` on the old sources.
    Deterministic given its inputs; singularities propagate with the pass
    number attached.
    """
    if geometry.node_count != obs.node_count or geometry.source_count != obs.source_count:
        raise DataError("geometry does not match observation dimensions")
    plan = _Plan(obs, config)
    nodes, sources = plan.refine(geometry.nodes, geometry.sources)
    return Geometry(nodes, sources)


def calibrate(obs: ObservationSet, config: GardeConfig | None = None) -> CalibrationResult:
    """Calibrate node and source positions from distance observations.

    Pipeline: complete the inter-node distances and embed them with
    classical MDS for initial node positions; localize all sources by WLS;
    refine with :func:`iterate`; then run ``config.num_annealing`` rounds
    that each refine the working geometry, keep the better of candidate
    and best-so-far, and restart from the best geometry perturbed by
    ``mu(g) = mu0 * mu_decay**g`` times a standard normal draw per
    coordinate.

    Reproducibility: round ``g`` (1-based) draws its perturbation from
    ``numpy.random.default_rng`` seeded with child ``g - 1`` of
    ``numpy.random.SeedSequence(config.rng_seed).spawn(...)``, node
    coordinates first, then sources.

    Raises
    ------
    DataError
        If the observations are not solvable (see
        :func:`garde.geometry.assert_calibratable`).
    NumericalError
        If the MDS initialization or the initial source localization is
        degenerate, naming the failing stage.  A singular configuration
        during refinement only rejects that round's candidate (recorded in
        the trace with a NaN score); the initial refinement falls back to
        the unrefined starting geometry.
    """
    if config is None:
        config = GardeConfig()
    assert_calibratable(obs)
    plan = _Plan(obs, config)

    try:
        completed = complete_distances(obs)
        nodes0 = classical_mds(completed.d_hat)
    except GardeError as exc:
        raise type(exc)(f"mds-init: {exc}") from exc
    try:
        sources0 = localize_all_sources(nodes0, obs)
    except GardeError as exc:
        raise type(exc)(f"initial-sources: {exc}") from exc

    try:
        best = plan.refine(nodes0, sources0)
    except NumericalError:
        # The uncontrolled alternating refinement can diverge into a
        # degenerate configuration; keep the raw initialization and let
        # the annealed restarts recover.
        best = (nodes0, sources0)
    best_score = plan.mean_abs_residual(*best)
    trace = [TraceRecord(round=0, candidate_score=best_score, best_score=best_score, mu=0.0)]

    seeds = np.random.SeedSequence(config.rng_seed).spawn(config.num_annealing)
    work = best
    for g in range(1, config.num_annealing + 1):
        mu = config.mu0 * config.mu_decay**g
        try:
            work = plan.refine(*work)
        except NumericalError:
            # A restart landed on a degenerate configuration (e.g. the
            # perturbed nodes went collinear); reject the round and draw a
            # fresh restart from the best geometry.
            trace.append(
                TraceRecord(round=g, candidate_score=math.nan, best_score=best_score, mu=mu)
            )
        else:
            candidate_score = plan.mean_abs_residual(*work)
            if candidate_score < best_score:
                best, best_score = work, candidate_score
            trace.append(
                TraceRecord(round=g, candidate_score=candidate_score,
                            best_score=best_score, mu=mu)
            )
        rng = np.random.default_rng(seeds[g - 1])
        work = (
            best[0] + mu * rng.standard_normal(best[0].shape),
            best[1] + mu * rng.standard_normal(best[1].shape),
        )

    geometry = Geometry(*best)
    return CalibrationResult(
        geometry=geometry,
        selected_sources=plan.select(plan.model_distances(*best)),
        fit_score=plan.mean_abs_residual(*best),
        trace=tuple(trace),
    )
