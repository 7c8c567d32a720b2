"""Synthetic scenarios, parametric distance noise, and Monte-Carlo experiments.

The paper-scale experiments need distance estimates between nodes and
acoustic sources; here a parametric noise model on the true geometric
distances stands in for an acoustic front end.  The Monte-Carlo harness
generates seeded scenarios, synthesizes observations, runs the calibration
engine in one or more variants, and aggregates plot-ready tables.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from garde.crlb import crlb_report
from garde.engine import GardeConfig, calibrate
from garde.errors import DataError, GardeError, NumericalError
from garde.geometry import (
    Geometry,
    ObservationSet,
    align,
    calibration_error,
    pairwise_distances,
    residuals,
)

__all__ = [
    "Scenario",
    "NoiseModel",
    "MonteCarloResult",
    "VARIANTS",
    "RUN_COLUMNS",
    "POSITION_COLUMNS",
    "generate_scenario",
    "synthesize_observations",
    "run_montecarlo",
]

_MAX_PLACEMENT_ATTEMPTS = 100_000

VARIANTS = ("with_annealing", "without_annealing", "iteration_sweep")

_NOISE_KINDS = ("gaussian", "heteroscedastic", "outlier-contaminated")

# Observed distances are clamped here so a negative noise draw cannot
# produce a non-positive range.
_DISTANCE_FLOOR = 1e-3


@dataclass(frozen=True)
class Scenario:
    """Room dimensions, population counts, and placement constraints."""

    room_width: float
    room_height: float
    node_count: int
    source_count: int
    margin: float = 0.5
    min_separation: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.node_count < 1 or self.source_count < 1:
            raise DataError("node_count and source_count must be >= 1")
        if self.margin < 0 or self.min_separation < 0:
            raise DataError("margin and min_separation must be >= 0")
        if self.room_width <= 2 * self.margin or self.room_height <= 2 * self.margin:
            raise DataError("room must be larger than twice the margin")


@dataclass(frozen=True)
class NoiseModel:
    """Parametric model of distance-estimation errors.

    ``gaussian``: additive zero-mean noise with std ``sigma_d``.
    ``heteroscedastic``: std grows with the true distance,
    ``sigma_d + slope * d``.
    ``outlier-contaminated``: gaussian noise plus, with probability
    ``outlier_rate``, an additive ``outlier_shift``.
    True distances beyond ``oor_threshold`` are flagged missing.
    """

    kind: str = "gaussian"
    sigma_d: float = 0.1
    slope: float = 0.02
    outlier_rate: float = 0.0
    outlier_shift: float = 1.0
    oor_threshold: float = math.inf

    def __post_init__(self):
        if self.kind not in _NOISE_KINDS:
            raise DataError(f"kind must be one of {_NOISE_KINDS}, got {self.kind!r}")
        if self.sigma_d <= 0:
            raise DataError("sigma_d must be > 0")
        if not 0 <= self.outlier_rate < 1:
            raise DataError("outlier_rate must lie in [0, 1)")
        if self.oor_threshold <= 0:
            raise DataError("oor_threshold must be > 0")

    def sigma_for(self, true_dists: np.ndarray) -> np.ndarray:
        """Per-entry noise standard deviation at the given true distances."""
        d = np.asarray(true_dists, dtype=float)
        if self.kind == "heteroscedastic":
            return self.sigma_d + self.slope * d
        return np.full_like(d, self.sigma_d)


def generate_scenario(scenario: Scenario) -> Geometry:
    """Place nodes and sources uniformly at random under the constraints.

    Positions are drawn one at a time inside the margins and accepted only
    if at least ``min_separation`` away from every previously accepted
    point (nodes first, then sources).  Fully reproducible from
    ``scenario.rng_seed``.

    Raises
    ------
    NumericalError
        If the constraints cannot be met within 100000 draws.
    """
    rng = np.random.default_rng(np.random.SeedSequence(scenario.rng_seed))
    low = np.array([scenario.margin, scenario.margin])
    high = np.array(
        [scenario.room_width - scenario.margin, scenario.room_height - scenario.margin]
    )
    total = scenario.node_count + scenario.source_count
    points: list[np.ndarray] = []
    attempts = 0
    while len(points) < total:
        attempts += 1
        if attempts > _MAX_PLACEMENT_ATTEMPTS:
            raise NumericalError(
                f"could not place {total} points with separation "
                f"{scenario.min_separation} after {_MAX_PLACEMENT_ATTEMPTS} attempts"
            )
        cand = rng.uniform(low, high)
        if points and scenario.min_separation > 0:
            dists = np.linalg.norm(np.asarray(points) - cand, axis=1)
            if dists.min() < scenario.min_separation:
                continue
        points.append(cand)
    pts = np.asarray(points)
    return Geometry(nodes=pts[: scenario.node_count], sources=pts[scenario.node_count:])


def synthesize_observations(geometry: Geometry, noise: NoiseModel, rng_seed: int) -> ObservationSet:
    """Noisy node-to-source distance estimates for the given geometry.

    Draw order (for reproducibility): one standard-normal matrix for the
    additive noise, then, in the outlier-contaminated mode, one uniform
    matrix for the outlier positions.  Distances are clamped to 1 mm so
    they stay positive; entries whose *true* distance exceeds the
    out-of-range threshold are masked invalid.
    """
    rng = np.random.default_rng(np.random.SeedSequence(rng_seed))
    d_true = pairwise_distances(geometry.nodes, geometry.sources)
    d_hat = d_true + noise.sigma_for(d_true) * rng.standard_normal(d_true.shape)
    if noise.kind == "outlier-contaminated" and noise.outlier_rate > 0:
        hit = rng.random(d_true.shape) < noise.outlier_rate
        d_hat = d_hat + hit * noise.outlier_shift
    d_hat = np.maximum(d_hat, _DISTANCE_FLOOR)
    valid = d_true <= noise.oor_threshold
    return ObservationSet(distances=d_hat, valid=valid)


@dataclass(frozen=True, eq=False)
class MonteCarloResult:
    """Experiment outputs: one row per (trial, run), per-position errors with
    their bounds, aggregate statistics, and plot-ready curves."""

    runs: list[dict]
    positions: list[dict]
    summary: dict
    curves: dict[str, list[tuple[float, float]]] = field(default_factory=dict)


RUN_COLUMNS = [
    "trial",
    "variant",
    "iterations",
    "annealing",
    "geometry_seed",
    "noise_seed",
    "engine_seed",
    "status",
    "calibration_error_nodes_m",
    "calibration_error_sources_m",
    "fit_score_m",
    "max_abs_residual_full_m",
    "max_abs_residual_selected_m",
    "mean_crlb_source_m",
    "mean_crlb_node_m",
]

POSITION_COLUMNS = [
    "trial",
    "variant",
    "iterations",
    "annealing",
    "kind",
    "index",
    "error_m",
    "crlb_bound_m",
]


def _arm_plan(config: GardeConfig, variants, iteration_counts) -> list[tuple[str, int, int]]:
    plan: list[tuple[str, int, int]] = []
    for variant in variants:
        if variant == "with_annealing":
            plan.append((variant, config.num_iterations, config.num_annealing))
        elif variant == "without_annealing":
            plan.append((variant, config.num_iterations, 0))
        elif variant == "iteration_sweep":
            for n_it in iteration_counts:
                plan.append((variant, int(n_it), 0))
                plan.append((variant, int(n_it), config.num_annealing))
        else:
            raise DataError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return plan


def _trial_seeds(master_seed: int, trial: int) -> tuple[int, int, int]:
    children = np.random.SeedSequence([master_seed, trial]).spawn(3)
    return tuple(int(c.generate_state(1)[0]) for c in children)


def _run_trial(args) -> tuple[list[dict], list[dict]]:
    trial, scenario, noise, config, plan = args
    geom_seed, noise_seed, engine_seed = _trial_seeds(scenario.rng_seed, trial)
    geometry = generate_scenario(replace(scenario, rng_seed=geom_seed))
    obs = synthesize_observations(geometry, noise, noise_seed)

    d_true = pairwise_distances(geometry.nodes, geometry.sources)
    sigma_bound = float(noise.sigma_for(d_true)[obs.valid].mean())
    report = crlb_report(geometry, sigma_bound, valid=obs.valid)
    source_bounds = report.bounds("source")
    node_bounds = report.bounds("node")

    runs: list[dict] = []
    positions: list[dict] = []
    for variant, n_it, n_ann in plan:
        base = {
            "trial": trial,
            "variant": variant,
            "iterations": n_it,
            "annealing": n_ann,
            "geometry_seed": geom_seed,
            "noise_seed": noise_seed,
            "engine_seed": engine_seed,
        }
        try:
            result = calibrate(
                obs,
                replace(config, num_iterations=n_it, num_annealing=n_ann, rng_seed=engine_seed),
            )
        except GardeError as exc:
            runs.append({**base, "status": f"error: {exc}"})
            continue
        est = result.geometry
        res = residuals(est, obs)
        abs_res = np.abs(res[obs.valid])
        sel = result.selected_sources
        sel_mask = obs.valid[:, sel]
        abs_sel = np.abs(res[:, sel][sel_mask])
        _, aligned = align(est.all_points(), geometry.all_points())
        pos_err = np.linalg.norm(aligned - geometry.all_points(), axis=1)
        n = geometry.node_count
        runs.append(
            {
                **base,
                "status": "ok",
                "calibration_error_nodes_m": calibration_error(est.nodes, geometry.nodes),
                "calibration_error_sources_m": calibration_error(est.sources, geometry.sources),
                "fit_score_m": result.fit_score,
                "max_abs_residual_full_m": float(abs_res.max()),
                "max_abs_residual_selected_m": float(abs_sel.max()),
                "mean_crlb_source_m": float(np.nanmean(source_bounds)),
                "mean_crlb_node_m": float(np.nanmean(node_bounds)),
            }
        )
        for k in range(geometry.source_count):
            positions.append(
                {**base, "kind": "source", "index": k,
                 "error_m": float(pos_err[n + k]), "crlb_bound_m": float(source_bounds[k])}
            )
        for i in range(geometry.node_count):
            positions.append(
                {**base, "kind": "node", "index": i,
                 "error_m": float(pos_err[i]), "crlb_bound_m": float(node_bounds[i])}
            )
    return runs, positions


def _cdf_points(values: np.ndarray) -> list[tuple[float, float]]:
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    return [(float(v[i]), (i + 1) / n) for i in range(n)]


def _aggregate(runs: list[dict], positions: list[dict], plan) -> tuple[dict, dict]:
    ok = [r for r in runs if r["status"] == "ok"]
    failed = [r for r in runs if r["status"] != "ok"]
    arms: dict[tuple[str, int, int], list[dict]] = {}
    for r in ok:
        arms.setdefault((r["variant"], r["iterations"], r["annealing"]), []).append(r)

    arm_stats = []
    for (variant, n_it, n_ann), rows in sorted(arms.items()):
        err = np.array([r["calibration_error_nodes_m"] for r in rows])
        err_src = np.array([r["calibration_error_sources_m"] for r in rows])
        arm_stats.append(
            {
                "variant": variant,
                "iterations": n_it,
                "annealing": n_ann,
                "runs": len(rows),
                "mean_calibration_error_nodes_m": float(err.mean()),
                "median_calibration_error_nodes_m": float(np.median(err)),
                "mean_calibration_error_sources_m": float(err_src.mean()),
            }
        )

    summary: dict = {
        "completed_runs": len(ok),
        "failed_runs": len(failed),
        "failures": [
            {"trial": r["trial"], "variant": r["variant"], "status": r["status"]}
            for r in failed
        ],
        "arms": arm_stats,
    }

    with_rows = {r["trial"]: r for r in ok if r["variant"] == "with_annealing"}
    without_rows = {r["trial"]: r for r in ok if r["variant"] == "without_annealing"}
    paired = sorted(set(with_rows) & set(without_rows))
    if paired:
        improvement = np.array(
            [
                without_rows[t]["calibration_error_nodes_m"]
                - with_rows[t]["calibration_error_nodes_m"]
                for t in paired
            ]
        )
        summary["annealing_benefit"] = {
            "paired_trials": len(paired),
            "mean_error_with_annealing_m": float(
                np.mean([with_rows[t]["calibration_error_nodes_m"] for t in paired])
            ),
            "mean_error_without_annealing_m": float(
                np.mean([without_rows[t]["calibration_error_nodes_m"] for t in paired])
            ),
            "median_improvement_m": float(np.median(improvement)),
        }

    # Primary arm for CDF and RMSE-vs-bound outputs: annealed if present.
    primary = None
    for cand in ("with_annealing", "without_annealing", "iteration_sweep"):
        arm = [key for key in arms if key[0] == cand]
        if arm:
            primary = sorted(arm)[-1]
            break

    curves: dict[str, list[tuple[float, float]]] = {}
    if primary is not None:
        rows = arms[primary]
        curves["cdf_max_residual_full"] = _cdf_points(
            [r["max_abs_residual_full_m"] for r in rows]
        )
        curves["cdf_max_residual_selected"] = _cdf_points(
            [r["max_abs_residual_selected_m"] for r in rows]
        )
        pos = [
            p
            for p in positions
            if (p["variant"], p["iterations"], p["annealing"]) == primary
        ]
        rmse_class = {}
        for kind in ("source", "node"):
            errs = np.array([p["error_m"] for p in pos if p["kind"] == kind])
            bnds = np.array([p["crlb_bound_m"] for p in pos if p["kind"] == kind])
            good = np.isfinite(bnds)
            if errs.size and good.any():
                rmse = float(np.sqrt(np.mean(errs[good] ** 2)))
                mean_bound = float(bnds[good].mean())
                rmse_class[kind] = {
                    "empirical_rmse_m": rmse,
                    "mean_crlb_m": mean_bound,
                    "ratio": rmse / mean_bound if mean_bound > 0 else None,
                }
            per_trial = []
            for t in sorted({p["trial"] for p in pos}):
                tp = [p for p in pos if p["trial"] == t and p["kind"] == kind]
                tb = np.array([p["crlb_bound_m"] for p in tp])
                te = np.array([p["error_m"] for p in tp])
                keep = np.isfinite(tb)
                if keep.any():
                    per_trial.append(
                        (float(tb[keep].mean()), float(np.sqrt(np.mean(te[keep] ** 2))))
                    )
            curves[f"rmse_vs_crlb_{kind}s"] = per_trial
        summary["rmse_vs_crlb"] = rmse_class

    sweep = {key: rows for key, rows in arms.items() if key[0] == "iteration_sweep"}
    if sweep:
        plain, annealed = [], []
        for (_, n_it, n_ann), rows in sorted(sweep.items()):
            mean_err = float(
                np.mean([r["calibration_error_nodes_m"] for r in rows])
            )
            (annealed if n_ann > 0 else plain).append((float(n_it), mean_err))
        if plain:
            curves["error_vs_iterations_plain"] = plain
        if annealed:
            curves["error_vs_iterations_annealed"] = annealed

    return summary, curves


def run_montecarlo(
    scenario: Scenario,
    noise: NoiseModel,
    config: GardeConfig,
    trials: int,
    variants=("with_annealing",),
    iteration_counts=(0, 1, 2, 5, 10, 30),
    workers: int | None = None,
) -> MonteCarloResult:
    """Run seeded end-to-end experiments and aggregate plot-ready tables.

    Every trial draws a fresh geometry and observation set from seeds
    derived from ``(scenario.rng_seed, trial)`` via
    ``numpy.random.SeedSequence`` spawning (children: geometry, noise,
    engine), then calibrates once per requested arm.  ``variants`` is any
    subset of ``VARIANTS``; the iteration sweep runs every count in
    ``iteration_counts`` both without and with annealing.

    Individual run failures are recorded in the summary and excluded from
    aggregates; they do not abort the experiment.  With ``workers > 1``
    (default: the ``GARDE_THREADS`` environment variable, else 1) trials
    execute in parallel processes; outputs are identical to sequential
    execution because every trial is independently seeded and rows are
    ordered by trial.
    """
    if trials < 1:
        raise DataError("trials must be >= 1")
    plan = _arm_plan(config, variants, iteration_counts)
    if not plan:
        raise DataError("no experiment variants requested")
    if workers is None:
        workers = int(os.environ.get("GARDE_THREADS", "1"))
    workers = max(1, min(workers, trials))

    args = [(t, scenario, noise, config, plan) for t in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(_run_trial, args))
    else:
        per_trial = [_run_trial(a) for a in args]

    runs = [row for trial_runs, _ in per_trial for row in trial_runs]
    positions = [row for _, trial_pos in per_trial for row in trial_pos]
    summary, curves = _aggregate(runs, positions, plan)
    summary["trials"] = trials
    return MonteCarloResult(runs=runs, positions=positions, summary=summary, curves=curves)
