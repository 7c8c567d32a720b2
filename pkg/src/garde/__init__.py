"""Geometry calibration for acoustic sensor networks from distance estimates.

The package localizes sensor nodes and the acoustic sources they observe
from node-to-source distance estimates alone: classical MDS on completed
inter-node distances provides the starting geometry, alternating weighted
least squares refines it, annealed restarts escape local optima, and
closed-form Cramér–Rao bounds quantify the best achievable accuracy.
A simulator with a parametric distance-noise model supports seeded
Monte-Carlo experiments.
"""

from garde.errors import DataError, GardeError, NumericalError
from garde.geometry import (
    Geometry,
    ObservationSet,
    RigidTransform,
    align,
    assert_calibratable,
    calibration_error,
    cost,
    distance,
    mean_abs_residual,
    pairwise_distances,
    residuals,
)
from garde.mds import CompletedDistanceMatrix, classical_mds, complete_distances
from garde.wls import (
    WlsProblem,
    localize_all_nodes,
    localize_all_sources,
    select_reference,
    wls_solve,
)
from garde.engine import (
    CalibrationResult,
    GardeConfig,
    TraceRecord,
    calibrate,
    fit_select,
    iterate,
    opt_select,
)
from garde.crlb import (
    CrlbEntry,
    CrlbReport,
    crlb_report,
    gammas_for_source,
    node_rmse_bound,
    source_rmse_bound,
)
from garde.simulate import (
    MonteCarloResult,
    NoiseModel,
    Scenario,
    generate_scenario,
    run_montecarlo,
    synthesize_observations,
)

__version__ = "0.1.0"

__all__ = [
    "GardeError",
    "DataError",
    "NumericalError",
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
    "CompletedDistanceMatrix",
    "complete_distances",
    "classical_mds",
    "WlsProblem",
    "select_reference",
    "wls_solve",
    "localize_all_sources",
    "localize_all_nodes",
    "GardeConfig",
    "TraceRecord",
    "CalibrationResult",
    "fit_select",
    "opt_select",
    "iterate",
    "calibrate",
    "CrlbEntry",
    "CrlbReport",
    "gammas_for_source",
    "source_rmse_bound",
    "node_rmse_bound",
    "crlb_report",
    "Scenario",
    "NoiseModel",
    "MonteCarloResult",
    "generate_scenario",
    "synthesize_observations",
    "run_montecarlo",
]
