"""Command-line frontend for batch calibration and reproducible experiments.

Subcommands: ``simulate`` (synthesize observations), ``calibrate`` (run the
engine on an observation file), ``crlb`` (bound report for a geometry),
``montecarlo`` (seeded experiment batches), and ``eval`` (calibration error
between two geometry files).

Exit codes: 0 success, 2 usage error, 3 data or schema error, 4 numerical
failure.  Errors are reported as a single JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from garde import io
from garde.engine import calibrate
from garde.errors import DataError, GardeError, NumericalError
from garde.geometry import assert_calibratable, calibration_error
from garde.simulate import run_montecarlo, synthesize_observations, generate_scenario
from garde.crlb import crlb_report

_EXIT_USAGE = 2
_EXIT_DATA = 3
_EXIT_NUMERIC = 4


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="garde",
        description="Geometry calibration of acoustic sensor networks from "
        "node-to-source distance estimates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "simulate", help="generate a seeded scenario and noisy observations"
    )
    p.add_argument("--config", required=True, help="scenario JSON file")
    p.add_argument("--noise", required=True, help="noise model JSON file")
    p.add_argument("--out-obs", required=True, help="output observations CSV")
    p.add_argument("--out-truth", required=True, help="output ground-truth geometry JSON")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    p = sub.add_parser("calibrate", help="calibrate geometry from an observation file")
    p.add_argument("--obs", required=True, help="observations CSV")
    p.add_argument("--out", required=True, help="output calibration result JSON")
    p.add_argument("--iterations", type=int, default=30, help="refinement passes (default 30)")
    p.add_argument("--annealing", type=int, default=30, help="annealing rounds (default 30)")
    p.add_argument("--seed", type=int, default=0, help="engine seed (default 0)")

    p = sub.add_parser("crlb", help="RMSE lower bounds for a known geometry")
    p.add_argument("--geometry", required=True, help="geometry JSON")
    p.add_argument("--sigma", required=True, type=_positive_float,
                   help="distance-error standard deviation in meters")
    p.add_argument("--out", required=True, help="output bound report CSV")

    p = sub.add_parser("montecarlo", help="run a seeded experiment batch")
    p.add_argument("--config", required=True, help="experiment JSON file")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--force", action="store_true",
                   help="allow writing into a non-empty directory")

    p = sub.add_parser("eval", help="calibration error between two geometry files")
    p.add_argument("--est", required=True, help="estimated geometry JSON")
    p.add_argument("--truth", required=True, help="ground-truth geometry JSON")
    p.add_argument("--no-reflection", action="store_true",
                   help="restrict the alignment to proper rotations")
    return parser


def _cmd_simulate(args) -> int:
    scenario = io.load_scenario(args.config)
    noise = io.load_noise_model(args.noise)
    if args.seed is not None:
        scenario = replace(scenario, rng_seed=args.seed)
    geometry = generate_scenario(scenario)
    # The observation stream is a child of the scenario seed so one seed
    # flag reproduces both files.
    obs_seed = int(np.random.SeedSequence([scenario.rng_seed, 1]).generate_state(1)[0])
    obs = synthesize_observations(geometry, noise, obs_seed)
    io.save_observations(obs, args.out_obs)
    io.save_geometry(geometry, args.out_truth)
    return 0


def _cmd_calibrate(args) -> int:
    obs = io.load_observations(args.obs)
    assert_calibratable(obs)
    config = io.load_garde_config(
        "<flags>",
        {
            "num_iterations": args.iterations,
            "num_annealing": args.annealing,
            "rng_seed": args.seed,
        },
    )
    result = calibrate(obs, config)
    io.save_calibration_result(result, args.out)
    return 0


def _cmd_crlb(args) -> int:
    geometry = io.load_geometry(args.geometry)
    report = crlb_report(geometry, args.sigma)
    io.save_crlb_report(report, args.out)
    return 0


def _cmd_montecarlo(args) -> int:
    cfg = io.load_montecarlo_config(args.config)
    if os.path.isdir(args.out_dir) and os.listdir(args.out_dir) and not args.force:
        raise DataError(
            f"output directory {args.out_dir} is not empty; pass --force to overwrite"
        )
    result = run_montecarlo(
        cfg["scenario"],
        cfg["noise"],
        cfg["config"],
        trials=cfg["trials"],
        variants=cfg["variants"],
        iteration_counts=cfg["iteration_counts"],
    )
    io.write_montecarlo_outputs(result, args.out_dir)
    return 0


def _cmd_eval(args) -> int:
    est = io.load_geometry(args.est)
    truth = io.load_geometry(args.truth)
    error = calibration_error(est, truth, allow_reflection=not args.no_reflection)
    print(format(error, ".17g"))
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "calibrate": _cmd_calibrate,
    "crlb": _cmd_crlb,
    "montecarlo": _cmd_montecarlo,
    "eval": _cmd_eval,
}


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": {"code": code, "kind": kind, "message": message}}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        return _fail(_EXIT_DATA, "data", str(exc))
    except NumericalError as exc:
        return _fail(_EXIT_NUMERIC, "numerical", str(exc))
    except GardeError as exc:  # pragma: no cover - defensive
        return _fail(_EXIT_NUMERIC, "numerical", str(exc))
    except OSError as exc:
        return _fail(_EXIT_DATA, "io", str(exc))


if __name__ == "__main__":
    sys.exit(main())
