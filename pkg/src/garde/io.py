"""File formats: geometry JSON, observation CSV, bound reports, experiment tables.

All floats are written with 17 significant digits so that every file
round-trips bit-exactly and repeated seeded runs produce byte-identical
outputs.  CSV files use ``\\n`` line endings for the same reason.
"""

from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

from garde.crlb import CrlbReport
from garde.engine import CalibrationResult, GardeConfig
from garde.errors import DataError
from garde.geometry import Geometry, ObservationSet
from garde.simulate import (
    POSITION_COLUMNS,
    RUN_COLUMNS,
    VARIANTS,
    MonteCarloResult,
    NoiseModel,
    Scenario,
)

__all__ = [
    "dumps_json",
    "dump_json",
    "save_geometry",
    "load_geometry",
    "save_observations",
    "load_observations",
    "save_crlb_report",
    "save_calibration_result",
    "load_garde_config",
    "load_scenario",
    "load_noise_model",
    "load_montecarlo_config",
    "write_montecarlo_outputs",
]


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise DataError(f"cannot serialize non-finite float {x}")
    return format(x, ".17g")


def _render(obj, indent: int) -> str:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{inner}{json.dumps(str(k))}: {_render(v, indent + 1)}" for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{inner}{_render(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    raise DataError(f"cannot serialize object of type {type(obj).__name__}")


def dumps_json(obj) -> str:
    """Deterministic JSON text with 17-significant-digit floats."""
    return _render(obj, 0) + "\n"


def dump_json(obj, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_json(obj))


def _load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


def _field(data: dict, key: str, types, path: str, default=...):
    if key not in data:
        if default is not ...:
            return default
        raise DataError(f"{path}: missing required field '{key}'")
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, types):
        want = types[0].__name__ if isinstance(types, tuple) else types.__name__
        raise DataError(f"{path}.{key}: expected {want}, got {type(value).__name__}")
    return value


def _point_list(points) -> list[dict]:
    return [{"id": i, "x": float(p[0]), "y": float(p[1])} for i, p in enumerate(points)]


def save_geometry(geometry: Geometry, path: str) -> None:
    """Write a geometry as ``{"nodes": [{"id", "x", "y"}, ...], "sources": [...]}``."""
    dump_json(
        {
            "nodes": _point_list(geometry.nodes),
            "sources": _point_list(geometry.sources),
        },
        path,
    )


def _parse_points(entries, label: str, path: str) -> list[tuple[float, float]]:
    if not isinstance(entries, list) or not entries:
        raise DataError(f"{path}.{label}: expected a nonempty list")
    seen = {}
    for idx, entry in enumerate(entries):
        where = f"{path}.{label}[{idx}]"
        if not isinstance(entry, dict):
            raise DataError(f"{where}: expected an object")
        pid = _field(entry, "id", int, where)
        x = float(_field(entry, "x", (int, float), where))
        y = float(_field(entry, "y", (int, float), where))
        if pid in seen:
            raise DataError(f"{where}: duplicate id {pid}")
        seen[pid] = (x, y)
    ids = sorted(seen)
    if ids != list(range(len(ids))):
        raise DataError(f"{path}.{label}: ids must be contiguous from 0")
    return [seen[i] for i in ids]


def load_geometry(path: str) -> Geometry:
    data = _load_json(path)
    nodes = _parse_points(data.get("nodes"), "nodes", path)
    sources = _parse_points(data.get("sources"), "sources", path)
    return Geometry(nodes=nodes, sources=sources)


def save_observations(obs: ObservationSet, path: str) -> None:
    """Write valid entries as ``node_id,source_id,distance_m`` rows.

    Missing (masked) pairs are simply absent from the file.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node_id", "source_id", "distance_m"])
        for n in range(obs.node_count):
            for k in range(obs.source_count):
                if obs.valid[n, k]:
                    writer.writerow([n, k, _fmt_float(float(obs.distances[n, k]))])


def load_observations(path: str) -> ObservationSet:
    """Read an observation CSV; absent (node, source) pairs become masked.

    Matrix dimensions are inferred from the largest ids present, so a
    trailing node or source with no valid entries at all cannot be
    represented (such data is unsolvable anyway).
    """
    try:
        fh = open(path, encoding="utf-8", newline="")
    except FileNotFoundError as exc:
        raise DataError(f"{path}: file not found") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["node_id", "source_id", "distance_m"]:
            raise DataError(
                f"{path}: expected header node_id,source_id,distance_m, got {header}"
            )
        entries = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                n, k, d = int(row[0]), int(row[1]), float(row[2])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if n < 0 or k < 0:
                raise DataError(f"{path}:{lineno}: ids must be >= 0")
            if (n, k) in entries:
                raise DataError(f"{path}:{lineno}: duplicate pair ({n}, {k})")
            entries[(n, k)] = d
    if not entries:
        raise DataError(f"{path}: no observations")
    n_nodes = max(n for n, _ in entries) + 1
    n_sources = max(k for _, k in entries) + 1
    dist = np.zeros((n_nodes, n_sources))
    valid = np.zeros((n_nodes, n_sources), dtype=bool)
    for (n, k), d in entries.items():
        dist[n, k] = d
        valid[n, k] = True
    return ObservationSet(distances=dist, valid=valid)


def save_crlb_report(report: CrlbReport, path: str) -> None:
    """Write ``kind,index,gamma_xx,gamma_yy,gamma_xy,rmse_bound_m`` rows.

    Positions whose bound could not be computed carry ``nan`` fields.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "index", "gamma_xx", "gamma_yy", "gamma_xy", "rmse_bound_m"])
        for e in report.entries:
            fields = [
                "nan" if math.isnan(v) else _fmt_float(v)
                for v in (e.gamma_xx, e.gamma_yy, e.gamma_xy, e.rmse_bound)
            ]
            writer.writerow([e.kind, e.index, *fields])


def save_calibration_result(result: CalibrationResult, path: str) -> None:
    """Write a calibration result: the geometry schema plus the selected
    source subset, the fit score, and the per-round trace."""
    dump_json(
        {
            "nodes": _point_list(result.geometry.nodes),
            "sources": _point_list(result.geometry.sources),
            "selected_sources": [int(i) for i in result.selected_sources],
            "fit_score": float(result.fit_score),
            "trace": [
                {
                    "round": r.round,
                    # NaN marks a rejected annealing round; JSON has no NaN.
                    "candidate_score": None if math.isnan(r.candidate_score) else r.candidate_score,
                    "best_score": r.best_score,
                    "mu": r.mu,
                }
                for r in result.trace
            ],
        },
        path,
    )


def load_garde_config(path: str, data: dict | None = None) -> GardeConfig:
    """Engine configuration from JSON mirroring the GardeConfig field names."""
    if data is None:
        data = _load_json(path)
    defaults = GardeConfig()
    kwargs = {}
    for name, kind in [
        ("alpha", (int, float)),
        ("beta", (int, float)),
        ("num_iterations", int),
        ("num_annealing", int),
        ("mu0", (int, float)),
        ("mu_decay", (int, float)),
        ("fit_fraction", (int, float)),
        ("min_fit_sources", int),
        ("rng_seed", int),
    ]:
        value = _field(data, name, kind, path, default=getattr(defaults, name))
        kwargs[name] = float(value) if kind == (int, float) else int(value)
    _reject_unknown(data, set(kwargs), path)
    return GardeConfig(**kwargs)


def _reject_unknown(data: dict, known: set, path: str) -> None:
    unknown = set(data) - known
    if unknown:
        raise DataError(f"{path}: unknown field '{sorted(unknown)[0]}'")


def load_scenario(path: str, data: dict | None = None) -> Scenario:
    if data is None:
        data = _load_json(path)
    kwargs = {
        "room_width": float(_field(data, "room_width", (int, float), path)),
        "room_height": float(_field(data, "room_height", (int, float), path)),
        "node_count": _field(data, "node_count", int, path),
        "source_count": _field(data, "source_count", int, path),
        "margin": float(_field(data, "margin", (int, float), path, default=0.5)),
        "min_separation": float(
            _field(data, "min_separation", (int, float), path, default=0.1)
        ),
        "rng_seed": _field(data, "rng_seed", int, path, default=0),
    }
    _reject_unknown(data, set(kwargs), path)
    return Scenario(**kwargs)


def load_noise_model(path: str, data: dict | None = None) -> NoiseModel:
    if data is None:
        data = _load_json(path)
    kwargs = {
        "kind": _field(data, "kind", str, path, default="gaussian"),
        "sigma_d": float(_field(data, "sigma_d", (int, float), path)),
        "slope": float(_field(data, "slope", (int, float), path, default=0.02)),
        "outlier_rate": float(_field(data, "outlier_rate", (int, float), path, default=0.0)),
        "outlier_shift": float(
            _field(data, "outlier_shift", (int, float), path, default=1.0)
        ),
        "oor_threshold": float(
            _field(data, "oor_threshold", (int, float), path, default=math.inf)
        ),
    }
    _reject_unknown(data, set(kwargs), path)
    return NoiseModel(**kwargs)


def load_montecarlo_config(path: str) -> dict:
    """Experiment configuration: scenario, noise, engine config, trial count,
    variants, and optional iteration counts for the sweep."""
    data = _load_json(path)
    if not isinstance(data.get("scenario"), dict):
        raise DataError(f"{path}: missing required object 'scenario'")
    if not isinstance(data.get("noise"), dict):
        raise DataError(f"{path}: missing required object 'noise'")
    out = {
        "scenario": load_scenario(f"{path}.scenario", data["scenario"]),
        "noise": load_noise_model(f"{path}.noise", data["noise"]),
        "config": load_garde_config(f"{path}.garde", data.get("garde", {})),
        "trials": _field(data, "trials", int, path),
        "variants": tuple(
            _field(data, "variants", list, path, default=["with_annealing"])
        ),
        "iteration_counts": tuple(
            _field(data, "iteration_counts", list, path, default=[0, 1, 2, 5, 10, 30])
        ),
    }
    if out["trials"] < 1:
        raise DataError(f"{path}.trials: must be >= 1")
    for v in out["variants"]:
        if v not in VARIANTS:
            raise DataError(f"{path}.variants: unknown variant {v!r}")
    for n in out["iteration_counts"]:
        if isinstance(n, bool) or not isinstance(n, int) or n < 0:
            raise DataError(f"{path}.iteration_counts: entries must be ints >= 0")
    _reject_unknown(
        data, {"scenario", "noise", "garde", "trials", "variants", "iteration_counts"}, path
    )
    return out


def _write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            out = []
            for col in columns:
                value = row.get(col)
                if value is None:
                    out.append("")
                elif isinstance(value, float):
                    out.append("nan" if math.isnan(value) else _fmt_float(value))
                else:
                    out.append(str(value))
            writer.writerow(out)


def _sanitize(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def write_montecarlo_outputs(result: MonteCarloResult, out_dir: str) -> list[str]:
    """Write runs.csv, positions.csv, summary.json, and one two-column CSV
    per curve into ``out_dir``; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    path = os.path.join(out_dir, "runs.csv")
    _write_csv(path, RUN_COLUMNS, result.runs)
    written.append(path)

    path = os.path.join(out_dir, "positions.csv")
    _write_csv(path, POSITION_COLUMNS, result.positions)
    written.append(path)

    path = os.path.join(out_dir, "summary.json")
    dump_json(_sanitize(result.summary), path)
    written.append(path)

    for name in sorted(result.curves):
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "y"])
            for x, y in result.curves[name]:
                writer.writerow([_fmt_float(float(x)), _fmt_float(float(y))])
        written.append(path)
    return written
