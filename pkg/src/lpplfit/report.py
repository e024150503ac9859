"""Serialisation of ensemble summaries and scan reports (JSON and tidy CSV)."""
from __future__ import annotations

import csv
import io
import json
from typing import Any

from .ensemble import BAND_PROBS, EnsembleSummary, ScanResult, qkey
from .optimizer import FitResult
from .timeseries import from_decimal_years

_num = {"type": "number"}
_num_or_null = {"type": ["number", "null"]}

FIT_SCHEMA = {
    "type": "object",
    "required": ["t1", "t2", "tc", "m", "omega", "phi", "A", "B", "C", "ssr", "converged", "seed"],
    "properties": {
        **{k: _num for k in ("t1", "t2", "tc", "m", "omega", "phi", "A", "B", "C")},
        "ssr": {"type": "number", "minimum": 0},
        "converged": {"type": "boolean"},
        "seed": {"type": "integer", "minimum": 0},
        "n_obs": {"type": "integer", "minimum": 8},
        "tc_date": {"type": "string", "format": "date"},
        "stop_reason": {"type": "string"},
        "n_iter": {"type": "integer"},
    },
}

SUMMARY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "EnsembleSummary",
    "type": "object",
    "required": ["t2", "n_windows", "n_failed", "fits", "tc_quantiles", "density", "extrapolation"],
    "properties": {
        "t2": _num,
        "t2_date": {"type": "string"},
        "n_windows": {"type": "integer", "minimum": 1},
        "n_failed": {"type": "integer", "minimum": 0},
        "n_filtered": {"type": "integer", "minimum": 0},
        "fits": {"type": "array", "minItems": 1, "items": FIT_SCHEMA},
        "failures": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["t1", "t2", "reason"],
                "properties": {"t1": _num, "t2": _num, "reason": {"type": "string"}},
            },
        },
        "tc_quantiles": {
            "type": "object",
            "minProperties": 1,
            "patternProperties": {"^q[0-9.]+$": _num},
            "additionalProperties": False,
        },
        "density_kind": {"enum": ["kde", "histogram", "point_mass"]},
        "bandwidth": {"type": "number", "minimum": 0},
        "density_mode": _num,
        "density": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "array",
                "prefixItems": [_num, {"type": "number", "minimum": 0}],
                "minItems": 2,
                "maxItems": 2,
            },
        },
        "extrapolation": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["t", "q05", "q20", "q80", "q95"],
                "properties": {
                    "t": _num,
                    "n_fits": {"type": "integer", "minimum": 0},
                    "gap": {"type": "boolean"},
                    **{qkey(p): _num_or_null for p in BAND_PROBS},
                },
            },
        },
    },
}

STABILITY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ScanStability",
    "type": "object",
    "required": ["center_t2", "rows", "total_drift"],
    "properties": {
        "center_t2": _num,
        "total_drift": _num,
        "mode_range": _num_or_null,
        "rows": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["t2", "t2_date", "mode", "drift", "error"],
                "properties": {
                    "t2": _num,
                    "t2_date": {"type": "string"},
                    "mode": _num_or_null,
                    "drift": _num_or_null,
                    "error": {"type": ["string", "null"]},
                },
            },
        },
    },
}


def fit_to_dict(fit: FitResult) -> dict[str, Any]:
    return {
        "t1": fit.window.t1,
        "t2": fit.window.t2,
        "tc": fit.nl.tc,
        "tc_date": from_decimal_years(fit.nl.tc).isoformat(),
        "m": fit.nl.m,
        "omega": fit.nl.omega,
        "phi": fit.nl.phi,
        "A": fit.lin.A,
        "B": fit.lin.B,
        "C": fit.lin.C,
        "ssr": fit.ssr,
        "n_obs": fit.n_obs,
        "converged": fit.converged,
        "stop_reason": fit.stop_reason,
        "n_iter": fit.n_iter,
        "seed": fit.seed,
    }


def summary_to_dict(summary: EnsembleSummary) -> dict[str, Any]:
    density = summary.density
    return {
        "t2": summary.t2,
        "t2_date": from_decimal_years(summary.t2).isoformat(),
        "n_windows": summary.n_windows,
        "n_failed": summary.n_failed,
        "n_filtered": len(summary.filtered),
        "fits": [fit_to_dict(f) for f in summary.fits],
        "failures": [
            {"t1": w.window.t1, "t2": w.window.t2, "reason": w.reason} for w in summary.failures
        ],
        "tc_quantiles": {qkey(p): q for p, q in summary.tc_quantiles.items()},
        "density_kind": density.kind,
        "bandwidth": density.bandwidth,
        "density_mode": density.mode,
        "density": [[float(g), float(v)] for g, v in zip(density.grid, density.values)],
        "extrapolation": [
            {
                "t": row.t,
                "n_fits": row.n_fits,
                "gap": row.gap,
                **{qkey(p): (None if row.gap else row.quantiles[p]) for p in BAND_PROBS},
            }
            for row in summary.extrapolation
        ],
    }


def stability_to_dict(scan: ScanResult, center_t2: float) -> dict[str, Any]:
    stab = scan.stability()
    rows = []
    prev = None
    for entry in scan.entries:
        mode = entry.mode
        drift = None if (mode is None or prev is None) else mode - prev
        if mode is not None:
            prev = mode
        rows.append(
            {
                "t2": entry.t2,
                "t2_date": from_decimal_years(entry.t2).isoformat(),
                "mode": mode,
                "drift": drift,
                "error": entry.error,
            }
        )
    return {
        "center_t2": center_t2,
        "rows": rows,
        "total_drift": stab["total_drift"],
        "mode_range": stab["mode_range"],
    }


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def fits_csv(summary: EnsembleSummary) -> str:
    cols = ["t1", "t2", "tc", "m", "omega", "phi", "A", "B", "C", "ssr", "n_obs", "converged", "seed"]
    return _csv(cols, ([fit_to_dict(f)[c] for c in cols] for f in summary.fits))


def bands_csv(summary: EnsembleSummary) -> str:
    keys = [qkey(p) for p in BAND_PROBS]
    rows = []
    for row in summary.extrapolation:
        qs = ["" if row.gap else row.quantiles[p] for p in BAND_PROBS]
        rows.append([row.t, row.n_fits, *qs])
    return _csv(["t", "n_fits", *keys], rows)


def density_csv(summary: EnsembleSummary) -> str:
    d = summary.density
    return _csv(["tc", "density"], zip(d.grid.tolist(), d.values.tolist()))
