"""Command line: ``lpplfit {fit,scan,synth,smooth}``.

Exit status: 0 success, 1 input or configuration error, 2 computation failure.
"""
from __future__ import annotations

import argparse
import configparser
import datetime as dt
import json
import logging
import sys
from pathlib import Path
from typing import Any

from . import report
from .ensemble import EnsembleConfig, run_ensemble, scan_t2
from .errors import LPPLError, ValidationError
from .model import LinearParams, NonlinearParams
from .optimizer import FitConfig
from .synth import SynthSpec, generate
from .timeseries import (
    ColumnSpec,
    TimeSeries,
    format_csv,
    from_decimal_years,
    moving_average,
    parse_csv,
    parse_date,
    to_decimal_years,
)

logger = logging.getLogger("lpplfit")

DEFAULTS: dict[str, Any] = {
    "date_column": "date",
    "value_column": "value",
    "delimiter": ",",
    "ma": 13,
    "span_min_months": 6.0,
    "span_max_months": 18.0,
    "step_days": 7.0,
    "probs": "0.05,0.2,0.5,0.8,0.95",
    "seed": 0,
    "jobs": 1,
    "format": "json",
    "negative_b": False,
    "literal_cos": False,
    "density": "kde",
    "n_t2": 7,
    "t2_step_days": 7.0,
    "out": ".",
}

# FitConfig fields that may only be set from the config file
FIT_KEYS = (
    "n_candidates", "tabu_evals", "tabu_regions", "tabu_step", "tabu_step_floor",
    "tabu_patience", "tabu_tenure", "tabu_radius", "distinct_frac",
    "lm_lambda0", "lm_max_iter", "lm_ftol", "lm_xtol", "cond_threshold",
)

BOOL_KEYS = ("negative_b", "literal_cos")


class _Settings(dict):
    def __getattr__(self, key):
        return self[key]


def load_config_file(path: str | Path) -> dict[str, str]:
    """Read ``key = value`` pairs from the ``[lpplfit]`` section of an INI file."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ValidationError(f"cannot read config file {path}")
    if not parser.has_section("lpplfit"):
        raise ValidationError(f"config file {path} has no [lpplfit] section")
    return {k.replace("-", "_"): v for k, v in parser.items("lpplfit")}


def _settings(args: argparse.Namespace) -> _Settings:
    """Merge built-in defaults < config file < command-line flags."""
    merged: dict[str, Any] = dict(DEFAULTS)
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    for key, raw in file_values.items():
        if key in BOOL_KEYS:
            merged[key] = raw.strip().lower() in ("1", "true", "yes", "on")
        elif key not in DEFAULTS and key not in FIT_KEYS:
            raise ValidationError(f"unknown config key {key!r}")
        elif key in DEFAULTS and not isinstance(DEFAULTS[key], str):
            try:
                merged[key] = type(DEFAULTS[key])(raw)
            except ValueError:
                raise ValidationError(f"config key {key}: bad value {raw!r}") from None
        else:
            merged[key] = raw
    for key, value in vars(args).items():
        if value is not None:
            merged[key] = value
    return _Settings(merged)


def _fit_config(s: _Settings) -> FitConfig:
    extra = {k: s[k] for k in FIT_KEYS if k in s}
    return FitConfig.from_mapping({**extra, "seed": s.seed, "literal_cos": s.literal_cos})


def _ensemble_config(s: _Settings) -> EnsembleConfig:
    try:
        probs = tuple(float(p) for p in str(s.probs).split(",") if p.strip())
    except ValueError:
        raise ValidationError(f"bad --probs {s.probs!r}") from None
    if s.step_days <= 0 or s.span_min_months <= 0 or s.span_max_months <= 0:
        raise ValidationError("all durations must be positive")
    return EnsembleConfig(
        span_min=s.span_min_months / 12,
        span_max=s.span_max_months / 12,
        step=s.step_days / 365.25,
        probs=probs,
        require_negative_b=bool(s.negative_b),
        density_kind=s.density,
        fit=_fit_config(s),
    )


def _load_series(s: _Settings):
    path = Path(s.input)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror or exc}") from None
    series = parse_csv(text, ColumnSpec(s.date_column, s.value_column, s.delimiter), label=path.stem)
    if int(s.ma) > 1:
        series = moving_average(series, int(s.ma))
    return series


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _emit_summary(out: Path, stem: str, summary, fmt: str) -> list[Path]:
    written = []
    if fmt in ("json", "both"):
        written.append(_write(out, f"{stem}.json", report.dumps(report.summary_to_dict(summary))))
    if fmt in ("csv", "both"):
        written.append(_write(out, f"{stem}.fits.csv", report.fits_csv(summary)))
        written.append(_write(out, f"{stem}.bands.csv", report.bands_csv(summary)))
        written.append(_write(out, f"{stem}.density.csv", report.density_csv(summary)))
    return written


def cmd_fit(s: _Settings) -> int:
    t2_date = parse_date(s.t2)
    series = _load_series(s)
    config = _ensemble_config(s)
    summary = run_ensemble(series, to_decimal_years(t2_date), config, jobs=int(s.jobs))
    for p in _emit_summary(Path(s.out), f"fit_{t2_date.isoformat()}", summary, s.format):
        logger.info("wrote %s", p)
    return 0


def cmd_scan(s: _Settings) -> int:
    center = parse_date(s.center)
    series = _load_series(s)
    config = _ensemble_config(s)
    if int(s.n_t2) < 1:
        raise ValidationError("--n-t2 must be at least 1")
    center_t2 = to_decimal_years(center)
    scan = scan_t2(series, center_t2, int(s.n_t2), s.t2_step_days / 365.25, config, jobs=int(s.jobs))
    out = Path(s.out)
    for entry in scan.entries:
        if entry.summary is None:
            logger.warning("t2=%.5f failed: %s", entry.t2, entry.error)
            continue
        stem = f"scan_{from_decimal_years(entry.t2).isoformat()}"
        _emit_summary(out, stem, entry.summary, s.format)
    _write(
        out,
        f"scan_{center.isoformat()}.stability.json",
        report.dumps(report.stability_to_dict(scan, center_t2)),
    )
    if not scan.summaries:
        print("error: every t2 in the scan failed", file=sys.stderr)
        return 2
    return 0


def cmd_synth(s: _Settings) -> int:
    start, end, tc = parse_date(s.start), parse_date(s.end), parse_date(s.tc)
    if s.noise_sigma < 0:
        raise ValidationError("--noise-sigma must be non-negative")
    if s.spacing_days <= 0:
        raise ValidationError("--spacing-days must be positive")
    dates = []
    d = start
    while d <= end:
        dates.append(d)
        d += dt.timedelta(days=s.spacing_days)
    spec = SynthSpec(
        NonlinearParams(to_decimal_years(tc), s.m, s.omega, s.phi),
        LinearParams(s.A, s.B, s.C),
        to_decimal_years(start),
        to_decimal_years(end),
        s.spacing_days / 365.25,
        s.noise_sigma,
        int(s.seed),
    )
    times = [to_decimal_years(x) for x in dates]
    synth = generate(spec, times=times, literal_cos=s.literal_cos)
    series = TimeSeries(synth.series.times, synth.series.values, "synthetic", tuple(dates))
    out = Path(s.out)
    stem = f"synth_{end.isoformat()}"
    _write(out, f"{stem}.csv", format_csv(series))
    truth = {**spec.truth(), "tc_date": tc.isoformat(), "start_date": start.isoformat(),
             "end_date": end.isoformat(), "n_obs": len(series), "literal_cos": s.literal_cos}
    _write(out, f"{stem}.truth.json", json.dumps(truth, indent=2) + "\n")
    return 0


def cmd_smooth(s: _Settings) -> int:
    series = _load_series(s)
    last = series.calendar_dates()[-1]
    _write(Path(s.out), f"smooth_{last.isoformat()}.csv", format_csv(series))
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with an [lpplfit] section; flags override it")
    p.add_argument("--out", help="output directory (default: current)")
    p.add_argument("-v", "--verbose", action="store_true", default=None)


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("input", help="CSV file with a header row")
    p.add_argument("--date-column", dest="date_column")
    p.add_argument("--value-column", dest="value_column")
    p.add_argument("--delimiter")
    p.add_argument("--ma", type=int, help="trailing moving-average length in observations (default 13; 1 disables)")


def _add_fit_options(p: argparse.ArgumentParser) -> None:
    _add_input(p)
    p.add_argument("--span-min-months", dest="span_min_months", type=float)
    p.add_argument("--span-max-months", dest="span_max_months", type=float)
    p.add_argument("--step-days", dest="step_days", type=float, help="t1 spacing in days")
    p.add_argument("--probs", help="comma-separated tc quantile levels")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="worker processes (results do not depend on it)")
    p.add_argument("--format", choices=("json", "csv", "both"))
    p.add_argument("--negative-b", dest="negative_b", action="store_true", default=None,
                   help="keep only fits with B < 0")
    p.add_argument("--literal-cos", dest="literal_cos", action="store_true", default=None,
                   help="use cos(ln(omega*tau) + phi) instead of cos(omega*ln(tau) + phi)")
    p.add_argument("--density", choices=("kde", "histogram"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lpplfit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="window ensemble for one t2")
    _add_common(fit)
    _add_fit_options(fit)
    fit.add_argument("--t2", required=True, help="end of the fitting windows (ISO date)")
    fit.set_defaults(func=cmd_fit)

    scan = sub.add_parser("scan", help="ensembles for several t2 around a centre date")
    _add_common(scan)
    _add_fit_options(scan)
    scan.add_argument("--center", required=True, help="central t2 (ISO date)")
    scan.add_argument("--n-t2", dest="n_t2", type=int)
    scan.add_argument("--t2-step-days", dest="t2_step_days", type=float)
    scan.set_defaults(func=cmd_scan)

    synth = sub.add_parser("synth", help="write a synthetic LPPL series and its ground truth")
    _add_common(synth)
    synth.add_argument("--tc", default="2008-04-02")
    synth.add_argument("--start", default="2005-01-05")
    synth.add_argument("--end", default="2008-02-13")
    synth.add_argument("--m", type=float, default=0.5)
    synth.add_argument("--omega", type=float, default=8.0)
    synth.add_argument("--phi", type=float, default=1.0)
    synth.add_argument("--A", type=float, default=10.0)
    synth.add_argument("--B", type=float, default=-2.0)
    synth.add_argument("--C", type=float, default=0.3)
    synth.add_argument("--spacing-days", dest="spacing_days", type=int, default=7)
    synth.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.0)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--literal-cos", dest="literal_cos", action="store_true", default=None)
    synth.set_defaults(func=cmd_synth)

    smooth = sub.add_parser("smooth", help="trailing moving average only")
    _add_common(smooth)
    _add_input(smooth)
    smooth.set_defaults(func=cmd_smooth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    func = args.func
    del args.func
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return func(_settings(args))
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except LPPLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
