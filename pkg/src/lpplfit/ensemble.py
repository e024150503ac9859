"""Window ensembles, crash-time quantiles and densities, forward extrapolation."""
from __future__ import annotations

import logging
import math
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, CoverageError, EnsembleFailure, LPPLError, ValidationError
from .model import lppl_value
from .optimizer import FitConfig, FitResult, fit_window
from .timeseries import TimeSeries, Window

logger = logging.getLogger(__name__)

WEEK = 7 / 365.25
MONTH = 1 / 12
TC_PROBS = (0.05, 0.20, 0.50, 0.80, 0.95)
BAND_PROBS = (0.05, 0.20, 0.50, 0.80, 0.95)


def qkey(p: float) -> str:
    """``0.05 -> 'q05'``, ``0.5 -> 'q50'``, ``0.025 -> 'q2.5'``."""
    pct = p * 100
    if abs(pct - round(pct)) < 1e-9:
        return f"q{int(round(pct)):02d}"
    return f"q{pct:g}"


@dataclass(frozen=True)
class EnsembleConfig:
    span_min: float = 6 * MONTH
    span_max: float = 18 * MONTH
    step: float = WEEK
    probs: tuple[float, ...] = TC_PROBS
    require_negative_b: bool = False
    horizon: float = 0.5
    horizon_step: float = WEEK
    density_kind: str = "kde"
    density_points: int = 401
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if not (self.span_min > 0 and self.span_max > 0 and self.step > 0):
            raise ConfigError("durations must be positive")
        if self.span_min > self.span_max:
            raise ConfigError("span_min must not exceed span_max")
        if any(not 0 <= p <= 1 for p in self.probs):
            raise ConfigError("probabilities must lie in [0, 1]")
        if self.density_kind not in ("kde", "histogram"):
            raise ConfigError(f"unknown density kind {self.density_kind!r}")
        if self.horizon <= 0 or self.horizon_step <= 0:
            raise ConfigError("extrapolation horizon and step must be positive")


def generate_windows(
    t2: float, span_min: float = 6 * MONTH, span_max: float = 18 * MONTH, step: float = WEEK
) -> list[Window]:
    """Windows ending at ``t2`` with ``t1`` from ``t2 - span_max`` in ``step`` increments.

    The last ``t1`` is the largest one not later than ``t2 - span_min``.
    """
    if not step > 0:
        raise ConfigError("step must be positive")
    if span_min > span_max or span_min <= 0:
        raise ConfigError(f"inconsistent spans ({span_min}, {span_max})")
    n = math.floor((span_max - span_min) / step + 1e-9) + 1
    windows = [Window(t2 - span_max + k * step, t2) for k in range(n)]
    if not windows:
        raise ConfigError("window grid is empty")
    return windows


def tc_quantiles(tcs: Sequence[float], probs: Sequence[float] = TC_PROBS) -> dict[float, float]:
    """Empirical quantiles, linear between order statistics (rank ``(n-1)p + 1``)."""
    arr = np.asarray(tcs, dtype=float)
    if arr.size == 0:
        raise ValidationError("no crash times to summarise")
    probs = [float(p) for p in probs]
    if any(not 0 <= p <= 1 for p in probs):
        raise ValidationError("probabilities must lie in [0, 1]")
    qs = np.quantile(arr, probs, method="linear")
    return {p: float(q) for p, q in zip(probs, qs)}


def silverman_bandwidth(x: Sequence[float]) -> float:
    """``0.9 * min(sd, IQR/1.34) * n**(-1/5)``."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return 0.0
    sd = np.std(x, ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    return float(0.9 * min(sd, (q75 - q25) / 1.34) * x.size ** (-0.2))


@dataclass(frozen=True)
class Density:
    grid: np.ndarray
    values: np.ndarray
    bandwidth: float
    kind: str  # "kde", "histogram" or "point_mass"
    mode: float

    @property
    def point_mass(self) -> bool:
        return self.kind == "point_mass"

    def integral(self) -> float:
        if self.point_mass:
            return 1.0
        return _trapz(self.values, self.grid)


def _trapz(y, x):
    return float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2.0)


def tc_density(
    tcs: Sequence[float],
    grid: Sequence[float] | None = None,
    min_bandwidth: float = 0.0,
    kind: str = "kde",
    n_points: int = 401,
) -> Density:
    """Density of crash times on ``grid``, renormalised to unit trapezoid mass.

    ``kind="kde"`` is a Gaussian kernel estimate with Silverman's bandwidth,
    floored at ``min_bandwidth``; ``kind="histogram"`` bins with that bandwidth
    as bin width. Identical crash times give a point mass instead of a curve.
    """
    x = np.asarray(tcs, dtype=float)
    if x.size == 0:
        raise ValidationError("no crash times for a density")
    if np.ptp(x) == 0:
        return Density(np.array([x[0]]), np.array([1.0]), 0.0, "point_mass", float(x[0]))
    bw = max(silverman_bandwidth(x), min_bandwidth)
    if bw <= 0:
        return Density(np.array([np.median(x)]), np.array([1.0]), 0.0, "point_mass", float(np.median(x)))
    if grid is None:
        grid = np.linspace(x.min() - 4 * bw, x.max() + 4 * bw, n_points)
    grid = np.asarray(grid, dtype=float)
    if kind == "kde":
        z = (grid[:, None] - x[None, :]) / bw
        dens = np.exp(-0.5 * z * z).sum(axis=1) / (x.size * bw * math.sqrt(2 * math.pi))
    elif kind == "histogram":
        edges = np.arange(x.min() - bw / 2, x.max() + bw, bw)
        counts, edges = np.histogram(x, bins=edges)
        idx = np.clip(np.searchsorted(edges, grid, side="right") - 1, 0, counts.size - 1)
        inside = (grid >= edges[0]) & (grid < edges[-1])
        dens = np.where(inside, counts[idx], 0).astype(float)
    else:
        raise ConfigError(f"unknown density kind {kind!r}")
    mass = _trapz(dens, grid)
    if not mass > 0:
        raise ValidationError("density grid does not cover the crash times")
    dens = dens / mass
    return Density(grid, dens, bw, kind, float(grid[int(np.argmax(dens))]))


@dataclass(frozen=True)
class BandRow:
    t: float
    quantiles: dict[float, float] | None
    n_fits: int

    @property
    def gap(self) -> bool:
        return self.quantiles is None


def extrapolation_band(
    fits: Sequence[FitResult],
    future_times: Sequence[float],
    probs: Sequence[float] = BAND_PROBS,
    literal_cos: bool = False,
) -> list[BandRow]:
    """Cross-fit quantiles of model values at each future time.

    A fit contributes at ``t`` only while ``t < tc``; a time with no
    contributing fit is reported as a gap.
    """
    rows = []
    for t in np.asarray(future_times, dtype=float):
        vals = [float(lppl_value(f.nl, f.lin, t, literal_cos)) for f in fits if t < f.nl.tc]
        if vals:
            qs = np.quantile(vals, list(probs), method="linear")
            rows.append(BandRow(float(t), {float(p): float(q) for p, q in zip(probs, qs)}, len(vals)))
        else:
            rows.append(BandRow(float(t), None, 0))
    return rows


@dataclass(frozen=True)
class WindowFailure:
    window: Window
    reason: str


@dataclass(frozen=True)
class EnsembleSummary:
    t2: float
    fits: tuple[FitResult, ...]
    failures: tuple[WindowFailure, ...]
    filtered: tuple[FitResult, ...]
    tc_quantiles: dict[float, float]
    density: Density
    extrapolation: tuple[BandRow, ...]
    spacing: float

    @property
    def n_windows(self) -> int:
        return len(self.fits) + len(self.failures) + len(self.filtered)

    @property
    def n_failed(self) -> int:
        return len(self.failures)

    @property
    def n_success(self) -> int:
        return len(self.fits) + len(self.filtered)

    @property
    def tcs(self) -> np.ndarray:
        return np.array([f.nl.tc for f in self.fits])


def check_coverage(data: TimeSeries, t2: float, span_max: float) -> None:
    """Require observations from ``t2 - span_max`` through ``t2`` (within one spacing)."""
    tol = data.spacing
    if not (data.times[0] - tol <= t2 <= data.times[-1] + tol):
        raise CoverageError(
            f"t2 outside data support [{data.times[0]:.5f}, {data.times[-1]:.5f}]: {t2:.5f}"
        )
    if data.times[0] > t2 - span_max + tol:
        raise CoverageError(
            f"data start {data.times[0]:.5f} is later than the earliest window start {t2 - span_max:.5f}"
        )


def _fit_task(args, trace=None):
    data, window, fit_config = args
    try:
        return fit_window(data, window, fit_config, trace)
    except LPPLError as exc:
        return WindowFailure(window, f"{type(exc).__name__}: {exc}")


def fit_windows(
    data: TimeSeries,
    windows: Sequence[Window],
    fit_config: FitConfig,
    jobs: int = 1,
    executor: Executor | None = None,
    trace: list[FitResult] | None = None,
) -> list[FitResult | WindowFailure]:
    """Fit every window; results keep the order of ``windows`` whatever the parallelism.

    ``trace`` collects every LM run and forces serial execution.
    """
    tasks = [(data, w, fit_config) for w in windows]
    if trace is not None or (executor is None and jobs <= 1):
        return [_fit_task(t, trace) for t in tasks]
    if executor is not None:
        return list(executor.map(_fit_task, tasks))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_fit_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def summarize(
    data: TimeSeries,
    t2: float,
    outcomes: Sequence[FitResult | WindowFailure],
    config: EnsembleConfig,
) -> EnsembleSummary:
    fits = [o for o in outcomes if isinstance(o, FitResult)]
    failures = [o for o in outcomes if isinstance(o, WindowFailure)]
    filtered: list[FitResult] = []
    if config.require_negative_b:
        filtered = [f for f in fits if not f.lin.B < 0]
        fits = [f for f in fits if f.lin.B < 0]
    if not fits:
        reasons = "; ".join(f.reason for f in failures[:3])
        raise EnsembleFailure(
            f"no usable fit at t2={t2:.5f}: {len(failures)} failed, {len(filtered)} filtered ({reasons})"
        )
    tcs = [f.nl.tc for f in fits]
    n_future = math.floor(config.horizon / config.horizon_step + 1e-9) + 1
    future = t2 + config.horizon_step * np.arange(n_future)
    return EnsembleSummary(
        t2=float(t2),
        fits=tuple(fits),
        failures=tuple(failures),
        filtered=tuple(filtered),
        tc_quantiles=tc_quantiles(tcs, config.probs),
        density=tc_density(tcs, min_bandwidth=data.spacing, kind=config.density_kind, n_points=config.density_points),
        extrapolation=tuple(extrapolation_band(fits, future, BAND_PROBS, config.fit.literal_cos)),
        spacing=data.spacing,
    )


def run_ensemble(
    data: TimeSeries,
    t2: float,
    config: EnsembleConfig | None = None,
    jobs: int = 1,
    executor: Executor | None = None,
    trace: list[FitResult] | None = None,
) -> EnsembleSummary:
    """Fit all ``(t1, t2)`` windows for one ``t2`` and aggregate them.

    Failed windows are excluded from the statistics but kept in ``failures``.
    """
    config = config or EnsembleConfig()
    check_coverage(data, t2, config.span_max)
    windows = generate_windows(t2, config.span_min, config.span_max, config.step)
    outcomes = fit_windows(data, windows, config.fit, jobs, executor, trace)
    summary = summarize(data, t2, outcomes, config)
    logger.info(
        "t2=%.5f: %d/%d windows fitted, median tc %.5f",
        t2, summary.n_success, summary.n_windows, float(np.median(summary.tcs)),
    )
    return summary


@dataclass(frozen=True)
class ScanEntry:
    t2: float
    summary: EnsembleSummary | None
    error: str | None = None

    @property
    def mode(self) -> float | None:
        return None if self.summary is None else self.summary.density.mode


@dataclass(frozen=True)
class ScanResult:
    entries: tuple[ScanEntry, ...]

    @property
    def summaries(self) -> list[EnsembleSummary]:
        return [e.summary for e in self.entries if e.summary is not None]

    def stability(self, first: int | None = None) -> dict:
        """Density mode per t2 and how far it moves between successive t2 values.

        ``first`` restricts the totals to the earliest ``first`` successful t2.
        """
        ok = [e for e in self.entries if e.summary is not None]
        if first is not None:
            ok = ok[:first]
        modes = [e.mode for e in ok]
        steps = [b - a for a, b in zip(modes, modes[1:])]
        return {
            "t2": [e.t2 for e in self.entries],
            "mode": [e.mode for e in self.entries],
            "failed": [e.error for e in self.entries],
            "drift": steps,
            "total_drift": float(sum(abs(s) for s in steps)),
            "mode_range": float(max(modes) - min(modes)) if modes else None,
        }


def scan_t2(
    data: TimeSeries,
    center_t2: float,
    n_t2: int = 7,
    step: float = WEEK,
    config: EnsembleConfig | None = None,
    jobs: int = 1,
) -> ScanResult:
    """Run ensembles at ``n_t2`` end dates centred on ``center_t2``.

    Failures at one t2 are recorded in its entry; the scan continues.
    """
    config = config or EnsembleConfig()
    if n_t2 < 1:
        raise ConfigError("n_t2 must be >= 1")
    offsets = np.arange(n_t2) - (n_t2 - 1) / 2
    t2s = [center_t2 + k * step for k in offsets]
    entries = []
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for t2 in t2s:
            try:
                entries.append(ScanEntry(float(t2), run_ensemble(data, t2, config, jobs, pool)))
            except LPPLError as exc:
                entries.append(ScanEntry(float(t2), None, f"{type(exc).__name__}: {exc}"))
    finally:
        if pool is not None:
            pool.shutdown()
    return ScanResult(tuple(entries))
