"""Global calibration of the slaved LPPL objective over (tc, m, omega, phi).

A taboo search over the normalised 4-D box proposes start points, each of
which is refined by a bounded Levenberg-Marquardt iteration.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, fields, replace
from typing import Any

import numpy as np
from scipy.stats import qmc

from .errors import (
    ConfigError,
    DegenerateBasisError,
    DomainError,
    FitFailure,
    JacobianError,
    SearchFailure,
    WindowFitFailure,
)
from .model import (
    COND_THRESHOLD,
    LinearParams,
    NonlinearParams,
    fd_steps,
    finite_difference_jacobian,
    slave_batch,
)
from .timeseries import TimeSeries, Window, slice_window

logger = logging.getLogger(__name__)

M_RANGE = (0.001, 1.999)
OMEGA_RANGE = (0.01, 40.0)
PHI_RANGE = (0.001, 2 * math.pi - 0.001)
TC_FACTOR = 0.375
# tc = t2 exactly puts a zero in tau at an observation on t2
TC_GAP = 1e-6


@dataclass(frozen=True)
class SearchBounds:
    tc_range: tuple[float, float]
    m_range: tuple[float, float] = M_RANGE
    omega_range: tuple[float, float] = OMEGA_RANGE
    phi_range: tuple[float, float] = PHI_RANGE

    def __post_init__(self):
        for name in ("tc_range", "m_range", "omega_range", "phi_range"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ConfigError(f"{name} must be a nonempty finite interval, got {(lo, hi)}")

    @classmethod
    def for_window(cls, window: Window, **overrides) -> "SearchBounds":
        """Box for one window: tc in [t2, t2 + 0.375 (t2 - t1)]."""
        span = window.t2 - window.t1
        tc = (window.t2 + TC_GAP * span, window.t2 + TC_FACTOR * span)
        return cls(tc_range=tc, **overrides)

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.tc_range[0], self.m_range[0], self.omega_range[0], self.phi_range[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.tc_range[1], self.m_range[1], self.omega_range[1], self.phi_range[1]])

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def to_params(self, u: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(u) * self.width

    def to_unit(self, p: np.ndarray) -> np.ndarray:
        w = self.width
        safe = np.where(w > 0, w, 1.0)
        return np.where(w > 0, (np.asarray(p) - self.lower) / safe, 0.0)

    def clip(self, p: np.ndarray) -> np.ndarray:
        return np.clip(p, self.lower, self.upper)

    def contains(self, nl: NonlinearParams | np.ndarray) -> bool:
        p = nl.as_array() if isinstance(nl, NonlinearParams) else np.asarray(nl)
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))


@dataclass(frozen=True)
class FitConfig:
    """Knobs for one window fit. Defaults are the documented design values."""

    n_candidates: int = 10
    tabu_evals: int = 2000
    tabu_regions: int = 3
    tabu_step: float = 0.1
    tabu_step_floor: float = 1e-4
    tabu_patience: int = 5
    tabu_tenure: int = 50
    tabu_radius: float = 1e-3
    distinct_frac: float = 0.01
    lm_lambda0: float = 1e-3
    lm_max_iter: int = 500
    lm_ftol: float = 1e-10
    lm_xtol: float = 1e-10
    cond_threshold: float = COND_THRESHOLD
    literal_cos: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ConfigError("n_candidates must be >= 1")
        if self.tabu_evals < 9 or self.tabu_regions < 1:
            raise ConfigError("taboo budget too small")
        if not 0 < self.tabu_step_floor <= self.tabu_step <= 1:
            raise ConfigError("need 0 < tabu_step_floor <= tabu_step <= 1")
        if self.lm_max_iter < 1:
            raise ConfigError("lm_max_iter must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @classmethod
    def from_mapping(cls, mapping: dict[str, Any]) -> "FitConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in mapping.items():
            if key not in known:
                continue
            default = getattr(cls, key)
            if isinstance(default, bool):
                value = value if isinstance(value, bool) else str(value).strip().lower() in ("1", "true", "yes", "on")
            else:
                try:
                    value = type(default)(value)
                except (TypeError, ValueError):
                    raise ConfigError(f"{key}: cannot read {value!r} as {type(default).__name__}") from None
            kwargs[key] = value
        return cls(**kwargs)


@dataclass(frozen=True)
class FitResult:
    window: Window
    nl: NonlinearParams
    lin: LinearParams
    ssr: float
    n_obs: int
    converged: bool
    seed: int
    stop_reason: str = ""
    n_iter: int = 0
    ssr_history: tuple[float, ...] = field(default=(), repr=False, compare=False)
    start: NonlinearParams | None = field(default=None, repr=False, compare=False)


class _Evaluator:
    """Batched objective on the unit cube with an evaluation counter."""

    def __init__(self, data: TimeSeries, bounds: SearchBounds, config: FitConfig):
        self.data = data
        self.bounds = bounds
        self.config = config
        self.n_evals = 0

    def __call__(self, units: np.ndarray) -> np.ndarray:
        units = np.atleast_2d(units)
        self.n_evals += units.shape[0]
        out = slave_batch(
            self.data.times,
            self.data.values,
            self.bounds.to_params(units),
            self.config.literal_cos,
            self.config.cond_threshold,
        )
        return out.ssr


def derive_seed(seed: int, *keys: float) -> int:
    """Stable 63-bit seed from a global seed and float keys (e.g. t1, t2)."""
    words = np.frombuffer(np.asarray(keys, dtype="<f8").tobytes(), dtype="<u4")
    ss = np.random.SeedSequence([int(seed), *map(int, words)])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def _distinct_best(values: np.ndarray, units: np.ndarray, n: int, frac: float) -> list[int]:
    order = np.argsort(values, kind="stable")
    picked: list[int] = []
    for idx in order:
        if not np.isfinite(values[idx]):
            break
        u = units[idx]
        if all(np.any(np.abs(u - units[j]) >= frac) for j in picked):
            picked.append(int(idx))
            if len(picked) == n:
                break
    return picked


def taboo_search(
    data: TimeSeries,
    bounds: SearchBounds,
    seed: int,
    n_candidates: int = 10,
    config: FitConfig | None = None,
) -> list[NonlinearParams]:
    """Best distinct points visited by a taboo search, sorted by objective.

    Each of ``config.tabu_regions`` independent runs starts at the next point of
    a scrambled Halton sequence and spends ``config.tabu_evals`` evaluations.
    One iteration evaluates the eight coordinate moves ``u +/- step*e_i`` and
    moves to the best non-taboo one, even if it is uphill. A destination is
    taboo when it lies within ``tabu_radius`` (every coordinate) of one of the
    last ``tabu_tenure`` visited points, unless it beats the global best.
    The step halves after ``tabu_patience`` iterations without a new best;
    when it hits the floor, or no move is admissible, the run restarts from
    the next Halton point.
    """
    config = config or FitConfig()
    ev = _Evaluator(data, bounds, config)
    rng = np.random.Generator(np.random.PCG64(seed))
    halton = qmc.Halton(d=4, scramble=True, seed=rng)
    eye = np.eye(4)
    moves = np.vstack([eye, -eye])

    seen_u: list[np.ndarray] = []
    seen_f: list[np.ndarray] = []
    global_best = np.inf

    def record(u, f):
        seen_u.append(np.atleast_2d(u))
        seen_f.append(np.atleast_1d(f))

    for _region in range(config.tabu_regions):
        budget = config.tabu_evals
        restart = True
        while budget > 0:
            if restart:
                u = halton.random(1)[0]
                f = ev(u)[0]
                budget -= 1
                record(u, f)
                global_best = min(global_best, f)
                run_best = f
                step = config.tabu_step
                stall = 0
                tabu: deque[np.ndarray] = deque([u], maxlen=config.tabu_tenure)
                restart = False
                continue
            if budget < len(moves):
                break
            cand = np.clip(u + step * moves, 0.0, 1.0)
            fc = ev(cand)
            budget -= len(cand)
            record(cand, fc)
            tabu_arr = np.asarray(tabu)
            is_tabu = np.any(
                np.all(np.abs(cand[:, None, :] - tabu_arr[None, :, :]) <= config.tabu_radius, axis=2),
                axis=1,
            )
            admissible = np.isfinite(fc) & (~is_tabu | (fc < global_best))
            if not admissible.any():
                restart = True
                continue
            pick = int(np.argmin(np.where(admissible, fc, np.inf)))
            u, f = cand[pick], fc[pick]
            tabu.append(u)
            global_best = min(global_best, f)
            if f < run_best:
                run_best = f
                stall = 0
            else:
                stall += 1
                if stall >= config.tabu_patience:
                    stall = 0
                    if step <= config.tabu_step_floor:
                        restart = True
                    step = max(step / 2.0, config.tabu_step_floor)

    units = np.vstack(seen_u)
    values = np.concatenate(seen_f)
    if not np.isfinite(values).any():
        raise SearchFailure(f"every one of {values.size} visited points was degenerate or infeasible")
    picked = _distinct_best(values, units, n_candidates, config.distinct_frac)
    logger.debug("taboo search: %d evaluations, best ssr %.6g", ev.n_evals, values[picked[0]])
    return [NonlinearParams.from_array(bounds.to_params(units[i])) for i in picked]


def levenberg_marquardt(
    data: TimeSeries,
    init: NonlinearParams,
    bounds: SearchBounds,
    config: FitConfig | None = None,
    window: Window | None = None,
) -> FitResult:
    """Bounded Levenberg-Marquardt on the slaved residual vector.

    Damping follows Marquardt's scaling, ``(J'J + lam*diag(J'J)) dp = -J'r``.
    Trial points are projected onto the box and accepted only if they lower
    the sum of squares, so the recorded ``ssr_history`` is strictly
    decreasing. Stops on relative improvement below ``lm_ftol``, a projected
    step (in box-normalised units) below ``lm_xtol``, an exact fit (residuals at
    round-off level), or ``lm_max_iter`` trials; only the last is reported as
    not converged.
    """
    config = config or FitConfig()
    times, values = data.times, data.values
    lower, upper, width = bounds.lower, bounds.upper, bounds.width
    wsafe = np.where(width > 0, width, 1.0)

    def evaluate(batch):
        return slave_batch(times, values, batch, config.literal_cos, config.cond_threshold)

    p = init.as_array()
    if not bounds.contains(p):
        raise FitFailure(f"start point {init} lies outside the search box", init)
    cur = evaluate(p)
    if not cur.ok[0]:
        raise FitFailure(f"degenerate basis at start point (condition {cur.cond[0]:.3g})", init)
    r, ssr, lin = cur.resid[0], float(cur.ssr[0]), cur.lin[0]
    floor_ssr = (np.finfo(float).eps ** 2) * float(values @ values) * values.size

    def jac_func(batch):
        out = evaluate(batch)
        return out.resid, out.ok

    lam = config.lm_lambda0
    history = [ssr]
    stop, converged = "max_iter", False
    n_iter = 0
    J = None
    for n_iter in range(1, config.lm_max_iter + 1):
        if ssr <= floor_ssr:
            stop, converged = "exact_fit", True
            break
        if J is None:
            mags = p.copy()
            mags[0] = p[0] - times[0]
            try:
                J = finite_difference_jacobian(jac_func, p, fd_steps(p, mags), lower, upper, center=r)
            except JacobianError as exc:
                if len(history) == 1:
                    raise FitFailure(f"Jacobian unavailable at start point: {exc}", init) from exc
                stop, converged = "jacobian_error", False
                break
            H = J.T @ J
            g = J.T @ r
            diag = np.diag(H).copy()
            diag[diag <= 0] = np.finfo(float).tiny
        try:
            dp = np.linalg.solve(H + lam * np.diag(diag), -g)
        except np.linalg.LinAlgError:
            dp = np.linalg.lstsq(H + lam * np.diag(diag), -g, rcond=None)[0]
        trial = bounds.clip(p + dp)
        if np.linalg.norm((trial - p) / wsafe) < config.lm_xtol:
            stop, converged = "xtol", True
            break
        out = evaluate(trial)
        new_ssr = float(out.ssr[0])
        if out.ok[0] and new_ssr < ssr:
            rel = (ssr - new_ssr) / ssr
            p, r, ssr, lin = trial, out.resid[0], new_ssr, out.lin[0]
            history.append(ssr)
            lam = max(lam / 10.0, 1e-15)
            J = None
            if rel < config.lm_ftol:
                stop, converged = "ftol", True
                break
        else:
            lam *= 10.0
            if lam > 1e20:
                stop, converged = "xtol", True
                break

    nl = NonlinearParams.from_array(p)
    return FitResult(
        window=window if window is not None else Window(float(times[0]), float(times[-1])),
        nl=nl,
        lin=LinearParams(*map(float, lin)),
        ssr=ssr,
        n_obs=int(values.size),
        converged=converged,
        seed=config.seed,
        stop_reason=stop,
        n_iter=n_iter,
        ssr_history=tuple(history),
        start=init,
    )


def fit_window(
    data: TimeSeries,
    window: Window,
    config: FitConfig | None = None,
    trace: list[FitResult] | None = None,
) -> FitResult:
    """Calibrate one ``(t1, t2)`` window: taboo starts, LM refinement, keep the best.

    The search seed is derived from ``config.seed`` and the window bounds, so
    the result does not depend on which other windows run, or in what order.
    Every refined start is appended to ``trace`` when one is given.
    """
    config = config or FitConfig()
    sub = slice_window(data, window)
    bounds = SearchBounds.for_window(window)
    seed = derive_seed(config.seed, window.t1, window.t2)
    try:
        starts = taboo_search(sub, bounds, seed, config.n_candidates, config)
    except SearchFailure as exc:
        raise WindowFitFailure(f"taboo search failed on {window}: {exc}", [str(exc)]) from exc

    best: FitResult | None = None
    causes: list[str] = []
    for start in starts:
        try:
            res = levenberg_marquardt(sub, start, bounds, config, window)
        except (FitFailure, DegenerateBasisError, DomainError) as exc:
            causes.append(f"{start}: {exc}")
            continue
        if trace is not None:
            trace.append(res)
        if best is None or res.ssr < best.ssr:
            best = res
    if best is None:
        raise WindowFitFailure(f"all {len(starts)} starts failed on {window}", causes)
    return best


def with_overrides(config: FitConfig, **kwargs) -> FitConfig:
    return replace(config, **kwargs)
