"""LPPL model core.

    R(t) = A + B*tau**m + C*tau**m*cos(omega*ln(tau) + phi),   tau = tc - t

The linear triple (A, B, C) is never searched: for a given nonlinear quadruple
(tc, m, omega, phi) it is the exact least-squares solution on the data, so the
objective is a function of four parameters only.

Everything here works on batches of parameter points (rows of a ``(K, 4)``
array) because the optimizers evaluate whole neighbourhoods at once.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import DegenerateBasisError, DomainError, JacobianError
from .timeseries import TimeSeries

#: Condition limit of the (column-equilibrated) normal matrix.
COND_THRESHOLD = 1e12

PARAM_NAMES = ("tc", "m", "omega", "phi")


@dataclass(frozen=True)
class NonlinearParams:
    tc: float
    m: float
    omega: float
    phi: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, p) -> "NonlinearParams":
        tc, m, omega, phi = (float(x) for x in p)
        return cls(tc, m, omega, phi)


@dataclass(frozen=True)
class LinearParams:
    A: float
    B: float
    C: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


def _phase(tau, omega, phi, literal_cos: bool):
    # literal form cos(ln(omega*tau) + phi) kept only for comparison runs
    if literal_cos:
        return np.log(omega * tau) + phi
    return omega * np.log(tau) + phi


def lppl_value(nl: NonlinearParams, lin: LinearParams, t, literal_cos: bool = False):
    """Evaluate the model at ``t`` (scalar or array); requires every ``t < tc``."""
    t_arr = np.asarray(t, dtype=float)
    tau = nl.tc - t_arr
    if np.any(~(tau > 0)):
        raise DomainError(f"model undefined at t >= tc ({nl.tc})")
    f = tau**nl.m
    out = lin.A + lin.B * f + lin.C * f * np.cos(_phase(tau, nl.omega, nl.phi, literal_cos))
    return float(out) if np.ndim(out) == 0 else out


class SlaveBatch(NamedTuple):
    lin: np.ndarray  # (K, 3) A, B, C
    ssr: np.ndarray  # (K,), +inf where not ok
    resid: np.ndarray  # (K, N) data - model, nan where not ok
    cond: np.ndarray  # (K,) condition of the equilibrated normal matrix
    ok: np.ndarray  # (K,) bool


def slave_batch(
    times: np.ndarray,
    values: np.ndarray,
    params: np.ndarray,
    literal_cos: bool = False,
    cond_threshold: float = COND_THRESHOLD,
) -> SlaveBatch:
    """Solve the linear sub-problem for every row of ``params``.

    The design matrix ``[1, f, g]`` is scaled to unit column norms and
    factorised by SVD; the reported condition is that of the scaled normal
    matrix, ``(s_max / s_min)**2``. Rows whose basis is undefined (some
    ``t >= tc``) or whose condition exceeds ``cond_threshold`` come back with
    ``ok = False`` and ``ssr = inf``.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    k, n = params.shape[0], times.size
    tc, m, omega, phi = (params[:, j : j + 1] for j in range(4))
    tau = tc - times[None, :]
    domain_ok = np.all(tau > 0, axis=1)
    with np.errstate(all="ignore"):
        f = tau**m
        g = f * np.cos(_phase(tau, omega, phi, literal_cos))
    X = np.empty((k, n, 3))
    X[:, :, 0] = 1.0
    X[:, :, 1] = f
    X[:, :, 2] = g
    finite = domain_ok & np.all(np.isfinite(X), axis=(1, 2))
    X[~finite] = 0.0
    X[~finite, :3, :] = np.eye(3)

    scale = np.linalg.norm(X, axis=1)  # (K, 3)
    scale[scale == 0] = 1.0
    Xs = X / scale[:, None, :]
    U, s, Vt = np.linalg.svd(Xs, full_matrices=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = (s[:, 0] / s[:, -1]) ** 2
    ok = finite & np.isfinite(cond) & (cond <= cond_threshold)
    cond = np.where(finite, cond, np.inf)

    with np.errstate(divide="ignore", invalid="ignore"):
        uty = np.einsum("knj,n->kj", U, values) / s
        coef = np.einsum("kji,kj->ki", Vt, uty) / scale
        resid = values[None, :] - np.einsum("knj,kj->kn", X, coef)
    resid[~ok] = np.nan
    coef[~ok] = np.nan
    ssr = np.where(ok, np.einsum("kn,kn->k", resid, resid), np.inf)
    return SlaveBatch(coef, ssr, resid, cond, ok)


def _check_single(batch: SlaveBatch, nl: NonlinearParams, data: TimeSeries) -> None:
    if batch.ok[0]:
        return
    if not nl.tc > data.times.max():
        raise DomainError(f"tc={nl.tc} does not exceed the last observation time {data.times.max()}")
    raise DegenerateBasisError(
        f"degenerate basis at {nl} (condition {batch.cond[0]:.3g})", float(batch.cond[0])
    )


def slave_linear(
    nl: NonlinearParams,
    data: TimeSeries,
    literal_cos: bool = False,
    cond_threshold: float = COND_THRESHOLD,
) -> tuple[LinearParams, float]:
    """Least-squares (A, B, C) for fixed nonlinear parameters, plus the condition estimate."""
    batch = slave_batch(data.times, data.values, nl.as_array(), literal_cos, cond_threshold)
    _check_single(batch, nl, data)
    return LinearParams(*map(float, batch.lin[0])), float(batch.cond[0])


def residuals(nl: NonlinearParams, data: TimeSeries, literal_cos: bool = False) -> np.ndarray:
    batch = slave_batch(data.times, data.values, nl.as_array(), literal_cos)
    _check_single(batch, nl, data)
    return batch.resid[0]


def objective(nl: NonlinearParams, data: TimeSeries, literal_cos: bool = False) -> float:
    """Sum of squared residuals with (A, B, C) slaved.

    Raises :class:`DegenerateBasisError` rather than returning a sentinel; the
    search routines use :func:`slave_batch` directly and read its ``ok`` mask.
    """
    batch = slave_batch(data.times, data.values, nl.as_array(), literal_cos)
    _check_single(batch, nl, data)
    return float(batch.ssr[0])


def fd_steps(p: np.ndarray, magnitudes: np.ndarray | None = None, rel_step: float = 1e-6, floor: float = 1e-8) -> np.ndarray:
    mags = np.abs(p) if magnitudes is None else np.abs(magnitudes)
    return np.maximum(rel_step * mags, floor)


def finite_difference_jacobian(
    func: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    p: np.ndarray,
    steps: np.ndarray,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
    center: np.ndarray | None = None,
) -> np.ndarray:
    """Central-difference Jacobian of a vector function.

    ``func`` maps a ``(K, d)`` batch of points to ``(values (K, N), ok (K,))``.
    A side that leaves ``[lower, upper]`` or comes back not ok is dropped in
    favour of a one-sided difference; losing both sides raises
    :class:`JacobianError`.
    """
    p = np.asarray(p, dtype=float)
    d = p.size
    eye = np.eye(d) * steps[:, None]
    pts = np.vstack([p + eye, p - eye])
    inside = np.ones(2 * d, dtype=bool)
    if lower is not None:
        inside &= np.all(pts >= lower, axis=1)
    if upper is not None:
        inside &= np.all(pts <= upper, axis=1)
    if center is None:
        vals, ok = func(np.vstack([p[None, :], pts]))
        center, vals, ok = vals[0], vals[1:], ok[1:]
    else:
        vals, ok = func(pts)
    ok = ok & inside
    plus, minus = vals[:d], vals[d:]
    ok_p, ok_m = ok[:d], ok[d:]

    jac = np.empty((center.size, d))
    for j in range(d):
        if ok_p[j] and ok_m[j]:
            jac[:, j] = (plus[j] - minus[j]) / (2.0 * steps[j])
        elif ok_p[j]:
            jac[:, j] = (plus[j] - center) / steps[j]
        elif ok_m[j]:
            jac[:, j] = (center - minus[j]) / steps[j]
        else:
            raise JacobianError(f"both finite-difference sides infeasible for parameter {j}")
    return jac


def residual_jacobian(
    nl: NonlinearParams,
    data: TimeSeries,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
    literal_cos: bool = False,
    rel_step: float = 1e-6,
    floor: float = 1e-8,
) -> np.ndarray:
    """d residual_i / d(tc, m, omega, phi), re-slaving (A, B, C) at every perturbed point.

    Steps are ``max(rel_step * |p|, floor)``. The magnitude used for ``tc`` is
    its distance from the first observation, since an absolute calendar year
    would give steps comparable to the weekly spacing.
    """
    p = nl.as_array()
    center = slave_batch(data.times, data.values, p, literal_cos)
    _check_single(center, nl, data)
    mags = p.copy()
    mags[0] = p[0] - data.times[0]
    steps = fd_steps(p, mags, rel_step, floor)

    def func(batch):
        out = slave_batch(data.times, data.values, batch, literal_cos)
        return out.resid, out.ok

    return finite_difference_jacobian(func, p, steps, lower, upper, center=center.resid[0])
