"""Acceptance criteria, each at its stated tolerance.

Every test appends one PASS/FAIL line to ``conftest.ACCEPTANCE_LINES``; the lines are
printed in the terminal summary. Criteria 2, 3 and 5 share a single seeded parameter
draw, fixed before any result was looked at (see ``draw_truth``).
"""
import json
import math
import os
import time

import mpmath
import numpy as np
import pytest

import conftest
from lpplfit.cli import main
from lpplfit.ensemble import EnsembleConfig, generate_windows, run_ensemble, scan_t2
from lpplfit.model import LinearParams, NonlinearParams, slave_linear
from lpplfit.optimizer import PHI_RANGE, FitConfig, SearchBounds, fit_window
from lpplfit.synth import WEEK, SynthSpec, generate
from lpplfit.timeseries import Window

pytestmark = pytest.mark.acceptance

T2 = 2008.0


def record(number, title, passed, detail):
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    line = f"[{status}] criterion {number}: {title} -- {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def draw_truth(seed):
    """Ground truth for one synthetic trial: tc one to three months past T2."""
    rng = np.random.default_rng(seed)
    tc = T2 + rng.uniform(1 / 12, 3 / 12)
    m = rng.uniform(0.1, 0.9)
    omega = rng.uniform(3.0, 20.0)
    phi = rng.uniform(*PHI_RANGE)
    B = -rng.uniform(0.5, 2.0)
    C = rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 0.5) * abs(B)
    return NonlinearParams(tc, m, omega, phi), LinearParams(10.0, B, C)


def trial_series(seed, noise_frac=0.0):
    """Two years of weekly data ending at T2, noise as a fraction of the clean range."""
    nl, lin = draw_truth(seed)
    clean = generate(SynthSpec(nl, lin, T2 - 2.0, T2)).clean
    sigma = noise_frac * float(np.ptp(clean))
    return nl, generate(SynthSpec(nl, lin, T2 - 2.0, T2, WEEK, sigma, seed)).series


# 1 ------------------------------------------------------------------------


def oracle_linear(nl, times, values, dps=50):
    """Least squares for (A, B, C) in extended precision via the normal equations."""
    with mpmath.workdps(dps):
        tc, m, om, ph = (mpmath.mpf(x) for x in nl.as_array())
        rows = []
        for t in times:
            tau = tc - mpmath.mpf(t)
            f = tau**m
            rows.append([mpmath.mpf(1), f, f * mpmath.cos(om * mpmath.log(tau) + ph)])
        X = mpmath.matrix(rows)
        y = mpmath.matrix([mpmath.mpf(v) for v in values])
        beta = mpmath.lu_solve(X.T * X, X.T * y)
        return np.array([float(beta[i]) for i in range(3)])


def test_slaving_exactness():
    data = conftest.synthetic(noise=0.05, seed=21).series
    window = Window(data.times[0], data.times[-1])
    bounds = SearchBounds.for_window(window)
    rng = np.random.default_rng(2024)
    points = [NonlinearParams(*bounds.to_params(u)) for u in rng.random((100, 4))]
    start = time.perf_counter()
    got = [slave_linear(nl, data)[0].as_array() for nl in points]
    elapsed = time.perf_counter() - start
    worst = 0.0
    for nl, g in zip(points, got):
        ref = oracle_linear(nl, data.times, data.values)
        worst = max(worst, float(np.max(np.abs(g - ref) / np.abs(ref))))
    ok = worst <= 1e-8 and elapsed < 10.0
    record(1, "slaving vs extended-precision oracle", ok,
           f"worst relative error {worst:.2e} (tol 1e-8), {elapsed:.2f}s (limit 10s)")
    assert worst <= 1e-8
    assert elapsed < 10.0


# 2 ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def recovery_runs():
    trace = []
    results = []
    start = time.perf_counter()
    for k in range(50):
        nl, data = trial_series(1000 + k)
        fit = fit_window(data, Window(T2 - 1.0, T2), FitConfig(seed=k), trace=trace)
        results.append((nl, fit))
    return results, trace, time.perf_counter() - start


def test_noiseless_recovery(recovery_runs):
    results, _, elapsed = recovery_runs
    hits = sum(abs(fit.nl.tc - nl.tc) <= WEEK for nl, fit in results)
    m_err = float(np.median([abs(fit.nl.m - nl.m) / nl.m for nl, fit in results]))
    w_err = float(np.median([abs(fit.nl.omega - nl.omega) / nl.omega for nl, fit in results]))
    ok = hits >= 45 and m_err < 0.01 and w_err < 0.01 and elapsed < 600
    record(2, "noiseless recovery", ok,
           f"tc within one week in {hits}/50 (need 45), median rel err m {m_err:.2e}, "
           f"omega {w_err:.2e} (need < 1e-2), {elapsed:.0f}s (limit 600s)")
    assert hits >= 45
    assert m_err < 0.01 and w_err < 0.01
    assert elapsed < 600


# 3 ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def coverage_runs():
    trace = []
    results = []
    start = time.perf_counter()
    for k in range(20):
        nl, data = trial_series(2000 + k, noise_frac=0.01)
        cfg = EnsembleConfig(fit=FitConfig(seed=k))
        summary = run_ensemble(data, float(data.times[-1]), cfg, trace=trace)
        results.append((nl, summary))
    return results, trace, time.perf_counter() - start


def test_noisy_coverage(coverage_runs):
    results, _, elapsed = coverage_runs
    hits = 0
    misses = []
    for nl, s in results:
        lo, hi = s.tc_quantiles[0.05], s.tc_quantiles[0.95]
        if lo <= nl.tc <= hi:
            hits += 1
        else:
            misses.append(f"{nl.tc:.4f} not in [{lo:.4f}, {hi:.4f}]")
    assert all(s.n_windows == 53 for _, s in results)
    ok = hits >= 16 and elapsed < 1800
    detail = f"5-95% band holds tc in {hits}/20 (need 16), {elapsed:.0f}s (limit 1800s)"
    if misses:
        detail += "; misses: " + ", ".join(misses)
    record(3, "noisy coverage", ok, detail)
    assert hits >= 16
    assert elapsed < 1800


# 4 ------------------------------------------------------------------------


def test_stability_diagnostic():
    nl = NonlinearParams(T2 + 0.1, 0.5, 8.0, 1.0)
    lin = LinearParams(10.0, -2.0, 0.3)
    last_t2 = nl.tc - 2 * WEEK
    clean = generate(SynthSpec(nl, lin, last_t2 - 2.0, last_t2)).clean
    spec = SynthSpec(nl, lin, last_t2 - 2.0, last_t2, WEEK, 0.01 * float(np.ptp(clean)), 7)
    data = generate(spec).series
    scan = scan_t2(data, nl.tc - 5 * WEEK)
    t2s = [e.t2 for e in scan.entries]
    stab = scan.stability(first=4)
    modes = [e.mode for e in scan.entries]
    limit = 2 * data.spacing
    ok = all(e.summary is not None for e in scan.entries[:4]) and stab["total_drift"] <= limit
    record(4, "stability of density modes", ok,
           f"total drift over earliest 4 t2 = {stab['total_drift'] * 365.25:.2f} days "
           f"(limit {limit * 365.25:.2f}); modes {[round(m, 4) for m in modes[:4]]}")
    assert nl.tc - t2s[0] == pytest.approx(8 * WEEK) and nl.tc - t2s[-1] == pytest.approx(2 * WEEK)
    assert stab["total_drift"] <= limit


# 5 ------------------------------------------------------------------------


def test_lm_contract(recovery_runs, coverage_runs):
    runs = recovery_runs[1] + coverage_runs[1]
    bad_hist = bad_bounds = 0
    for r in runs:
        h = np.asarray(r.ssr_history)
        if h.size > 1 and not np.all(np.diff(h) < 0):
            bad_hist += 1
        if h.size and r.ssr != h[-1]:
            bad_hist += 1
        w = r.window
        b = SearchBounds.for_window(w)
        if not b.contains(r.nl) or not r.nl.tc <= w.t2 + 0.375 * (w.t2 - w.t1):
            bad_bounds += 1
    ok = bad_hist == 0 and bad_bounds == 0 and len(runs) > 0
    record(5, "LM contract", ok,
           f"{len(runs)} logged runs, {bad_hist} non-decreasing histories, {bad_bounds} bound violations")
    assert len(runs) > 0
    assert bad_hist == 0 and bad_bounds == 0


# 6 ------------------------------------------------------------------------


def test_window_counts():
    n_windows = len(generate_windows(T2))
    data = conftest.synthetic(start=T2 - 2.0, end=T2 + 0.06).series
    cheap = EnsembleConfig(step=26 * WEEK, fit=FitConfig(tabu_evals=100, n_candidates=1))
    scan = scan_t2(data, T2 - 0.03, config=cheap)
    t2s = [e.t2 for e in scan.entries]
    span_days = (t2s[-1] - t2s[0]) * 365.25
    ok = n_windows == 53 and len(t2s) == 7 and round(span_days) == 42
    record(6, "window-count arithmetic", ok,
           f"{n_windows} windows (need 53), {len(t2s)} ensembles (need 7) spanning {span_days:.6f} days (need 42)")
    assert n_windows == 53
    assert len(t2s) == 7
    assert round(span_days) == 42 and abs(span_days - 42) < 1e-6


# 7 ------------------------------------------------------------------------


def test_determinism(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--noise-sigma", "0.02", "--seed", "5"]) == 0
    csv = str(tmp_path / "synth_2008-02-13.csv")
    cfg = tmp_path / "cfg.ini"
    cfg.write_text("[lpplfit]\ntabu_evals = 300\nn_candidates = 3\nseed = 11\nformat = both\n")

    def fit(name, jobs):
        out = tmp_path / name
        argv = ["fit", csv, "--t2", "2008-02-13", "--config", str(cfg), "--jobs", str(jobs), "--out", str(out)]
        assert main(argv) == 0
        return {p.name: p.read_bytes() for p in sorted(out.iterdir())}

    a, b, c, d = fit("a", 1), fit("b", 1), fit("c", 1), fit("d", 8)
    same_repeat = a == b
    same_jobs = c == d
    ok = same_repeat and same_jobs and len(a) == 4
    record(7, "determinism", ok,
           f"repeat run identical: {same_repeat}; --jobs 1 vs 8 identical: {same_jobs}; {len(a)} files compared")
    assert len(a) == 4
    assert same_repeat and same_jobs


# 8 ------------------------------------------------------------------------

REPOS = os.environ.get("LPPLFIT_REPOS_CSV")


@pytest.mark.skipif(not REPOS, reason="set LPPLFIT_REPOS_CSV to a weekly total-repos CSV to run")
def test_replication(tmp_path):
    argv = ["fit", REPOS, "--t2", "2008-02-13", "--ma", "13", "--out", str(tmp_path)]
    for flag, env in (("--date-column", "LPPLFIT_REPOS_DATE_COLUMN"), ("--value-column", "LPPLFIT_REPOS_VALUE_COLUMN")):
        if os.environ.get(env):
            argv += [flag, os.environ[env]]
    assert main(argv) == 0
    doc = json.loads((tmp_path / "fit_2008-02-13.json").read_text())
    t2 = doc["t2"]
    q20, q80 = doc["tc_quantiles"]["q20"], doc["tc_quantiles"]["q80"]
    band_ok = t2 < q20 <= q80 <= t2 + 0.375 * 1.5
    med = [row["q50"] for row in doc["extrapolation"] if not row["gap"]]
    peak = int(np.argmax(med)) if med else 0
    turns = 0 < peak < len(med) - 1 or (len(med) > 1 and med[1] < med[0])
    ok = band_ok and turns
    record(8, "replication on user-supplied data", ok,
           f"20-80% tc band [{q20:.4f}, {q80:.4f}] after t2 {t2:.4f} and within bound: {band_ok}; "
           f"median extrapolation turns over: {turns}")
    assert band_ok and turns


def test_replication_skip_is_recorded():
    if not REPOS:
        record(8, "replication on user-supplied data", None,
               "LPPLFIT_REPOS_CSV not set; the source data is not redistributable")
    assert math.isfinite(T2)
