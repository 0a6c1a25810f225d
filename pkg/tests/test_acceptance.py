"""Acceptance criteria 1-11, one PASS/FAIL line each (see the terminal summary)."""

import csv
import hashlib
import json
import math
import time
import warnings

import numpy as np
import pytest
from conftest import record_criterion

from proxtail import bounds, verify
from proxtail.cli import main
from proxtail.model import component_gradients, full_gradient, quadratic_objective
from proxtail.montecarlo import (
    ExperimentConfig,
    auto_epsilon_grid,
    empirical_tail,
    expectation_check,
    quantile_levels,
    quantile_series,
    run_experiment,
    subsampling_expectation_lambda,
    supermartingale_check,
    tail_bound_functions,
)
from proxtail.sampling import (
    GAUSSIAN,
    WITHOUT_REPLACEMENT,
    ErrorModel,
    SampleSchedule,
    concentration_eta,
    error_variance_without_replacement,
    population_variance,
    subset_from_keys,
    substream,
)
from proxtail.solver import RateConstants, check_pathwise_bound, check_sufficient_decrease, rate_constants
from proxtail.verify import concentration_tail_check


def logistic_config(logistic_desk, N, k_max, seed=2024, **kw):
    spec, data = logistic_desk
    schedule = SampleSchedule(1.0, 0.91, "without_replacement", data.M)
    return ExperimentConfig(
        spec, data, np.zeros(spec.n), ErrorModel(WITHOUT_REPLACEMENT), k_max, N,
        master_seed=seed, schedule=schedule, **kw,
    )


@pytest.fixture(scope="module")
def desk_run(logistic_desk):
    """Criterion-1 experiment: N = 1000, k <= 200, beta = 0.91, m_0 = 1."""
    cfg = logistic_config(logistic_desk, 1000, 200, track_population=True)
    t0 = time.perf_counter()
    ens = run_experiment(cfg)
    return cfg, ens, time.perf_counter() - t0


@pytest.fixture(scope="module")
def fan_run(logistic_desk):
    """N = 10^4 logistic run to saturation, for criteria 8 and 10."""
    spec, data = logistic_desk
    k_max = math.ceil(math.log(data.M**2) / math.log(1 / 0.91))
    cfg = logistic_config(logistic_desk, 10_000, k_max, seed=77, track_population=True, track_distance=True)
    return cfg, run_experiment(cfg)


def test_criterion_01_pathwise(desk_run):
    cfg, ens, elapsed = desk_run
    slack = check_pathwise_bound(ens)
    tol = 1e-9 * np.maximum(1.0, np.abs(ens.pi[:, :1]))
    bad = int(np.sum(slack < -tol))
    ok = bad == 0 and len(ens) == 1000 and elapsed < 60.0 and ens.m[-1] == 100
    record_criterion(1, ok, f"{len(ens)} replicates x {ens.k_max} steps, violations={bad}, "
                     f"min slack={slack.min():.3e}, runtime={elapsed:.1f}s")
    assert ok


def test_criterion_02_sufficient_decrease(desk_run):
    _, ens, _ = desk_run
    holds = check_sufficient_decrease(ens)
    bad = int(np.sum(~holds))
    record_criterion(2, bad == 0, f"{holds.size} steps checked, violations={bad}")
    assert bad == 0


def test_criterion_03_closed_vs_numeric():
    worst, at_threshold_ok, points = 0.0, True, 0
    for k in (1, 10):
        c = rate_constants(1.0, 2.0)
        R = bounds.discount_sum(c.contraction, k)
        for n in range(1, 6):
            for sigma in (0.1, 1.0, 3.0):
                mgf = bounds.MgfFamily.gaussian(sigma, n)
                thr = n * sigma**2 * R / c.curvature
                at_threshold_ok &= bounds.gaussian_tail_bound_iid(n, sigma, c.curvature, R, thr) == 1.0
                at_threshold_ok &= bounds.generic_tail_bound(thr, k, c, mgf) == 1.0
                for eps in thr * (1 + np.geomspace(1e-3, 30, 20)):
                    closed = bounds.gaussian_tail_bound_iid(n, sigma, c.curvature, R, eps)
                    numeric = bounds.generic_tail_bound(eps, k, c, mgf)
                    worst = max(worst, abs(closed - numeric) / closed)
                    points += 1
    ok = worst <= 1e-6 and at_threshold_ok
    record_criterion(3, ok, f"{points} points, worst relative error={worst:.2e}, threshold values exact: {at_threshold_ok}")
    assert ok


def test_criterion_04_product_inequalities():
    results = [verify.check_qpochhammer("fine"), verify.check_finite_product("fine"), verify.check_tedious("fine")]
    ok = all(r.violations == 0 and r.points >= 10_000 for r in results)
    record_criterion(4, ok, "; ".join(f"{r.name}: {r.points} pts, {r.violations} violations" for r in results))
    assert ok


def test_criterion_05_tail_validity():
    # start at the minimiser so pi_0 = 0 and the deviation is pi_k itself; from any
    # other start rho^k pi_0 (rho = 40/41 or closer to 1) swamps the noise and no
    # deviation is ever positive
    details, ok = [], True
    for hessian in (np.eye(1), np.diag([1.0, 0.25])):
        spec = quadratic_objective(hessian)
        n = spec.n
        cfg = ExperimentConfig(spec, None, np.zeros(n), ErrorModel(GAUSSIAN, sigma=0.1), 50, 100_000, master_seed=5)
        ens = run_experiment(cfg)
        k_set = [5, 20, 50]
        main_b, gauss_b, _ = tail_bound_functions(cfg, ens, n)
        grid = auto_epsilon_grid(ens, k_set, size=30)
        est = empirical_tail(ens, grid, k_set, bound_main=main_b, bound_gaussian=gauss_b)
        bad = [e for e in est if e.ci_low > e.bound_main or e.ci_low > e.bound_gaussian]
        hits = sum(e.p_hat > 0 for e in est)
        informative = sum(e.p_hat > 0 and min(e.bound_main, e.bound_gaussian) < 1 for e in est)
        ok &= not bad and hits > 0
        details.append(f"{n}-D: {len(est)} pts, {hits} with p_hat>0, {informative} of those with a bound < 1, "
                       f"ci_low above a bound at {len(bad)}")
    record_criterion(5, ok, "N=1e5, k in {5,20,50}; " + "; ".join(details))
    assert ok


def test_criterion_06_without_replacement_variance(logistic_desk):
    spec, data = logistic_desk
    x = np.random.default_rng(0).standard_normal(spec.n)
    G = component_gradients(spec, data, x)
    g = full_gradient(spec, data, x)
    S = population_variance(spec, data, x)
    stream = substream(6, 6)
    details, ok = [], True
    for m in (1, 5, 20, 100):
        sq = []
        for _ in range(10):  # 10^5 draws in chunks
            keys = stream.random((10_000, data.M))
            idx = subset_from_keys(keys, m)
            err = G[idx].mean(axis=1) - g
            sq.append(np.sum(err**2, axis=1))
        sq = np.concatenate(sq)
        want = error_variance_without_replacement(S, m, data.M)
        se = sq.std(ddof=1) / math.sqrt(sq.size)
        if m == data.M:
            good = want == 0.0 and float(np.max(sq)) <= 1e-28  # float summation order only
        else:
            good = abs(sq.mean() - want) <= 3 * se
        ok &= good
        details.append(f"m={m}: " + ("exact zero" if m == data.M else f"z={(sq.mean() - want) / se:+.2f}"))
    record_criterion(6, ok, "10^5 draws each; " + ", ".join(details))
    assert ok


def test_criterion_07_concentration():
    pop = np.concatenate([np.zeros(40), np.ones(25), np.linspace(0, 1, 35)])
    stream = substream(7, 7)
    worst, ok = -math.inf, True
    eps_grid = np.linspace(0.01, 0.5, 25)
    for kind in ("hoeffding", "serfling"):
        for m in (1, 2, 5, 10, 30, 60, 99):
            for eps, p, lim in concentration_tail_check(pop, m, eps_grid, 40_000, kind, stream):
                worst = max(worst, p - lim)
                ok &= p <= lim
    order = all(
        concentration_eta(1.0, m, 100, kind="serfling") <= concentration_eta(1.0, m) for m in range(1, 101)
    )
    ok &= order
    record_criterion(7, ok, f"max(p_hat - bound - 3SE)={worst:.3e}, serfling <= hoeffding for all m: {order}")
    assert ok


def test_criterion_08_figure_data(tmp_path, fan_run):
    assert main(["bounds", "--out", str(tmp_path)]) == 0

    with open(tmp_path / "bounds.csv") as fh:
        rows = list(csv.DictReader(fh))
    curves = {}
    for r in rows:
        if r["bound_name"].startswith("main_tail"):
            curves.setdefault(r["bound_name"], []).append((int(r["k"]), float(r["epsilon"]), float(r["value"])))
    c = RateConstants(0.9, 1 / 0.9, math.nan, 1.0)
    ps = sorted(curves, key=lambda name: -float(name.split("=")[1]))
    round_trip = 0.0
    for name in ps:
        p = float(name.split("=")[1])
        for k, eps, value in curves[name]:
            round_trip = max(round_trip, abs(bounds.main_tail_bound(eps, k, 1.0, 0.9, 1, c) - p) / p)
    # curves are ordered: smaller probability needs a larger epsilon at every k
    stacked = np.array([[e for _, e, _ in curves[name]] for name in ps])
    ordered = bool(np.all(np.diff(stacked, axis=0) > 0))
    # each curve should also be monotone along k
    rising = {name: int(np.sum(np.diff(row) > 0)) for name, row in zip(ps, stacked)}
    monotone_k = all(v == 0 for v in rising.values())
    has_exp = any(r["bound_name"].startswith("expectation") for r in rows)
    ok_bounds = len(curves) == 10 and round_trip <= 1e-9 and ordered and monotone_k and has_exp

    cfg, ens = fan_run
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        q = quantile_series(ens, (-5, 5))
        levels = {round(l, 12) for _, l in quantile_levels((-5, 5))}
    per_k = {}
    for k, level, _ in q:
        per_k.setdefault(k, set()).add(round(level, 12))
    fan_ok = len(per_k) == ens.k_max + 1 and all(v == levels for v in per_k.values())
    k_set = [1, 10, 25, 50, 75, ens.k_max]
    main_b, _, _ = tail_bound_functions(cfg, ens, cfg.spec.n)
    grid = auto_epsilon_grid(ens, k_set)
    est = empirical_tail(ens, grid, k_set, bound_main=main_b)
    mono = all(
        a.p_hat >= b.p_hat for a, b in zip(est, est[1:]) if a.k == b.k
    )
    below = all(e.p_hat <= e.bound_main for e in est)
    ok = ok_bounds and fan_ok and mono and below
    uptick = {n: v for n, v in rising.items() if v}
    record_criterion(8, ok, f"10 curves={len(curves) == 10}, round trip rel err={round_trip:.1e}, curves ordered in p={ordered}, "
                     f"monotone in k={monotone_k} (rising steps: {uptick or 'none'}); "
                     f"fan levels {sorted(levels)[:1]}..{sorted(levels)[-1:]} at all {len(per_k)} k, "
                     f"p_hat nonincreasing={mono}, below main bound={below} (N={len(ens)})")
    assert ok


def test_criterion_09_expectation(desk_run):
    cfg, ens, _ = desk_run
    lam = subsampling_expectation_lambda(ens, cfg.schedule)
    rows = expectation_check(ens, lam, cfg.schedule.decay)
    bad = [r.k for r in rows if not r.ok]
    # analytic oracle: f = x^2/2, L = tau = 1, sigma_k^2 = s0^2 beta^k, so E pi_k = s0^2 beta^(k-1)/2
    c = rate_constants(1.0, 1.0)
    s0, beta = 0.5, 0.8
    analytic_ok = all(
        0.5 * s0**2 * beta ** (k - 1) - 0.5 * c.contraction**k
        <= bounds.expectation_rate_bound(s0**2, beta, c, k, sharp=True)
        for k in range(1, 500)
    )
    # the recursion matches simulation, so the oracle describes the same run
    spec = quadratic_objective(np.eye(1))
    sim = run_experiment(ExperimentConfig(spec, None, np.ones(1), ErrorModel(GAUSSIAN, sigma=s0, variance_decay=beta), 8, 20_000, 3))
    z = [
        (sim.pi[:, k].mean() - 0.5 * s0**2 * beta ** (k - 1)) / (sim.pi[:, k].std(ddof=1) / math.sqrt(len(sim)))
        for k in range(1, 9)
    ]
    sim_ok = max(abs(v) for v in z) <= 3.0
    ok = not bad and analytic_ok and sim_ok
    record_criterion(9, ok, f"lambda={lam:.4g} (lam_sched * sup S), violations at k={bad[:5]}, "
                     f"analytic sharp form holds={analytic_ok}, recursion vs simulation max|z|={max(map(abs, z)):.2f}")
    assert ok


def test_criterion_10_supermartingale(fan_run):
    cfg, ens = fan_run
    rows = supermartingale_check(cfg, ens)
    active = [r for r in rows if r.count > 0]
    spec = quadratic_objective(np.eye(1))
    qcfg = ExperimentConfig(spec, None, np.ones(1), ErrorModel(GAUSSIAN, sigma=0.05), 20, 10_000, 8, track_distance=True)
    qrows = supermartingale_check(qcfg, run_experiment(qcfg))
    qactive = [r for r in qrows if r.count > 0]
    ok = all(r.ok for r in active + qactive) and active and qactive
    record_criterion(10, bool(ok), f"logistic: {len(active)} steps with the condition active; "
                     f"quadratic sigma=0.05: {len(qactive)} steps; all mean increments <= 3 SE")
    assert ok


def _digest(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


def test_criterion_11_determinism(tmp_path):
    cfg = {
        "problem": {"kind": "logistic", "M": 100, "n": 10, "seed": 7},
        "noise": {"kind": "subsample_without_replacement"},
        "schedule": {"lambda": 1.0, "beta": 0.91},
        "montecarlo": {"replicates": 1000, "master_seed": 99},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    digests = {}
    for par in (1, 4, 8):
        for cmd in ("montecarlo", "solve"):
            out = tmp_path / f"{cmd}{par}"
            assert main([cmd, "--config", str(path), "--out", str(out), "--parallelism", str(par)]) == 0
            digests[(cmd, par)] = _digest(out)
        out = tmp_path / f"bounds{par}"
        assert main(["bounds", "--out", str(out), "--k-max", "20", "--parallelism", str(par)]) == 0
        digests[("bounds", par)] = _digest(out)
        out = tmp_path / f"data{par}"
        assert main(["gen-data", "--seed", "7", "--out", str(out), "--parallelism", str(par)]) == 0
        digests[("gen-data", par)] = _digest(out)
    ok = all(digests[(cmd, 1)] == digests[(cmd, p)] for cmd in ("montecarlo", "solve", "bounds", "gen-data") for p in (4, 8))
    n_files = sum(len(v) for k, v in digests.items() if k[1] == 1)
    record_criterion(11, ok, f"{n_files} output files per width, identical across parallelism 1/4/8: {ok}")
    assert ok
