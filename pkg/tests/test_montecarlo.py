import math
import warnings

import numpy as np
import pytest

from proxtail import bounds
from proxtail.errors import ArgumentError
from proxtail.model import generate_logistic_dataset, logistic_objective, quadratic_objective
from proxtail.montecarlo import (
    ExperimentConfig,
    clopper_pearson,
    empirical_mgf_check,
    empirical_tail,
    expectation_check,
    nearest_rank,
    quantile_levels,
    quantile_series,
    run_experiment,
    supermartingale_check,
    write_expectation_csv,
    write_quantiles_csv,
    write_tails_csv,
)
from proxtail.sampling import (
    GAUSSIAN,
    NONE,
    WITHOUT_REPLACEMENT,
    ErrorModel,
    concentration_eta,
    component_gradients,
    sampled_gradient,
    substream,
)


def gaussian_1d(N, sigma=0.1, k_max=20, seed=0, decay=1.0, **kw):
    spec = quadratic_objective(np.eye(1))
    em = ErrorModel(GAUSSIAN, sigma=sigma, variance_decay=decay)
    return ExperimentConfig(spec, None, np.ones(1), em, k_max, N, master_seed=seed, **kw)


def test_config_validation():
    with pytest.raises(ArgumentError):
        gaussian_1d(0)
    with pytest.raises(ArgumentError):
        gaussian_1d(5, epsilon_grid=[0.2, 0.1])


def test_run_twice_identical():
    a = run_experiment(gaussian_1d(2, seed=3))
    b = run_experiment(gaussian_1d(2, seed=3))
    np.testing.assert_array_equal(a.pi, b.pi)
    assert not np.array_equal(a.pi[0], a.pi[1])


def test_noiseless_replicates_identical():
    spec = quadratic_objective(np.diag([1.0, 0.5]))
    ens = run_experiment(ExperimentConfig(spec, None, np.ones(2), ErrorModel(NONE), 10, 5))
    assert np.all(ens.pi == ens.pi[0])


def test_blocks_and_threads_do_not_change_results():
    base = run_experiment(gaussian_1d(600, seed=9))
    for bs, par in [(7, 1), (100, 4), (600, 8)]:
        other = run_experiment(gaussian_1d(600, seed=9, block_size=bs, parallelism=par))
        np.testing.assert_array_equal(base.pi, other.pi)
        np.testing.assert_array_equal(base.err_sq, other.err_sq)


def test_replicate_matches_its_substream():
    from proxtail.solver import run

    ens = run_experiment(gaussian_1d(3, seed=4))
    spec = quadratic_objective(np.eye(1))
    t = run(spec, None, np.ones(1), ErrorModel(GAUSSIAN, sigma=0.1), k_max=20, stream=substream(4, 2), h_star=0.0)
    np.testing.assert_array_equal(ens.pi[2], t.pi)


def test_mean_gap_matches_one_dimensional_recursion():
    # f = x^2/2, L = 1: x_{k+1} = -e_k, so E pi_{k+1} = sigma^2 / 2
    ens = run_experiment(gaussian_1d(10_000, sigma=0.3, k_max=6, seed=1))
    for k in range(1, 7):
        col = ens.pi[:, k]
        assert abs(col.mean() - 0.045) <= 3 * col.std(ddof=1) / math.sqrt(col.size)


def test_failed_replicates_excluded():
    spec = quadratic_objective(np.eye(1))
    em = ErrorModel(GAUSSIAN, sigma=1e200)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ens = run_experiment(ExperimentConfig(spec, None, np.ones(1), em, 5, 4))
    assert len(ens) == 0 and sorted(ens.failed) == [0, 1, 2, 3]


def test_quantile_levels():
    with pytest.warns(UserWarning):
        lv = quantile_levels((-5, 5))
    assert [l for j, l in lv if j == 1] == [0.5, 0.5]
    assert sorted({j for j, _ in lv}) == [1, 2, 3, 4, 5]
    assert quantile_levels((2, 2)) == [(2, 0.25), (2, 0.75)]


def test_quantiles_degenerate_and_brute_force():
    rows = quantile_series(np.array([[3.0, 1.0]]), (1, 3))
    assert {v for k, _, v in rows if k == 0} == {3.0}
    vals = np.random.default_rng(0).standard_normal((1000, 1))
    srt = sorted(vals[:, 0])
    for _, level, v in quantile_series(vals, (1, 5)):
        assert v == srt[math.ceil(level * 1000) - 1]
    assert nearest_rank(np.array([1.0, 2.0]), 1e-9) == 1.0


def test_clopper_pearson():
    assert clopper_pearson(0, 10)[0] == 0.0
    assert clopper_pearson(10, 10)[1] == 1.0
    from scipy.stats import binom

    lo, hi = clopper_pearson(3, 10)
    # each endpoint leaves 0.5% binomial mass on its side
    assert binom.sf(2, 10, lo) == pytest.approx(0.005, rel=1e-8)
    assert binom.cdf(3, 10, hi) == pytest.approx(0.005, rel=1e-8)


def test_empirical_tail():
    ens = run_experiment(gaussian_1d(500, seed=2))
    k_set = [1, 5]
    dev_max = max(ens.deviation(k).max() for k in k_set)
    grid = np.array([-1e-300, 1e-6, 1e-3, abs(dev_max) * 2 + 1])
    est = empirical_tail(ens, grid, k_set)
    for e in est:
        assert 0 <= e.ci_low <= e.p_hat <= e.ci_high <= 1
        assert e.p_hat == np.count_nonzero(ens.deviation(e.k) >= e.epsilon) / 500
    top = [e for e in est if e.epsilon == abs(dev_max) * 2 + 1]
    assert all(e.p_hat == 0 and e.ci_low == 0 for e in top)
    for k in k_set:
        ps = [e.p_hat for e in est if e.k == k]
        assert all(a >= b for a, b in zip(ps, ps[1:]))


def test_mgf_check():
    zero = empirical_mgf_check(np.zeros((10, 3)), 1.0, 3, [0.0, 0.1, 0.5])
    assert [r.theta for r in zero] == [0.0, 0.1]
    assert all(r.empirical == 1.0 and r.ok for r in zero)
    assert zero[0].bound == 1.0


def test_mgf_check_subsampled_logistic():
    data = generate_logistic_dataset(100, 3, 5)
    spec = logistic_objective(data)
    x = np.ones(3)
    G = component_gradients(spec, data, x)
    d = float((G.max(axis=0) - G.min(axis=0)).max())
    nu = concentration_eta(d, 10, 100, kind="serfling")
    s = substream(6)
    model = ErrorModel(WITHOUT_REPLACEMENT)
    errs = np.array([sampled_gradient(spec, data, x, 10, model, s)[1] for _ in range(20_000)])
    rows = empirical_mgf_check(errs, nu, 3, [0.5 / (nu * 3)])
    assert rows and all(r.ok for r in rows)


def test_expectation_noiseless():
    spec = quadratic_objective(np.eye(1))
    ens = run_experiment(ExperimentConfig(spec, None, np.ones(1), ErrorModel(NONE), 10, 3))
    rows = expectation_check(ens, 1.0, 0.5)
    assert all(r.mean_dev <= 0 <= r.bound_k_form and r.ok for r in rows)


def test_expectation_analytic_decaying_sigma():
    # sigma_k = s0 beta^(k/2): E pi_k - rho^k pi_0 = s0^2 beta^(k-1)/2 - rho^k/2
    s0, beta = 0.5, 0.6
    c = quadratic_objective(np.eye(1))
    from proxtail.solver import rate_constants

    rc = rate_constants(c.L, c.tau)
    for k in range(1, 200):
        exact = 0.5 * s0**2 * beta ** (k - 1) - 0.5 * rc.contraction**k
        assert exact <= bounds.expectation_rate_bound(s0**2, beta, rc, k, sharp=True)
        assert exact <= bounds.expectation_rate_bound(s0**2, beta, rc, k)


def test_supermartingale_check_runs():
    cfg = gaussian_1d(2000, sigma=0.01, k_max=10, track_distance=True)
    rows = supermartingale_check(cfg, run_experiment(cfg))
    assert rows[0].count == 2000 and all(r.ok for r in rows)


def test_csv_writers(tmp_path):
    ens = run_experiment(gaussian_1d(20, k_max=3))
    write_quantiles_csv(tmp_path / "q.csv", quantile_series(ens, (1, 2)))
    write_tails_csv(tmp_path / "t.csv", empirical_tail(ens, [0.01], [1]))
    write_expectation_csv(tmp_path / "e.csv", expectation_check(ens, 1.0, 0.5))
    assert (tmp_path / "q.csv").read_text().splitlines()[0] == "k,level,pi_value"
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "k,epsilon,p_hat,ci_low,ci_high,bound_main,bound_gaussian"
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "k,mean_dev,se,bound_k_form,bound_sharp"
