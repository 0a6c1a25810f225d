"""Inequality verification suites: pathwise lemmas, bound formulas and sampling facts.

Each check evaluates a slack (``>= 0`` means the inequality holds) on a grid
and reports the number of points, the violations and the worst slack. The
slack functions are module-level so a test can swap one out as a negative
control.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import bounds
from .model import (
    Nonsmooth,
    generate_logistic_dataset,
    logistic_objective,
    prox,
    quadratic_objective,
)
from .sampling import (
    GAUSSIAN,
    WITHOUT_REPLACEMENT,
    ErrorModel,
    SampleSchedule,
    concentration_eta,
    finite_population_factor,
    sample_size,
    substream,
)
from .solver import (
    RateConstants,
    check_pathwise_bound,
    check_sufficient_decrease,
    optimal_value_oracle,
    rate_constants,
    run,
    solution_distance_slacks,
    three_point_slacks,
)

SUITES = ("lemmas", "bounds", "sampling")
GRIDS = ("coarse", "fine")
TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    points: int = 0
    violations: int = 0
    worst_slack: float = math.inf
    informational: bool = False
    worst_params: dict = field(default_factory=dict)
    examples: list = field(default_factory=list)

    def add(self, slack, tol=TOL, **params):
        self.points += 1
        if slack < self.worst_slack:
            self.worst_slack = float(slack)
            self.worst_params = params
        if slack < -tol:
            self.violations += 1
            if len(self.examples) < 5:
                self.examples.append(dict(params, slack=float(slack)))

    @property
    def ok(self):
        return self.informational or self.violations == 0

    def line(self):
        tag = "info" if self.informational else ("ok" if self.violations == 0 else "FAIL")
        return f"[{tag:4}] {self.name}: points={self.points} violations={self.violations} worst_slack={self.worst_slack:.3e}"


# -- slack functions (>= 0 when the inequality holds) -------------------------


def qpochhammer_slack(x, y):
    lhs, rhs = bounds.qpochhammer_lower_bound(x, y)
    return rhs - lhs


def finite_product_slack(x, y, N):
    lhs, rhs = bounds.finite_product_lower_bound(x, y, N)
    return rhs - lhs


def tedious_slack(x, y, k_exp, nu, eps, printed_exponent=False):
    """Log-space ``closed - numeric``, relative to the magnitude of the log bound."""
    lc, ln = bounds.tedious_bound(x, y, k_exp, nu, eps, printed_exponent=printed_exponent, log=True)
    return (lc - ln) / max(1.0, abs(lc))


def _relative_log_gap(upper, lower):
    return (upper - lower) / max(1.0, abs(upper))


# -- bound suite ---------------------------------------------------------------


def _size(grid, coarse, fine):
    return coarse if grid == "coarse" else fine


def check_qpochhammer(grid="coarse"):
    r = CheckResult("q-Pochhammer lower bound")
    nx = _size(grid, 100, 150)
    for x, y in itertools.product(np.linspace(0, 1, nx), np.linspace(0.01, 0.99, nx)):
        r.add(qpochhammer_slack(float(x), float(y)), tol=1e-12, x=float(x), y=float(y))
    return r


def check_finite_product(grid="coarse"):
    r = CheckResult("finite product lower bound")
    nx = _size(grid, 45, 100)
    for y, frac, N in itertools.product(np.linspace(0.02, 0.98, nx), np.linspace(0, 0.98, nx), (0, 1, 2, 5, 10)):
        x = float(frac * y)
        r.add(finite_product_slack(x, float(y), N), tol=1e-12, x=x, y=float(y), N=N)
    return r


def tedious_grid(grid="coarse"):
    if grid == "coarse":
        xs, ys = (0.1, 0.5, 1.0), (0.1, 0.5, 0.9)
        ks, nus, mults = (0.5, 1, 3), (0.5, 2.0), (1.0, 1.5, 4.0, 20.0)
    else:
        xs, ys = (0.05, 0.2, 0.5, 0.8, 1.0), (0.05, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95)
        ks, nus = (0.5, 1, 2, 3, 5), (0.5, 1.0, 2.0, 5.0)
        mults = (1.0, 1.001, 1.01, 1.1, 1.3, 1.5, 2.0, 3.0, 5.0, 10.0, 30.0, 100.0, 300.0, 1000.0, 1e4)
    return itertools.product(xs, ys, ks, nus, mults)


def check_tedious(grid="coarse", printed_exponent=False):
    name = "tedious bound closed form >= numeric infimum"
    r = CheckResult(name + (" (published exponent)" if printed_exponent else ""), informational=printed_exponent)
    for x, y, k, nu, mult in tedious_grid(grid):
        alpha = bounds.tedious_exponent(y, k, printed_exponent)
        eps = mult * alpha * x / nu
        r.add(tedious_slack(x, y, k, nu, eps, printed_exponent), x=x, y=y, k_exp=k, nu=nu, eps=eps)
    return r


def check_gaussian_closed_vs_numeric(grid="coarse"):
    """Closed-form Gaussian bound against the numeric mixture-form infimum (relative gap)."""
    r = CheckResult("gaussian closed form = numeric infimum (1e-6 rel)")
    c = rate_constants(1.0, 1.0)
    ks = (1, 5) if grid == "coarse" else (1, 5, 50)
    for n, s, k in itertools.product(range(1, 6), (0.1, 1.0, 3.0), ks):
        R = bounds.discount_sum(c.contraction, k)
        thr = n * s * s * R / c.curvature
        fam = bounds.MgfFamily.gaussian(s, n)
        for mult in np.geomspace(1.001, 200.0, 20):
            eps = thr * mult
            a = bounds.gaussian_tail_bound_iid(n, s, c.curvature, R, eps, log=True)
            b = bounds.generic_log_tail_bound(eps, k, c, fam)
            # relative error of the probabilities is |a - b| in log space
            r.add(1e-6 - abs(a - b), tol=0.0, n=n, sigma=s, k=k, eps=eps)
        r.add(1e-300 - abs(bounds.generic_tail_bound(thr, k, c, fam) - 1.0), tol=0.0, n=n, sigma=s, k=k, eps=thr)
    return r


def check_conjugate_identity(grid="coarse"):
    r = CheckResult("exp(conjugate bound) = mixture bound")
    c = rate_constants(1.0, 1.0)
    for n, s, k in itertools.product((1, 3), (0.5, 2.0), (1, 4)):
        fam = bounds.MgfFamily.gaussian(s, n)
        thr = n * s * s * bounds.discount_sum(c.contraction, k) / c.curvature
        for mult in (0.5, 1.0, 1.3, 3.0, 10.0):
            eps = thr * mult
            a = bounds.conjugate_tail_bound(eps, k, c, fam)
            b = bounds.generic_log_tail_bound(eps, k, c, fam)
            r.add(1e-6 - abs(a - b), tol=0.0, n=n, sigma=s, k=k, eps=eps)
    return r


def check_product_beats_mixture(grid="coarse"):
    """Unconditional product bound is no larger than the mixture bound from the same MGFs."""
    r = CheckResult("product bound <= mixture bound")
    ks = (1, 3, 10) if grid == "coarse" else (1, 2, 3, 5, 10, 30)
    for tau, n, s, k in itertools.product((1.0, 2.0), (1, 2), (0.3, 1.0), ks):
        c = rate_constants(1.0, tau)
        fam = bounds.MgfFamily.gaussian(s, n)
        for eps in np.geomspace(0.01, 300.0, 12):
            up = bounds.generic_log_tail_bound(eps, k, c, fam)
            lo = bounds.unconditional_log_tail_bound(eps, k, c, fam)
            r.add(_relative_log_gap(up, lo), tau=tau, n=n, sigma=s, k=k, eps=eps)
    return r


def _gaussian_product_points(grid):
    ns, sigmas, rhos = (1, 2, 3), (0.1, 1.0, 3.0), (0.5, 0.9, 0.99)
    mults = (1.0, 1.5, 3.0, 10.0) if grid == "coarse" else (1.0, 1.2, 1.5, 2.0, 3.0, 5.0, 10.0, 30.0)
    return itertools.product(ns, sigmas, rhos, mults)


def check_gaussian_unconditional(grid="coarse", corrected=False):
    """Closed Gaussian product bound against the numeric product infimum with many factors."""
    label = "corrected" if corrected else "published"
    r = CheckResult(f"gaussian product closed form ({label}) >= numeric product", informational=not corrected)
    k = 400
    for n, s, rho, mult in _gaussian_product_points(grid):
        c = RateConstants(rho, 1.0, 1.0, rho)
        alpha = 1.0 - 1.0 / math.log(rho)
        eps = mult * n * alpha * s * s / c.curvature
        closed = bounds.gaussian_tail_bound_unconditional(n, s, c.curvature, rho, eps, corrected=corrected, log=True)
        num = bounds.unconditional_log_tail_bound(eps, k, c, bounds.MgfFamily.gaussian(s, n))
        r.add(_relative_log_gap(closed, num), n=n, sigma=s, rho=rho, eps=eps)
    return r


def check_main_vs_product(grid="coarse"):
    r = CheckResult("main bound >= product-form infimum")
    ks = (1, 2, 5, 20) if grid == "coarse" else (1, 2, 3, 5, 10, 20, 50)
    for tau, beta, lam, n, k in itertools.product((1.0, 3.0), (0.3, 0.9, 0.99), (0.5, 2.0), (1, 2), ks):
        c = rate_constants(1.0, tau)
        thr = bounds.main_threshold(k, lam, beta, n, c)
        for mult in (1.0, 1.5, 3.0, 10.0, 50.0):
            eps = thr * mult
            closed = bounds.main_tail_bound(eps, k, lam, beta, n, c, log=True)
            num = bounds.main_product_log_bound(eps, k, lam, beta, n, c)
            r.add(_relative_log_gap(closed, num), tau=tau, beta=beta, lam=lam, n=n, k=k, eps=eps)
    return r


def check_main_inverse(grid="coarse"):
    r = CheckResult("main bound inverse round trip (1e-9 rel)")
    c = rate_constants(1.0, 1.0)
    fig = RateConstants(0.9, 1.0 / 0.9, 1.0, 1.0)
    ps = [10.0**-i for i in range(0, 101, 10 if grid == "coarse" else 1)]
    for const, beta, k in itertools.product((c, fig), (0.5, 0.9), (1, 5, 50, 200)):
        for p in ps:
            eps = bounds.invert_main_bound(p, k, 1.0, beta, 2, const)
            back = bounds.main_tail_bound(eps, k, 1.0, beta, 2, const, log=True)
            r.add(1e-9 - abs(back - math.log(p)), tol=0.0, k=k, beta=beta, p=p)
            r.add(eps - bounds.main_threshold(k, 1.0, beta, 2, const), tol=0.0, k=k, beta=beta, p=p)
    return r


def check_monotone_in_eps(grid="coarse"):
    r = CheckResult("tail bounds nonincreasing in eps and within (0, 1]")
    c = rate_constants(1.0, 1.0)
    eps = np.geomspace(1e-3, 1e3, 40 if grid == "coarse" else 200)
    fam = bounds.MgfFamily.gaussian(0.5, 2)
    fns = {
        "gaussian_iid": lambda e: bounds.gaussian_tail_bound_iid(2, 0.5, c.curvature, 3.0, e),
        "gaussian_unconditional": lambda e: bounds.gaussian_tail_bound_unconditional(2, 0.5, c.curvature, 0.5, e),
        "main": lambda e: bounds.main_tail_bound(e, 5, 1.0, 0.5, 2, c),
        "generic": lambda e: bounds.generic_tail_bound(e, 3, c, fam),
        "unconditional": lambda e: bounds.unconditional_tail_bound(e, 3, c, fam),
    }
    for name, fn in fns.items():
        vals = np.array([fn(e) for e in eps])
        for i in range(len(eps)):
            r.add(min(1.0 - vals[i], vals[i] if vals[i] > 0 else 0.0), tol=0.0, bound=name, eps=float(eps[i]))
            if i:
                r.add(vals[i - 1] - vals[i], tol=1e-12, bound=name, eps=float(eps[i]))
    return r


def check_expectation_forms(grid="coarse"):
    r = CheckResult("sharp expectation form <= k-form once k >= 1/|beta - rho|")
    for tau, beta in itertools.product((1.0, 2.0), (0.1, 0.5, 0.9)):
        c = rate_constants(1.0, tau)
        kmin = math.ceil(1.0 / abs(beta - c.contraction))
        for k in range(kmin, kmin + 50):
            a = bounds.expectation_rate_bound(1.0, beta, c, k, sharp=True)
            b = bounds.expectation_rate_bound(1.0, beta, c, k)
            r.add((b - a) / max(b, 1e-300), tol=1e-12, tau=tau, beta=beta, k=k)
    return r


def bounds_suite(grid="coarse"):
    return [
        check_qpochhammer(grid),
        check_finite_product(grid),
        check_tedious(grid),
        check_tedious(grid, printed_exponent=True),
        check_gaussian_closed_vs_numeric(grid),
        check_conjugate_identity(grid),
        check_product_beats_mixture(grid),
        check_gaussian_unconditional(grid, corrected=True),
        check_gaussian_unconditional(grid, corrected=False),
        check_main_vs_product(grid),
        check_main_inverse(grid),
        check_monotone_in_eps(grid),
        check_expectation_forms(grid),
    ]


# -- lemma suite ---------------------------------------------------------------


def lemma_problems(seed=0):
    """Small strongly convex problems covering each nonsmooth kind."""
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((4, 4))
    Q = B @ B.T + 0.5 * np.eye(4)
    center = rng.standard_normal(4)
    base = quadratic_objective(Q, center)
    mu = float(np.linalg.eigvalsh(Q)[0])
    tau_g = 1.0 + 2.0 * base.L / mu  # valid prox-residual error bound for any convex g
    data = generate_logistic_dataset(40, 5, seed)
    return [
        ("quadratic", base, None),
        ("quadratic_l1", quadratic_objective(Q, center, Nonsmooth("l1", weight=0.3), tau=tau_g), None),
        ("quadratic_box", quadratic_objective(Q, center, Nonsmooth("box", lo=-0.2, hi=0.4), tau=tau_g), None),
        ("logistic_ridge", logistic_objective(data), data),
    ]


def check_prox_nonexpansive(grid="coarse", seed=0):
    r = CheckResult("prox nonexpansive")
    rng = np.random.default_rng(seed)
    gs = [Nonsmooth(), Nonsmooth("l1", weight=0.7), Nonsmooth("box", lo=-1.0, hi=0.5)]
    for _ in range(_size(grid, 300, 3000)):
        z1, z2 = rng.standard_normal((2, 6)) * 3
        a = float(rng.uniform(0.01, 3))
        for g in gs:
            d = np.linalg.norm(prox(g, a, z1) - prox(g, a, z2))
            r.add(np.linalg.norm(z1 - z2) - d, g=g.kind, alpha=a)
    return r


def lemmas_suite(grid="coarse", seed=0):
    checks = {
        "pathwise": CheckResult("pathwise gap bound"),
        "decrease": CheckResult("sufficient decrease"),
        "three_point": CheckResult("three-point property"),
        "dist": CheckResult("distance-to-solution bounds (a), (c), corrected (b), (d)"),
        "dist_printed": CheckResult("distance-to-solution bounds (b), (d) as published", informational=True),
        "noiseless": CheckResult("noiseless linear rate"),
    }
    rng = np.random.default_rng(seed)
    sigmas = (0.0, 0.01, 0.3) if grid == "coarse" else (0.0, 0.001, 0.01, 0.1, 0.3, 1.0)
    runs = 2 if grid == "coarse" else 6
    for name, spec, data in lemma_problems(seed):
        h_star, x_star = optimal_value_oracle(spec, data)
        for sigma, rep in itertools.product(sigmas, range(runs)):
            x0 = rng.standard_normal(spec.n) * 2
            if spec.nonsmooth.kind == "box":
                x0 = np.clip(x0, spec.nonsmooth.lo, spec.nonsmooth.hi)
            em = ErrorModel(GAUSSIAN, sigma=sigma, rng_seed=seed + rep) if sigma > 0 else ErrorModel()
            t = run(spec, data, x0, em, k_max=60, h_star=h_star, x_star=x_star)
            tol = TOL * max(1.0, abs(t.pi[0]))
            params = dict(problem=name, sigma=sigma, rep=rep)
            for k, s in enumerate(check_pathwise_bound(t)):
                checks["pathwise"].add(s, tol=tol, k=k, **params)
            c = t.constants
            rhs = c.contraction * t.pi[:-1] + c.contraction / c.L * t.err_sq
            for k, ok in enumerate(check_sufficient_decrease(t)):
                checks["decrease"].add(0.0 if ok else rhs[k] - t.pi[k + 1], k=k, **params)
            for key, sl in solution_distance_slacks(t, x_star).items():
                target = checks["dist_printed"] if key in ("b", "d") else checks["dist"]
                for k, s in enumerate(sl):
                    target.add(s, tol=TOL, bound=key, k=k, **params)
            lo = spec.nonsmooth.lo if spec.nonsmooth.kind == "box" else -3.0
            hi = spec.nonsmooth.hi if spec.nonsmooth.kind == "box" else 3.0
            ys = rng.uniform(lo, hi, size=(4, spec.n))
            for k, row in enumerate(three_point_slacks(t, spec, data, ys)):
                for s in row:
                    checks["three_point"].add(s, k=k, **params)
            if sigma == 0.0:
                for k in range(t.k_max + 1):
                    s = c.contraction**k * t.pi[0] - t.pi[k]
                    checks["noiseless"].add(s, tol=tol, k=k, **params)
    return [check_prox_nonexpansive(grid, seed)] + list(checks.values())


# -- sampling suite -------------------------------------------------------------


def check_schedule(grid="coarse"):
    r = CheckResult("sample sizes are the smallest feasible")
    cases = [(1.0, 0.9, 100), (0.5, 0.95, 30), (2.0, 0.8, 7)]
    for lam, beta, M in cases:
        sch = SampleSchedule(lam, beta, "without_replacement", M)
        prev = 0
        for k in range(101):
            m = sample_size(sch, k)
            t = sch.target(k)
            feas = [j for j in range(1, M + 1) if finite_population_factor(j, M) <= t]
            want = feas[0] if feas else M
            r.add(0.0 if m == want else -1.0, tol=0.0, lam=lam, beta=beta, M=M, k=k)
            r.add(float(m - prev), tol=0.0, lam=lam, beta=beta, M=M, k=k)
            prev = m
        iid = SampleSchedule(lam, beta)
        for k in range(101):
            m = sample_size(iid, k)
            ok = 1.0 / m <= iid.target(k) and (m == 1 or 1.0 / (m - 1) > iid.target(k))
            r.add(0.0 if ok else -1.0, tol=0.0, lam=lam, beta=beta, k=k, mode="iid")
    return r


def check_serfling_vs_hoeffding(grid="coarse"):
    r = CheckResult("serfling <= hoeffding (strict for m >= 2)")
    for M in (2, 10, 100):
        for m in range(1, M + 1):
            h = concentration_eta(1.7, m)
            s = concentration_eta(1.7, m, M, kind="serfling")
            r.add(h - s if m == 1 else (h - s if h > s else -1.0), tol=0.0, M=M, m=m)
    return r


def concentration_tail_check(population, m, eps_grid, draws, kind, stream):
    """Empirical upper tail of an m-sample mean against ``exp(-eps^2/eta_m)`` plus 3 binomial SE."""
    pop = np.asarray(population, dtype=float)
    M = pop.size
    d = float(pop.max() - pop.min())
    if kind == "serfling":
        keys = stream.random((draws, M))
        idx = np.argpartition(keys, m - 1, axis=1)[:, :m] if m < M else np.tile(np.arange(M), (draws, 1))
        eta = concentration_eta(d, m, M, kind="serfling")
    else:
        idx = np.minimum((stream.random((draws, m)) * M).astype(np.int64), M - 1)
        eta = concentration_eta(d, m)
    dev = pop[idx].mean(axis=1) - pop.mean()
    out = []
    for eps in eps_grid:
        p = float(np.mean(dev >= eps))
        bound = math.exp(-eps * eps / eta)
        se = math.sqrt(max(bound * (1 - bound), 1e-300) / draws)
        out.append((eps, p, bound + 3.0 * se))
    return out


def check_concentration(grid="coarse", seed=0):
    r = CheckResult("sample-mean tails under hoeffding/serfling")
    stream = substream(seed, 7)
    pop = np.concatenate([np.zeros(12), np.ones(5), [0.3, 0.6, 0.9]])
    draws = _size(grid, 20_000, 100_000)
    for kind, m in itertools.product(("hoeffding", "serfling"), (1, 3, 8, 15, 20)):
        for eps, p, lim in concentration_tail_check(pop, m, np.linspace(0.02, 0.6, 15), draws, kind, stream):
            r.add(lim - p, tol=0.0, kind=kind, m=m, eps=eps)
    return r


def check_wor_variance(grid="coarse", seed=0):
    """Empirical mean squared error of without-replacement averages against the formula, 3 SE."""
    from .sampling import error_variance_without_replacement, population_variance, sampled_gradient

    r = CheckResult("without-replacement error variance formula")
    data = generate_logistic_dataset(100, 5, seed)
    spec = logistic_objective(data)
    x = np.random.default_rng(seed).standard_normal(5)
    S = float(population_variance(spec, data, x))
    draws = _size(grid, 4000, 20000)
    em = ErrorModel(WITHOUT_REPLACEMENT)
    stream = substream(seed, 11)
    for m in (1, 5, 20, 100):
        sq = np.array([np.sum(sampled_gradient(spec, data, x, m, em, stream)[1] ** 2) for _ in range(draws)])
        want = error_variance_without_replacement(S, m, 100)
        se = sq.std(ddof=1) / math.sqrt(draws)
        r.add(3.0 * se - abs(sq.mean() - want), tol=0.0 if m < 100 else 1e-300, m=m)
    return r


def sampling_suite(grid="coarse", seed=0):
    return [
        check_schedule(grid),
        check_serfling_vs_hoeffding(grid),
        check_concentration(grid, seed),
        check_wor_variance(grid, seed),
    ]


def run_suite(suite="all", grid="coarse", seed=0):
    if suite not in SUITES + ("all",):
        raise ValueError(f"unknown suite {suite!r}")
    if grid not in GRIDS:
        raise ValueError(f"unknown grid {grid!r}")
    out = []
    if suite in ("lemmas", "all"):
        out += lemmas_suite(grid, seed)
    if suite in ("bounds", "all"):
        out += bounds_suite(grid)
    if suite in ("sampling", "all"):
        out += sampling_suite(grid, seed)
    return out


def report(results):
    lines = [r.line() for r in results]
    for r in results:
        if not r.ok:
            for ex in r.examples:
                lines.append(f"    violation in {r.name}: {ex}")
    return "\n".join(lines)
