"""Monte Carlo harness: ensembles of trajectories and empirical checks of the bounds.

Replicate ``r`` draws from ``substream(master_seed, r)``. Replicates are
simulated in fixed blocks of ``block_size`` indices and merged in index order,
so results do not depend on ``parallelism``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import beta as beta_dist

from . import bounds
from .errors import ArgumentError
from .sampling import GAUSSIAN, NONE, WITHOUT_REPLACEMENT, ErrorModel, substream
from .solver import (
    Trajectory,
    check_sufficient_decrease,
    optimal_value_oracle,
    pathwise_ok,
    rate_constants,
    simulate,
)

CI_LEVEL = 0.99


@dataclass
class ExperimentConfig:
    spec: object
    data: object
    x0: np.ndarray
    error_model: ErrorModel
    k_max: int
    replicates: int
    master_seed: int = 0
    schedule: object = None
    epsilon_grid: np.ndarray | None = None
    j_range: tuple = (-5, 5)
    parallelism: int = 1
    block_size: int = 256
    track_population: bool = False
    track_distance: bool = False

    def __post_init__(self):
        if self.replicates < 1:
            raise ArgumentError("replicates must be at least 1")
        if self.epsilon_grid is not None:
            g = np.asarray(self.epsilon_grid, dtype=float)
            if g.ndim != 1 or np.any(np.diff(g) <= 0):
                raise ArgumentError("epsilon_grid must be strictly increasing")
        self.x0 = np.asarray(self.x0, dtype=float)


@dataclass
class Ensemble:
    """Stacked replicate results; rows are replicate indices ``ids``.

    Iterating yields one :class:`Trajectory` per surviving replicate.
    """

    pi: np.ndarray
    h: np.ndarray
    err_sq: np.ndarray
    m: np.ndarray
    constants: object
    h_star: float
    x_star: np.ndarray
    ids: np.ndarray
    failed: dict = field(default_factory=dict)
    dist_sq: np.ndarray | None = None
    S: np.ndarray | None = None
    dmax: np.ndarray | None = None
    master_seed: int = 0

    def __len__(self):
        return self.pi.shape[0]

    def __iter__(self):
        for i in range(len(self)):
            yield self.trajectory(i)

    def trajectory(self, i):
        return Trajectory(
            pi=self.pi[i],
            h=self.h[i],
            err_sq=self.err_sq[i],
            m=self.m,
            constants=self.constants,
            h_star=self.h_star,
            seed=int(self.ids[i]),
        )

    @property
    def k_max(self):
        return self.err_sq.shape[1]

    def deviation(self, k):
        """``pi_k - rho^k pi_0`` per replicate."""
        return self.pi[:, k] - self.constants.contraction**k * self.pi[:, 0]


def run_experiment(cfg, h_star=None, x_star=None):
    """Simulate ``cfg.replicates`` trajectories from the same start point.

    Replicates hitting a non-finite value are dropped and listed in
    ``Ensemble.failed`` (replicate index to iteration).
    """
    spec, data = cfg.spec, cfg.data
    constants = rate_constants(spec.L, spec.tau)
    if h_star is None or x_star is None:
        h_star, x_star = optimal_value_oracle(spec, data)
    N, bs = cfg.replicates, cfg.block_size
    blocks = [range(s, min(s + bs, N)) for s in range(0, N, bs)]

    def work(block):
        streams = [substream(cfg.master_seed, r) for r in block]
        return simulate(
            spec,
            data,
            cfg.x0,
            cfg.error_model,
            cfg.k_max,
            streams,
            h_star,
            schedule=cfg.schedule,
            x_star=x_star if cfg.track_distance else None,
            track_population=cfg.track_population,
        )

    if cfg.parallelism > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]

    failed = {}
    keep = []
    for block, part in zip(blocks, parts):
        for r_local, k in part["failed"].items():
            failed[block[r_local]] = k
        mask = np.ones(len(block), dtype=bool)
        mask[list(part["failed"])] = False
        keep.append(mask)
    if failed:
        warnings.warn(f"{len(failed)} replicate(s) failed and were excluded: {sorted(failed)[:10]}")
    keep_all = np.concatenate(keep)

    def cat(name):
        if name not in parts[0]:
            return None
        return np.concatenate([p[name] for p in parts])[keep_all]

    return Ensemble(
        pi=cat("pi"),
        h=cat("h"),
        err_sq=cat("err_sq"),
        m=parts[0]["m"],
        constants=constants,
        h_star=float(h_star),
        x_star=np.asarray(x_star),
        ids=np.arange(N)[keep_all],
        failed=failed,
        dist_sq=cat("dist_sq"),
        S=cat("S"),
        dmax=cat("dmax"),
        master_seed=cfg.master_seed,
    )


def quantile_levels(j_range=(-5, 5)):
    """Levels ``0.5^j`` and ``1 - 0.5^j`` for integer ``j`` in the closed range, as ``(j, level)``.

    Levels outside ``(0, 1)`` are skipped with a warning.
    """
    out, skipped = [], []
    for j in range(j_range[0], j_range[1] + 1):
        for level in (0.5**j, 1.0 - 0.5**j):
            if 0.0 < level < 1.0:
                out.append((j, level))
            else:
                skipped.append(j)
    if skipped:
        warnings.warn(f"quantile levels outside (0, 1) skipped for j in {sorted(set(skipped))}")
    return out


def nearest_rank(sorted_values, level):
    """Nearest-rank quantile: the ``ceil(level N)``-th smallest value."""
    N = sorted_values.shape[0]
    idx = min(max(math.ceil(level * N), 1), N) - 1
    return sorted_values[idx]


def quantile_series(pi, j_range=(-5, 5)):
    """Rows ``(k, level, value)`` of nearest-rank quantiles of ``pi[:, k]``.

    ``pi`` is an ``(N, K+1)`` array or an :class:`Ensemble`.
    """
    if isinstance(pi, Ensemble):
        pi = pi.pi
    pi = np.atleast_2d(np.asarray(pi, dtype=float))
    levels = quantile_levels(j_range)
    srt = np.sort(pi, axis=0)
    rows = []
    for k in range(pi.shape[1]):
        for _, level in levels:
            rows.append((k, level, float(nearest_rank(srt[:, k], level))))
    return rows


def clopper_pearson(count, N, level=CI_LEVEL):
    """Exact two-sided binomial interval for ``count`` successes in ``N`` trials."""
    a = 1.0 - level
    lo = 0.0 if count == 0 else float(beta_dist.ppf(a / 2, count, N - count + 1))
    hi = 1.0 if count == N else float(beta_dist.ppf(1 - a / 2, count + 1, N - count))
    return lo, hi


@dataclass(frozen=True)
class TailEstimate:
    k: int
    epsilon: float
    p_hat: float
    ci_low: float
    ci_high: float
    bound_main: float = math.nan
    bound_gaussian: float = math.nan


def tail_counts(values, eps_grid):
    """Number of entries ``>= eps`` for each ``eps`` (by sorting, so exact)."""
    srt = np.sort(np.asarray(values, dtype=float))
    return srt.size - np.searchsorted(srt, np.asarray(eps_grid, dtype=float), side="left")


def empirical_tail(ens, eps_grid, k_set, bound_main=None, bound_gaussian=None, from_mean=False):
    """Empirical ``P(pi_k - rho^k pi_0 >= eps)`` with Clopper-Pearson 99% intervals.

    ``bound_main``/``bound_gaussian`` are callables ``(k, eps) -> probability``.
    With ``from_mean=True`` the deviation is measured from the empirical mean
    of ``pi_k`` instead.
    """
    N = len(ens)
    out = []
    for k in k_set:
        dev = ens.pi[:, k] - ens.pi[:, k].mean() if from_mean else ens.deviation(k)
        counts = tail_counts(dev, eps_grid)
        for eps, c in zip(eps_grid, counts):
            lo, hi = clopper_pearson(int(c), N)
            bm = bound_main(k, eps) if bound_main else math.nan
            bg = bound_gaussian(k, eps) if bound_gaussian else math.nan
            out.append(TailEstimate(int(k), float(eps), c / N, lo, hi, float(bm), float(bg)))
    return out


def tails_from_mean(ens, eps_grid, k_set):
    return empirical_tail(ens, eps_grid, k_set, from_mean=True)


def auto_epsilon_grid(ens, k_set, size=25):
    """Geometric grid spanning the observed positive deviations at ``k_set``."""
    dev = np.concatenate([ens.deviation(k) for k in k_set])
    pos = dev[dev > 0]
    if pos.size == 0:
        return np.logspace(-12, 0, size)
    lo = float(np.quantile(pos, 0.05)) / 10.0
    hi = float(pos.max()) * 4.0
    return np.geomspace(lo, hi, size)


def gaussian_calibration(sigma, constants, k):
    """``(lam, beta)`` for constant-variance Gaussian errors at a fixed ``k``.

    Per-coordinate Chernoff tails give ``U_i = 2 sigma^2``; with ``beta = rho``
    the requirement ``U_i <= lam beta^i`` for ``i < k`` holds with
    ``lam = 2 sigma^2 / rho^(k-1)``.
    """
    rho = constants.contraction
    return 2.0 * sigma * sigma / rho ** (k - 1), rho


def subsampling_tail_lambda(ens, schedule):
    """Tail-hypothesis scale for subsampled gradients: ``lam_sched * sup max_i d_i^2 / 2``."""
    if ens.dmax is None:
        raise ArgumentError("ensemble was run without track_population")
    return schedule.scale * float(np.max(ens.dmax)) ** 2 / 2.0


def subsampling_expectation_lambda(ens, schedule):
    """Variance-hypothesis scale for subsampled gradients: ``lam_sched * sup S(x)``."""
    if ens.S is None:
        raise ArgumentError("ensemble was run without track_population")
    return schedule.scale * float(np.max(ens.S))


def tail_bound_functions(cfg, ens, n):
    """Callables attaching the Main Bound (and, for Gaussian noise, the closed Gaussian form)."""
    c = ens.constants
    em = cfg.error_model
    if em.kind == GAUSSIAN and em.variance_decay == 1.0:
        s = em.sigma

        def main(k, eps):
            lam, beta = gaussian_calibration(s, c, k)
            return bounds.main_tail_bound(eps, k, lam, beta, n, c)

        def gauss(k, eps):
            return bounds.gaussian_tail_bound_unconditional(n, s, c.curvature, c.contraction, eps)

        return main, gauss, {"lambda": "2 sigma^2 / rho^(k-1)", "beta": c.contraction}
    if em.subsampled:
        lam = subsampling_tail_lambda(ens, cfg.schedule)
        beta = cfg.schedule.decay

        def main(k, eps):
            return bounds.main_tail_bound(eps, k, lam, beta, n, c)

        return main, None, {"lambda": lam, "beta": beta}
    return None, None, {}


@dataclass(frozen=True)
class ExpectationRow:
    k: int
    mean_dev: float
    se: float
    bound_k_form: float
    bound_sharp: float

    @property
    def ok(self):
        return self.mean_dev + 3.0 * self.se <= self.bound_k_form


def expectation_check(ens, lam, beta):
    """Per-k mean deviation, its standard error and both expectation bounds.

    A row passes when ``mean_dev + 3 se <= bound_k_form``.
    """
    c = ens.constants
    N = len(ens)
    rows = []
    for k in range(1, ens.pi.shape[1]):
        dev = ens.deviation(k)
        se = float(dev.std(ddof=1) / math.sqrt(N)) if N > 1 else 0.0
        kf = bounds.expectation_rate_bound(lam, beta, c, k)
        sh = bounds.expectation_rate_bound(lam, beta, c, k, sharp=True) if beta != c.contraction else math.nan
        rows.append(ExpectationRow(k, float(dev.mean()), se, kf, sh))
    return rows


def expectation_violations(rows):
    return [r for r in rows if not r.ok]


def conditional_error_variance(cfg, ens):
    """Closed-form ``E[||e_k||^2 | past]`` per replicate and step, where one exists."""
    em = cfg.error_model
    K = ens.k_max
    if em.kind == NONE:
        return np.zeros((len(ens), K))
    if em.kind == GAUSSIAN:
        v = cfg.spec.n * em.sigma_at(np.arange(K)) ** 2
        return np.broadcast_to(v, (len(ens), K))
    if em.kind == WITHOUT_REPLACEMENT:
        if ens.S is None:
            raise ArgumentError("ensemble was run without track_population")
        M = cfg.data.M
        m = ens.m.astype(float)
        return (1.0 - m / M) * ens.S / m
    raise ArgumentError("no closed-form conditional variance for sampling with replacement")


@dataclass(frozen=True)
class SupermartingaleRow:
    k: int
    count: int
    mean_increment: float
    se: float

    @property
    def ok(self):
        return self.count == 0 or self.mean_increment <= 3.0 * self.se


def supermartingale_check(cfg, ens):
    """Mean of ``pi_{k+1} - pi_k`` over the replicates whose step-k condition holds.

    Selecting on a past-measurable event keeps the supermartingale inequality,
    so the mean increment should not exceed 3 standard errors.
    """
    if ens.dist_sq is None:
        raise ArgumentError("ensemble was run without track_distance")
    var = conditional_error_variance(cfg, ens)
    thresh = ens.dist_sq[:, :-1] / (10.0 * ens.constants.tau**2)
    cond = var <= thresh
    rows = []
    for k in range(ens.k_max):
        sel = cond[:, k]
        cnt = int(sel.sum())
        if cnt == 0:
            rows.append(SupermartingaleRow(k, 0, math.nan, math.nan))
            continue
        inc = ens.pi[sel, k + 1] - ens.pi[sel, k]
        se = float(inc.std(ddof=1) / math.sqrt(cnt)) if cnt > 1 else 0.0
        rows.append(SupermartingaleRow(k, cnt, float(inc.mean()), se))
    return rows


@dataclass(frozen=True)
class MgfCheckRow:
    theta: float
    empirical: float
    se: float
    bound: float

    @property
    def ok(self):
        return self.empirical <= self.bound * (1.0 + 3.0 * self.se / self.empirical)


def empirical_mgf_check(error_samples, nu, n, theta_grid):
    """Empirical ``E exp(theta ||e||^2)`` against ``1/(1 - theta nu n)``; invalid thetas are skipped."""
    e = np.asarray(error_samples, dtype=float)
    sq = np.sum(e.reshape(e.shape[0], -1) ** 2, axis=1)
    rows = []
    for th in theta_grid:
        if not 0 <= th < 1.0 / (nu * n):
            continue
        v = np.exp(th * sq)
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        rows.append(MgfCheckRow(float(th), float(v.mean()), se, bounds.mgf_bound_from_tail(nu, n, th)))
    return rows


def pathwise_report(ens):
    """Fraction of replicates on which the pathwise and one-step bounds hold everywhere."""
    pw = pathwise_ok(ens).all(axis=1)
    sd = check_sufficient_decrease(ens).all(axis=1)
    return {"pathwise": float(pw.mean()), "sufficient_decrease": float(sd.mean())}


def _fmt(v):
    return repr(float(v))


def write_quantiles_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "level", "pi_value"])
        for k, level, v in rows:
            w.writerow([k, _fmt(level), _fmt(v)])


def write_tails_csv(path, est):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "epsilon", "p_hat", "ci_low", "ci_high", "bound_main", "bound_gaussian"])
        for t in est:
            w.writerow(
                [t.k, _fmt(t.epsilon), _fmt(t.p_hat), _fmt(t.ci_low), _fmt(t.ci_high), _fmt(t.bound_main), _fmt(t.bound_gaussian)]
            )


def write_expectation_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "mean_dev", "se", "bound_k_form", "bound_sharp"])
        for r in rows:
            w.writerow([r.k, _fmt(r.mean_dev), _fmt(r.se), _fmt(r.bound_k_form), _fmt(r.bound_sharp)])


def file_sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_manifest(path, config_echo, seed, bound_params, files, extra=None):
    """JSON manifest: config echo and its hash, seed, bound parameters, output hashes."""
    from . import __version__

    canon = json.dumps(config_echo, sort_keys=True, separators=(",", ":"))
    doc = {
        "library_version": __version__,
        "config": config_echo,
        "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
        "master_seed": seed,
        "bound_parameters": bound_params,
        "files": {os.path.basename(f): file_sha256(f) for f in files},
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return doc


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")
