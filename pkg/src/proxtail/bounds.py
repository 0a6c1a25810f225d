"""Tail and expectation bounds for the optimality gap of the inexact iteration.

All bounds control the deviation ``pi_k - rho^k pi_0`` from the noiseless
linear rate. Probabilities are capped at 1, and anything that can under- or
overflow is evaluated in log space. Infima over the MGF parameter ``theta``
go through :func:`minimize_over_theta`: a geometric scan to bracket the
minimum, then golden-section refinement on ``log theta``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, lambertw

from .errors import ArgumentError, DomainError

GAUSSIAN_CHI_SQUARE = "gaussian_chi_square"
BOUNDED_FROM_TAIL = "bounded_from_tail"
TABULATED = "tabulated"

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def discount_sum(rho, k):
    """``R_k = sum_{i<k} rho^i = (1 - rho^k)/(1 - rho)``."""
    if not 0 < rho < 1:
        raise ArgumentError("rho must lie in (0, 1)")
    if k < 0:
        raise ArgumentError("k must be nonnegative")
    return -math.expm1(k * math.log(rho)) / (1.0 - rho)


@dataclass(frozen=True)
class MgfFamily:
    """Upper bound ``gamma(theta)`` on ``E exp(theta ||e||^2)``, valid for ``theta < domain_sup``.

    * ``gaussian_chi_square``: ``||e||^2 = sigma^2 chi^2_n``, so
      ``gamma = (1 - 2 sigma^2 theta)^(-n/2)``
    * ``bounded_from_tail``: ``gamma = 1/(1 - theta nu n)``
    * ``tabulated``: piecewise-linear interpolation of ``log gamma`` on a grid
      starting at ``theta = 0``
    """

    kind: str
    sigma: float | None = None
    n: int = 1
    nu: float | None = None
    thetas: tuple | None = None
    values: tuple | None = None

    def __post_init__(self):
        if self.kind == GAUSSIAN_CHI_SQUARE:
            if not (self.sigma and self.sigma > 0):
                raise ArgumentError("gaussian_chi_square needs sigma > 0")
        elif self.kind == BOUNDED_FROM_TAIL:
            if not (self.nu and self.nu > 0):
                raise ArgumentError("bounded_from_tail needs nu > 0")
        elif self.kind == TABULATED:
            t = np.asarray(self.thetas, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if t.ndim != 1 or t.shape != v.shape or t.size < 2 or t[0] != 0 or np.any(np.diff(t) <= 0):
                raise ArgumentError("tabulated MGF needs an increasing theta grid starting at 0")
            if np.any(v <= 0):
                raise ArgumentError("tabulated MGF values must be positive")
        else:
            raise ArgumentError(f"unknown MGF family {self.kind!r}")
        if self.n < 1:
            raise ArgumentError("n must be positive")

    @classmethod
    def gaussian(cls, sigma, n=1):
        return cls(GAUSSIAN_CHI_SQUARE, sigma=float(sigma), n=int(n))

    @classmethod
    def from_tail(cls, nu, n=1):
        return cls(BOUNDED_FROM_TAIL, nu=float(nu), n=int(n))

    @classmethod
    def tabulated(cls, thetas, values):
        return cls(TABULATED, thetas=tuple(map(float, thetas)), values=tuple(map(float, values)))

    @property
    def domain_sup(self):
        if self.kind == GAUSSIAN_CHI_SQUARE:
            return 1.0 / (2.0 * self.sigma**2)
        if self.kind == BOUNDED_FROM_TAIL:
            return 1.0 / (self.nu * self.n)
        return self.thetas[-1]

    def log_value(self, theta):
        """``log gamma(theta)``; ``+inf`` at or beyond the domain supremum."""
        theta = np.asarray(theta, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == GAUSSIAN_CHI_SQUARE:
                out = -0.5 * self.n * np.log1p(-2.0 * self.sigma**2 * theta)
            elif self.kind == BOUNDED_FROM_TAIL:
                out = -np.log1p(-theta * self.nu * self.n)
            else:
                out = np.interp(theta, self.thetas, np.log(self.values))
                out = np.where(theta > self.thetas[-1], np.inf, out)
        out = np.where((theta >= self.domain_sup) & (self.kind != TABULATED), np.inf, out)
        return np.where(np.isnan(out), np.inf, out)

    def value(self, theta):
        return np.exp(self.log_value(theta))


def _scan_grid(sup):
    if math.isinf(sup):
        return np.logspace(-40, 40, 641)
    # dense near 0 on a log scale, and dense near the supremum on a log-gap scale
    low = sup * np.logspace(-40, -0.5, 317)
    high = sup * -np.expm1(-np.log(10) * np.arange(2, 64) / 4.0)
    return np.unique(np.concatenate([low, high, [0.5 * sup]]))


def minimize_over_theta(log_objective, sup, rtol=1e-8):
    """Minimise ``log_objective(theta)`` over ``0 < theta < sup``.

    The objective must be unimodal (true for every log-convex MGF bound times
    an exponential). Returns ``(theta_star, log_min)``. The value at
    ``theta -> 0`` is assumed to be 0 (every bound here is 1 there), so
    ``log_min <= 0`` always.
    """
    if not sup > 0:
        raise ArgumentError("empty theta domain")
    grid = _scan_grid(sup)
    vals = np.asarray(log_objective(grid), dtype=float)
    vals = np.where(np.isnan(vals), np.inf, vals)
    j = int(np.argmin(vals))
    if not vals[j] < 0.0:
        return 0.0, 0.0
    lo = math.log(grid[j - 1]) if j > 0 else math.log(grid[0]) - 5.0
    hi = math.log(grid[j + 1]) if j + 1 < grid.size else math.log(grid[j]) + 5.0

    def f(t):
        return float(log_objective(np.array([math.exp(t)]))[0])

    width0 = hi - lo
    c = hi - _INVPHI * (hi - lo)
    d = lo + _INVPHI * (hi - lo)
    fc, fd = f(c), f(d)
    # shrink well past rtol of the bracket so minima next to the domain edge are resolved
    while hi - lo > rtol * 1e-2 * width0 and hi - lo > 1e-15 * max(1.0, abs(lo)):
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _INVPHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INVPHI * (hi - lo)
            fd = f(d)
    best_t, best = (c, fc) if fc < fd else (d, fd)
    if vals[j] < best:
        best_t, best = math.log(grid[j]), float(vals[j])
    return math.exp(best_t), min(best, 0.0)


def _as_list(mgfs, k):
    if isinstance(mgfs, MgfFamily):
        return None
    mgfs = list(mgfs)
    if len(mgfs) != k:
        raise ArgumentError(f"need {k} MGF bounds, got {len(mgfs)}")
    return mgfs


def generic_log_tail_bound(eps, k, constants, mgfs):
    """Log of the mixture-form tail bound; ``mgfs`` is one family (identical errors) or ``k`` families."""
    if k < 1:
        raise ArgumentError("k must be at least 1")
    if not eps > 0:
        return 0.0
    rho, vt = constants.contraction, constants.curvature
    R = discount_sum(rho, k)
    fams = _as_list(mgfs, k)
    if fams is None:
        sup = mgfs.domain_sup

        def obj(th):
            return -th * vt * eps / R + mgfs.log_value(th)

    else:
        sup = min(f.domain_sup for f in fams)
        logw = (k - 1 - np.arange(k)) * math.log(rho) - math.log(R)

        def obj(th):
            th = np.asarray(th)
            terms = np.stack([f.log_value(th) for f in fams]) + logw[:, None]
            return -th * vt * eps / R + np.logaddexp.reduce(terms, axis=0)

    return minimize_over_theta(obj, sup)[1]


def generic_tail_bound(eps, k, constants, mgfs):
    """``min(1, inf_theta exp(-theta vartheta eps / R_k)/R_k sum_i rho^(k-1-i) gamma_i(theta))``."""
    return math.exp(generic_log_tail_bound(eps, k, constants, mgfs))


def gaussian_log_mgf_conjugate(mu, n, sigma):
    """Convex conjugate of ``log gamma`` for ``sigma^2 chi^2_n``; 0 for ``mu <= n sigma^2``."""
    s2 = sigma * sigma
    if mu <= n * s2:
        return 0.0
    return (mu - n * s2) / (2.0 * s2) + 0.5 * n * math.log(n * s2 / mu)


def conjugate_tail_bound(eps, k, constants, mgf, numeric=False):
    """Log-probability bound ``-(log gamma)^*(vartheta eps / R_k)`` for identically distributed errors."""
    mu = constants.curvature * eps / discount_sum(constants.contraction, k)
    if mgf.kind == GAUSSIAN_CHI_SQUARE and not numeric:
        return -gaussian_log_mgf_conjugate(mu, mgf.n, mgf.sigma)
    return minimize_over_theta(lambda th: -th * mu + mgf.log_value(th), mgf.domain_sup)[1]


def gaussian_tail_bound_iid(n, sigma, vartheta, R, eps, log=False):
    """Closed-form Gaussian tail bound; 1 at or below ``eps = n sigma^2 R / vartheta``."""
    u = vartheta * eps / (sigma * sigma * R)
    if u <= n:
        return 0.0 if log else 1.0
    lb = min(0.0, 0.5 * n * (1.0 + math.log(u / n)) - 0.5 * u)  # 1 + ln t - t <= 0; clip round-off
    return lb if log else math.exp(lb)


def unconditional_log_tail_bound(eps, k, constants, mgfs):
    """Log of ``inf_theta exp(-theta vartheta eps) prod_i gamma_i(theta rho^(k-1-i))``."""
    if k < 1:
        raise ArgumentError("k must be at least 1")
    if not eps > 0:
        return 0.0
    rho, vt = constants.contraction, constants.curvature
    scale = rho ** (k - 1 - np.arange(k))
    fams = _as_list(mgfs, k)
    if fams is None:
        sup = mgfs.domain_sup / scale.max()

        def obj(th):
            th = np.asarray(th)
            return -th * vt * eps + mgfs.log_value(np.multiply.outer(scale, th)).sum(axis=0)

    else:
        sup = min(f.domain_sup / s for f, s in zip(fams, scale))

        def obj(th):
            th = np.asarray(th)
            total = sum(f.log_value(s * th) for f, s in zip(fams, scale))
            return -th * vt * eps + total

    return minimize_over_theta(obj, sup)[1]


def unconditional_tail_bound(eps, k, constants, mgfs):
    return math.exp(unconditional_log_tail_bound(eps, k, constants, mgfs))


def gaussian_tail_bound_unconditional(n, sigma, vartheta, rho, eps, corrected=False, log=False):
    """Closed-form product-type bound for Gaussian errors, exponent ``alpha = 1 - 1/log rho``.

    The default is the formula exactly as published, whose exponential factor
    is ``exp(-vartheta eps / sigma^2)``. ``corrected=True`` uses
    ``exp(-vartheta eps / (2 sigma^2))``, which is what bounding the product of
    chi-square MGFs by ``(1 - 2 sigma^2 theta)^(-n alpha/2)`` actually yields.
    Both return 1 below ``eps = n alpha sigma^2 / vartheta``; at the threshold
    the printed form is evaluated as is (it is not 1 there).
    """
    if not 0 < rho < 1:
        raise ArgumentError("rho must lie in (0, 1)")
    alpha = 1.0 - 1.0 / math.log(rho)
    na = n * alpha
    u = vartheta * eps / (sigma * sigma)
    if u < na:
        return 0.0 if log else 1.0
    lb = min(0.0, 0.5 * na * (1.0 + math.log(u / na)) - (0.5 * u if corrected else u))
    return lb if log else math.exp(lb)


def gaussian_mean_floor(n, sigma, tau, L, printed=False):
    """Limit bound on ``E pi_k`` under ``N(0, sigma^2 I)`` errors.

    Summing the pathwise bound gives ``n sigma^2 / (vartheta (1 - rho)) =
    40 tau^2 n sigma^2 / L``; ``printed=True`` returns the published constant
    ``20 tau^2 n sigma^2 / L`` instead.
    """
    c = 20.0 if printed else 40.0
    return c * tau * tau * n * sigma * sigma / L


def moment_bound(nu, v, log=False):
    """``v! nu^v`` (or its log)."""
    if not nu > 0:
        raise ArgumentError("nu must be positive")
    if v < 0 or int(v) != v:
        raise ArgumentError("v must be a nonnegative integer")
    lv = float(gammaln(v + 1.0) + v * math.log(nu))
    if log:
        return lv
    return math.exp(lv) if lv < 709.0 else math.inf


def mgf_bound_from_tail(nu, n, theta):
    """``1/(1 - theta nu n)`` on ``0 <= theta < 1/(nu n)``."""
    if not 0 <= theta < 1.0 / (nu * n):
        raise DomainError(f"theta = {theta} outside [0, {1.0 / (nu * n)})")
    return 1.0 / (1.0 - theta * nu * n)


def expectation_rate_bound(lam, beta, constants, k, sharp=False):
    """Bound on ``E pi_k - rho^k pi_0`` when ``E ||e_i||^2 <= lam beta^i``.

    ``(lam/vartheta) max(beta, rho)^(k-1) k``, or with ``sharp=True``
    ``(lam/vartheta) max(beta, rho)^(k-1) / |beta - rho|``.
    """
    rho = constants.contraction
    a2 = max(beta, rho)
    base = lam / constants.curvature * a2 ** (k - 1)
    if not sharp:
        return base * k
    if beta == rho:
        raise ArgumentError("sharp form needs beta != rho")
    return base / abs(beta - rho)


def _main_params(k, lam, beta, n, constants):
    if k < 1:
        raise ArgumentError("k must be at least 1")
    if not (lam > 0 and 0 < beta < 1 and n >= 1):
        raise ArgumentError("need lam > 0, beta in (0, 1), n >= 1")
    rho = constants.contraction
    a2 = max(beta, rho)
    gap = abs(math.log(beta) - math.log(rho))
    abar = float(k) if gap == 0 else min(1.0 + 1.0 / gap, float(k))
    scale = n * lam * a2 ** (k - 1) / constants.curvature  # eps = u * scale
    return abar, scale


def main_threshold(k, lam, beta, n, constants):
    abar, scale = _main_params(k, lam, beta, n, constants)
    return abar * scale


def main_tail_bound(eps, k, lam, beta, n, constants, log=False):
    """Non-asymptotic tail bound under ``U_i <= lam beta^i``.

    ``(e u/abar)^abar exp(-u)`` with ``u = vartheta eps / (n lam max(beta,rho)^(k-1))``
    and ``abar = min(1 + 1/|log beta - log rho|, k)`` (``abar = k`` when
    ``beta == rho``). Returns 1 for ``u <= abar``.
    """
    abar, scale = _main_params(k, lam, beta, n, constants)
    u = eps / scale
    if u <= abar:
        return 0.0 if log else 1.0
    lb = min(0.0, abar * (1.0 + math.log(u / abar)) - u)
    return lb if log else math.exp(lb)


def main_product_log_bound(eps, k, lam, beta, n, constants):
    """Log of the product-form infimum the Main Bound is derived from.

    ``inf_theta exp(-theta vartheta eps) / prod_i (1 - theta x q^i)`` with
    ``x = n lam max(beta,rho)^(k-1)``, ``q = min(beta/rho, rho/beta)``.
    """
    rho = constants.contraction
    x = n * lam * max(beta, rho) ** (k - 1)
    q = min(beta / rho, rho / beta)
    qi = q ** np.arange(k)

    def obj(th):
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.log1p(-np.multiply.outer(qi, np.asarray(th) * x)).sum(axis=0)
        return -np.asarray(th) * constants.curvature * eps - np.where(np.isnan(s), -np.inf, s)

    return minimize_over_theta(obj, 1.0 / x)[1]


def invert_main_bound(p, k, lam, beta, n, constants):
    """Smallest ``eps`` at which :func:`main_tail_bound` equals ``p``.

    With ``u = abar t`` the condition ``log bound = log p`` becomes
    ``t exp(-t) = p^(1/abar)/e``, solved on the ``t >= 1`` branch of Lambert W.
    """
    if not 0 < p <= 1:
        raise ArgumentError("p must lie in (0, 1]")
    abar, scale = _main_params(k, lam, beta, n, constants)
    if p == 1:
        return abar * scale
    z = -math.exp(math.log(p) / abar - 1.0)
    t = -lambertw(z, -1).real
    # one Newton step on the log-space equation polishes the last digits
    g = abar * (1.0 + math.log(t)) - abar * t - math.log(p)
    t -= g / (abar / t - abar)
    return abar * t * scale


def qpochhammer_lower_bound(x, y):
    """``((1-x)^(1 - 1/log y), prod_{i>=0} (1 - x y^i))``."""
    if not (0 <= x <= 1 and 0 < y < 1):
        raise ArgumentError("need x in [0, 1] and y in (0, 1)")
    expo = 1.0 - 1.0 / math.log(y)
    lhs = (1.0 - x) ** expo
    if x == 0:
        return 1.0, 1.0
    if x == 1:
        return lhs, 0.0
    # stop once x y^i < 1e-15; the neglected log-tail is below x y^N / ((1-x)(1-y))
    N = max(1, math.ceil(math.log(1e-15 / x) / math.log(y)) + 1)
    rhs = math.exp(np.log1p(-x * y ** np.arange(N)).sum())
    return lhs, rhs


def finite_product_lower_bound(x, y, N):
    """``(exp(-[log(1 - x/y) - log(1 - x y^(N+1))]/log y), prod_{i=0..N} (1 - x y^i))``."""
    if not 0 < y < 1:
        raise ArgumentError("y must lie in (0, 1)")
    if not 0 <= x < y:
        raise ArgumentError("need 0 <= x < y")
    if N < 0:
        raise ArgumentError("N must be nonnegative")
    lhs = math.exp(-(math.log1p(-x / y) - math.log1p(-x * y ** (N + 1))) / math.log(y))
    rhs = math.exp(np.log1p(-x * y ** np.arange(N + 1)).sum())
    return lhs, rhs


def tedious_exponent(y, k_exp, printed=False):
    base = 1.0 / math.log(1.0 / y) + 1.0
    return base / k_exp if printed else base * k_exp


def tedious_bound(x, y, k_exp, nu, eps, printed_exponent=False, N=None, log=False):
    """Closed form and numeric infimum of ``exp(-theta eps nu) prod_i (1 - theta x y^i)^(-k_exp)``.

    The closed form is ``(e/alpha * eps nu/x)^alpha exp(-eps nu/x)`` with
    ``alpha = k_exp (1/log(1/y) + 1)``; ``printed_exponent=True`` uses
    ``(1/k_exp)(1/log(1/y) + 1)`` instead. Requires ``eps >= alpha x / nu``.
    ``log=True`` returns both values as logs.
    """
    if not (0 < x <= 1 and 0 < y < 1 and k_exp > 0 and nu > 0):
        raise ArgumentError("need x in (0, 1], y in (0, 1), k_exp > 0, nu > 0")
    alpha = tedious_exponent(y, k_exp, printed_exponent)
    u = eps * nu / x
    if u < alpha * (1.0 - 1e-12):
        raise DomainError(f"eps = {eps} below threshold {alpha * x / nu}")
    u = max(u, alpha)  # an eps handed in at the threshold can round one ulp low
    closed = min(0.0, alpha * (1.0 + math.log(u / alpha)) - u)
    if N is None:
        N = max(1, math.ceil(math.log(1e-13) / math.log(y)) + 1)
    yi = y ** np.arange(N)

    def obj(th):
        th = np.asarray(th)
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.log1p(-np.multiply.outer(yi, th * x)).sum(axis=0)
        return -th * eps * nu - k_exp * np.where(np.isnan(s), -np.inf, s)

    numeric = minimize_over_theta(obj, 1.0 / x)[1]
    if log:
        return closed, numeric
    return math.exp(closed), math.exp(numeric)


def write_bound_table(path, rows):
    """Rows of ``(k, epsilon, bound_name, value)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "epsilon", "bound_name", "value"])
        for k, eps, name, value in rows:
            w.writerow([int(k), repr(float(eps)), name, repr(float(value))])
