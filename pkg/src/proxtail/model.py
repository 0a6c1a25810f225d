"""Composite objectives h = f + g, proximal operators and test problems.

Two smooth families are supported:

* ``quadratic``: ``f(x) = 1/2 (x - c)^T Q (x - c) + mu/2 ||x||^2``
* ``logistic_finite_sum``: ``f(x) = (1/M) sum_i log(1 + exp(-b_i <a_i, x>)) + mu/2 ||x||^2``

and three nonsmooth terms ``g``: zero, a weighted l1 norm, and the indicator
of a box. Every function here accepts either a single point of shape ``(n,)``
or a batch of points of shape ``(B, n)``.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ArgumentError, NumericError

QUADRATIC = "quadratic"
LOGISTIC = "logistic_finite_sum"


@dataclass(frozen=True)
class Nonsmooth:
    """The nonsmooth term ``g``: ``zero``, ``l1`` (with ``weight``) or ``box``."""

    kind: str = "zero"
    weight: float = 0.0
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "l1", "box"):
            raise ArgumentError(f"unknown nonsmooth kind {self.kind!r}")
        if self.kind == "l1" and not self.weight >= 0:
            raise ArgumentError("l1 weight must be nonnegative")
        if self.kind == "box":
            if self.lo is None or self.hi is None:
                raise ArgumentError("box needs lo and hi")
            lo = np.asarray(self.lo, dtype=float)
            hi = np.asarray(self.hi, dtype=float)
            if np.any(lo > hi):
                raise ArgumentError("box needs lo <= hi")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros(x.shape[:-1])
        if self.kind == "l1":
            return self.weight * np.abs(x).sum(axis=-1)
        inside = np.all((x >= self.lo) & (x <= self.hi), axis=-1)
        return np.where(inside, 0.0, np.inf)

    def contains(self, x):
        return np.isfinite(self.value(x))


ZERO = Nonsmooth()


def prox(g, alpha, z):
    """Return ``argmin_y { alpha g(y) + 1/2 ||z - y||^2 }``."""
    if not alpha > 0:
        raise ArgumentError(f"prox step must be positive, got {alpha}")
    z = np.asarray(z, dtype=float)
    if g.kind == "zero":
        return z.copy()
    if g.kind == "l1":
        t = alpha * g.weight
        return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)
    return np.clip(z, g.lo, g.hi)


@dataclass(frozen=True)
class FiniteSumData:
    """Labelled features for the logistic finite sum."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        if A.shape[0] < 1:
            raise ArgumentError("need at least one data row")
        if A.shape[0] != b.shape[0]:
            raise ArgumentError("A and b disagree on the number of rows")
        if not np.all(np.isin(b, (-1.0, 1.0))):
            raise ArgumentError("labels must be -1 or +1")
        if not np.all(np.isfinite(A)):
            raise ArgumentError("features must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def M(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]


@dataclass(frozen=True)
class ObjectiveSpec:
    """A composite problem ``h = f + g`` together with its constants.

    ``L`` is the Lipschitz constant of the gradient of the full smooth part
    (ridge included) and ``tau`` the constant of the global error bound
    ``dist(x, S) <= tau ||x - prox(x - grad f(x)/L)||``.
    """

    smooth_kind: str
    n: int
    L: float
    tau: float
    mu: float = 0.0
    nonsmooth: Nonsmooth = field(default_factory=Nonsmooth)
    hessian: np.ndarray | None = None
    center: np.ndarray | None = None

    def __post_init__(self):
        if self.smooth_kind not in (QUADRATIC, LOGISTIC):
            raise ArgumentError(f"unknown smooth kind {self.smooth_kind!r}")
        if not (self.n >= 1 and self.L > 0 and self.tau >= 1 and self.mu >= 0):
            raise ArgumentError("need n >= 1, L > 0, tau >= 1 and mu >= 0")
        if self.smooth_kind == QUADRATIC:
            Q = np.atleast_2d(np.asarray(self.hessian, dtype=float))
            if Q.shape != (self.n, self.n):
                raise ArgumentError("hessian must be n x n")
            c = np.zeros(self.n) if self.center is None else np.asarray(self.center, dtype=float)
            object.__setattr__(self, "hessian", 0.5 * (Q + Q.T))
            object.__setattr__(self, "center", c.reshape(self.n))


def _check(spec, data, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.n:
        raise ArgumentError(f"point has dimension {x.shape[-1]}, expected {spec.n}")
    if spec.smooth_kind == LOGISTIC:
        if data is None:
            raise ArgumentError("logistic objective needs data")
        if data.n != spec.n:
            raise ArgumentError("data dimension does not match objective")
    return x


def smooth_value(spec, data, x):
    """``f(x)`` including the ridge term."""
    x = _check(spec, data, x)
    ridge = 0.5 * spec.mu * np.sum(x * x, axis=-1)
    if spec.smooth_kind == QUADRATIC:
        d = x - spec.center
        return 0.5 * np.einsum("...i,ij,...j->...", d, spec.hessian, d) + ridge
    z = x @ data.A.T
    return np.logaddexp(0.0, -data.b * z).mean(axis=-1) + ridge


def composite_value(spec, data, x):
    """``h(x) = f(x) + g(x)``; ``+inf`` outside a box."""
    x = _check(spec, data, x)
    return smooth_value(spec, data, x) + spec.nonsmooth.value(x)


def _logistic_weights(data, x):
    # derivative of log(1 + exp(-b z)) with respect to z
    z = x @ data.A.T
    return -data.b * expit(-data.b * z)


def full_gradient(spec, data, x):
    """``grad f(x)`` including the ridge term."""
    x = _check(spec, data, x)
    if spec.smooth_kind == QUADRATIC:
        return (x - spec.center) @ spec.hessian + spec.mu * x
    w = _logistic_weights(data, x)
    return w @ data.A / data.M + spec.mu * x


def component_gradients(spec, data, x):
    """Per-term gradients ``grad f_i(x)``, shape ``(..., M, n)``.

    Each term carries the ridge, so their mean is ``full_gradient``.
    """
    x = _check(spec, data, x)
    if spec.smooth_kind != LOGISTIC:
        raise ArgumentError("component gradients need a finite-sum objective")
    w = _logistic_weights(data, x)
    return w[..., :, None] * data.A + spec.mu * x[..., None, :]


def three_point_slack(spec, data, x, direction, y):
    """Slack of the three-point property at the step taken from ``x``.

    ``direction`` is the gradient estimate ``grad f(x) + e`` used for the step
    ``x+ = prox(1/L, x - direction/L)``. Returns the right-minus-left
    difference, which should be nonnegative for every ``y`` in ``dom g``.
    """
    L = spec.L
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    direction = np.asarray(direction, dtype=float)
    xn = prox(spec.nonsmooth, 1.0 / L, x - direction / L)
    g = spec.nonsmooth.value
    rhs = (
        g(xn)
        + np.sum(direction * (xn - y), axis=-1)
        + 0.5 * L * np.sum((xn - x) ** 2, axis=-1)
        + 0.5 * L * np.sum((y - xn) ** 2, axis=-1)
        - 0.5 * L * np.sum((y - x) ** 2, axis=-1)
    )
    return g(y) - rhs


def estimate_lipschitz(spec, data=None, rtol=1e-8, max_iter=10_000):
    """Lipschitz constant of ``grad f``.

    Power iteration on the Hessian for quadratics; the standard logistic
    curvature bound ``sigma_max(A)^2 / (4M) + mu`` for the finite sum.
    """
    if spec.smooth_kind == LOGISTIC:
        if data is None:
            raise ArgumentError("logistic objective needs data")
        return logistic_lipschitz(data, spec.mu)
    return _power_iteration(spec.hessian + spec.mu * np.eye(spec.n), rtol, max_iter)


def logistic_lipschitz(data, mu=0.0):
    return np.linalg.norm(data.A, 2) ** 2 / (4.0 * data.M) + mu


def _power_iteration(H, rtol, max_iter):
    v = np.ones(H.shape[0]) / np.sqrt(H.shape[0])
    v = v + 1e-3 * np.arange(H.shape[0])  # avoid starting orthogonal to the top eigenvector
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = H @ v
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - est) <= rtol * new:
            return new
        est = new
    raise NumericError("power iteration did not converge", iteration=max_iter, best=est)


def quadratic_objective(hessian, center=None, nonsmooth=ZERO, mu=0.0, L=None, tau=None):
    """Build a quadratic ObjectiveSpec, resolving ``L`` and ``tau`` when omitted.

    The default ``tau = L / (lambda_min(Q) + mu)`` is only valid for ``g = 0``;
    pass ``tau`` explicitly otherwise.
    """
    Q = np.atleast_2d(np.asarray(hessian, dtype=float))
    n = Q.shape[0]
    eig = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    if L is None:
        L = float(eig[-1]) + mu
    if tau is None:
        if nonsmooth.kind != "zero":
            raise ArgumentError("tau must be given when g is not zero")
        strong = float(eig[0]) + mu
        if strong <= 0:
            raise ArgumentError("tau cannot be derived: objective is not strongly convex")
        tau = max(1.0, L / strong)
    return ObjectiveSpec(QUADRATIC, n, float(L), float(tau), float(mu), nonsmooth, Q, center)


def logistic_objective(data, mu="auto", nonsmooth=ZERO, L=None, tau=None):
    """Build a ridge-logistic ObjectiveSpec.

    ``mu="auto"`` sets the ridge to one percent of the resulting Lipschitz
    constant. With ``g = 0`` and ``mu > 0``, ``tau`` defaults to ``L / mu``.
    """
    base = logistic_lipschitz(data, 0.0)
    if mu == "auto":
        mu = 1e-2 * base / 0.99
    mu = float(mu)
    if L is None:
        L = base + mu
    if tau is None:
        if nonsmooth.kind != "zero" or mu <= 0:
            raise ArgumentError("tau must be given unless g = 0 and mu > 0")
        tau = L / mu
    return ObjectiveSpec(LOGISTIC, data.n, float(L), float(tau), mu, nonsmooth)


def generate_logistic_dataset(M, n, seed):
    """Standard-normal features with labels from a planted logistic model."""
    if M < 1 or n < 1:
        raise ArgumentError("M and n must be positive")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((M, n))
    w = rng.standard_normal(n)
    p = expit(A @ w)
    b = np.where(rng.random(M) < p, 1.0, -1.0)
    return FiniteSumData(A, b)


def write_dataset_csv(data, path):
    """Write ``b,a_1,...,a_n`` rows; returns the SHA-256 of the file."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["b"] + [f"a_{j + 1}" for j in range(data.n)])
        for bi, row in zip(data.b, data.A):
            w.writerow([repr(int(bi))] + [repr(float(v)) for v in row])
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_dataset_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "b":
        raise ArgumentError("dataset CSV must start with a 'b' column")
    arr = np.array([[float(v) for v in r] for r in body], dtype=float)
    return FiniteSumData(arr[:, 1:], arr[:, 0])
