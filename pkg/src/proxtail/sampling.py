"""Gradient-error models, growing sample-size schedules and population statistics.

Random draws are organised so that iteration ``k`` of a trajectory always
consumes the same number of variates from the trajectory's own stream:

* ``gaussian``: ``n`` standard normals
* ``subsample_with_replacement``: ``m_k`` uniforms (index ``floor(u M)``)
* ``subsample_without_replacement``: ``M`` uniform keys; the subset is the
  ``m_k`` smallest keys

This makes a sequence of per-iteration draws bit-identical to one bulk draw,
which the batch engine in :mod:`proxtail.solver` relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .model import LOGISTIC, component_gradients, full_gradient

NONE = "none"
GAUSSIAN = "gaussian"
WITH_REPLACEMENT = "subsample_with_replacement"
WITHOUT_REPLACEMENT = "subsample_without_replacement"
ERROR_KINDS = (NONE, GAUSSIAN, WITH_REPLACEMENT, WITHOUT_REPLACEMENT)


@dataclass(frozen=True)
class ErrorModel:
    """How the gradient error ``e_k`` is produced.

    For ``gaussian``, ``e_k ~ N(0, sigma_k^2 I)`` with
    ``sigma_k^2 = sigma^2 * variance_decay**k``.
    """

    kind: str = NONE
    sigma: float | None = None
    variance_decay: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ERROR_KINDS:
            raise ArgumentError(f"unknown error model {self.kind!r}")
        if self.kind == GAUSSIAN and not (self.sigma is not None and self.sigma > 0):
            raise ArgumentError("gaussian error model needs sigma > 0")
        if not 0 < self.variance_decay <= 1:
            raise ArgumentError("variance_decay must lie in (0, 1]")

    @property
    def subsampled(self):
        return self.kind in (WITH_REPLACEMENT, WITHOUT_REPLACEMENT)

    def sigma_at(self, k):
        return self.sigma * self.variance_decay ** (0.5 * np.asarray(k, dtype=float))


@dataclass(frozen=True)
class SampleSchedule:
    """Geometric sample-size schedule.

    ``iid`` mode enforces ``1/m_k <= scale * decay**k``; ``without_replacement``
    mode enforces ``(1/m_k)(1 - (m_k - 1)/M) <= scale * decay**k`` with
    ``m_k <= M``.
    """

    scale: float
    decay: float
    mode: str = "iid"
    M: int | None = None

    def __post_init__(self):
        if not self.scale > 0:
            raise ArgumentError("schedule scale must be positive")
        if not 0 < self.decay < 1:
            raise ArgumentError("schedule decay must lie in (0, 1)")
        if self.mode not in ("iid", "without_replacement"):
            raise ArgumentError(f"unknown schedule mode {self.mode!r}")
        if self.mode == "without_replacement" and not (self.M and self.M >= 1):
            raise ArgumentError("without_replacement schedule needs M >= 1")

    def target(self, k):
        return self.scale * self.decay ** k

    def saturation_index(self):
        """First k at which the without-replacement schedule reaches M."""
        if self.M == 1:
            return 0
        # m_k = M as soon as the target drops below the factor at m = M - 1
        edge = finite_population_factor(self.M - 1, self.M)
        k = max(0, math.floor(math.log(self.scale / edge) / math.log(1.0 / self.decay)) - 1)
        while self.target(k) >= edge:
            k += 1
        while k > 0 and self.target(k - 1) < edge:
            k -= 1
        return k


def finite_population_factor(m, M):
    """``(1/m)(1 - (m - 1)/M)``, decreasing in ``m``."""
    return (1.0 / m) * (1.0 - (m - 1.0) / M)


def sample_size(schedule, k):
    """Smallest admissible sample size at iteration ``k``."""
    t = schedule.target(k)
    if schedule.mode == "iid":
        # ceil(1/t) can miss by a few ulps once m is large; bisect around it
        guess = max(1, math.ceil(1 / t))
        step = max(1, guess >> 40)
        lo, hi = max(0, guess - step), guess + step
        while lo > 0 and 1 / lo <= t:
            lo = max(0, lo - step)
        while 1 / hi > t:
            hi += step
        while hi - lo > 1:  # 1/lo > t >= 1/hi, with 1/0 read as infinite
            mid = (lo + hi) // 2
            if 1 / mid <= t:
                hi = mid
            else:
                lo = mid
        return max(1, hi)
    M = schedule.M
    if M == 1 or finite_population_factor(1, M) <= t:
        return 1
    if finite_population_factor(M - 1, M) > t:
        return M
    lo, hi = 1, M - 1  # factor(lo) > t >= factor(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if finite_population_factor(mid, M) <= t:
            hi = mid
        else:
            lo = mid
    return hi


def sample_sizes(schedule, k_max):
    return np.array([sample_size(schedule, k) for k in range(k_max)], dtype=np.int64)


def substream(master_seed, *key):
    """Independent generator for ``key`` (e.g. a replicate index)."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(v) for v in key))
    return np.random.Generator(np.random.PCG64(ss))


def subset_from_keys(keys, m):
    """Indices of the ``m`` smallest keys along the last axis (a uniform m-subset)."""
    return np.argpartition(keys, m - 1, axis=-1)[..., :m]


def sampled_gradient(spec, data, x, m, model, stream, k=0):
    """Return ``(estimate, error)`` with ``error = estimate - grad f(x)``.

    ``k`` only matters for a Gaussian model with variance decay.
    """
    x = np.asarray(x, dtype=float)
    grad = full_gradient(spec, data, x)
    if model.kind == NONE:
        return grad, np.zeros_like(grad)
    if model.kind == GAUSSIAN:
        z = stream.standard_normal(spec.n)
        est = grad + model.sigma_at(k) * z
        return est, est - grad
    if spec.smooth_kind != LOGISTIC:
        raise ArgumentError("subsampling needs a finite-sum objective")
    M = data.M
    if m < 1 or (model.kind == WITHOUT_REPLACEMENT and m > M):
        raise ArgumentError(f"sample size {m} outside [1, {M}]")
    if model.kind == WITH_REPLACEMENT:
        idx = np.minimum((stream.random(m) * M).astype(np.int64), M - 1)
    else:
        keys = stream.random(M)
        if m == M:
            return grad, np.zeros_like(grad)
        idx = subset_from_keys(keys, m)
    est = component_gradients(spec, data, x)[idx].mean(axis=0)
    return est, est - grad


def population_variance(spec, data, x):
    """``S(x) = (1/(M-1)) sum_i ||grad f(x) - grad f_i(x)||^2``."""
    if data is None or data.M < 2:
        raise ArgumentError("population variance needs M >= 2")
    G = component_gradients(spec, data, x)
    dev = G - G.mean(axis=-2, keepdims=True)
    return np.sum(dev * dev, axis=(-2, -1)) / (data.M - 1)


def error_variance_without_replacement(S, m, M):
    """Expected ``||e||^2`` of an m-of-M average without replacement."""
    if not 1 <= m <= M:
        raise ArgumentError(f"sample size {m} outside [1, {M}]")
    return (1.0 - m / M) * S / m


def population_diameter(spec, data, x):
    """Per-coordinate spread ``max_j [grad f_j]_i - min_j [grad f_j]_i``."""
    G = component_gradients(spec, data, x)
    return G.max(axis=-2) - G.min(axis=-2)


def concentration_eta(d, m, M=None, kind="hoeffding"):
    """Sub-Gaussian scale of a sample mean: ``P(S_m - E S_m >= eps) <= exp(-eps^2/eta)``.

    Hoeffding (independent draws): ``d^2/(2m)``. Serfling (without
    replacement from M): ``d^2/(2m) (1 - (m-1)/M)``.
    """
    if m < 1:
        raise ArgumentError("sample size must be positive")
    base = np.asarray(d, dtype=float) ** 2 / (2.0 * m)
    if kind == "hoeffding":
        return base
    if kind != "serfling":
        raise ArgumentError(f"unknown concentration kind {kind!r}")
    if M is None or m > M:
        raise ArgumentError("serfling needs M with m <= M")
    return base * (1.0 - (m - 1.0) / M)


def tail_scale(d, m, M=None):
    """Single Hypothesis-B scale ``U_k`` for a sampled gradient.

    Uses the largest per-coordinate diameter. Serfling when ``M`` is given,
    Hoeffding otherwise.
    """
    dmax = float(np.max(d))
    if M is None:
        return float(concentration_eta(dmax, m, kind="hoeffding"))
    return float(concentration_eta(dmax, m, M, kind="serfling"))
