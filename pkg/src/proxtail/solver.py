"""Inexact proximal-gradient iteration with step 1/L, plus pathwise monitors.

The iteration is ``x_{k+1} = prox_{1/L}(x_k - (grad f(x_k) + e_k)/L)``. The
engine :func:`simulate` advances a batch of independent trajectories at once;
:func:`run` is the single-trajectory front end. Monitors take anything with
``pi``/``err_sq`` (and optionally ``x``) arrays whose last axis is time, so
they apply equally to one trajectory or to a whole ensemble.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ArgumentError, NumericError
from .model import LOGISTIC, composite_value, full_gradient, prox, three_point_slack
from .sampling import (
    GAUSSIAN,
    NONE,
    WITH_REPLACEMENT,
    WITHOUT_REPLACEMENT,
    ErrorModel,
    sample_sizes,
    substream,
)

PATHWISE_TOL = 1e-9


@dataclass(frozen=True)
class RateConstants:
    """Linear-rate constants of the inexact iteration.

    ``contraction`` is the per-step factor ``rho = 40 tau^2 / (1 + 40 tau^2)``;
    ``curvature`` is ``vartheta = L (1 + 40 tau^2) / (40 tau^2) = L / rho``,
    so each squared gradient error enters the gap bound with weight
    ``1/curvature``.
    """

    contraction: float
    curvature: float
    tau: float
    L: float


def rate_constants(L, tau):
    if not L > 0:
        raise ArgumentError("L must be positive")
    if not tau >= 1:
        raise ArgumentError(f"tau must be >= 1, got {tau}")
    s = 40.0 * tau * tau
    return RateConstants(s / (1.0 + s), L * (1.0 + s) / s, float(tau), float(L))


@dataclass
class Trajectory:
    """One run of the iteration.

    ``pi[k]`` is the optimality gap at ``x_k`` (``k = 0..k_max``);
    ``err_sq[k]`` and ``m[k]`` describe the step from ``x_k`` to ``x_{k+1}``.
    ``x`` and ``estimates`` are kept only when requested.
    """

    pi: np.ndarray
    h: np.ndarray
    err_sq: np.ndarray
    m: np.ndarray
    constants: RateConstants
    h_star: float
    seed: int | None = None
    x: np.ndarray | None = None
    estimates: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def k_max(self):
        return self.err_sq.shape[-1]

    def records(self):
        """Per-iteration dicts with ``k, x, h_value, pi, err_sq, m``."""
        out = []
        for k in range(self.k_max + 1):
            out.append(
                dict(
                    k=k,
                    x=None if self.x is None else self.x[k],
                    h_value=float(self.h[k]),
                    pi=float(self.pi[k]),
                    err_sq=float(self.err_sq[k]) if k < self.k_max else 0.0,
                    m=int(self.m[k]) if k < self.k_max else 0,
                )
            )
        return out


def prox_residual(spec, data, x):
    step = 1.0 / spec.L
    xn = prox(spec.nonsmooth, step, x - step * full_gradient(spec, data, x))
    return float(np.linalg.norm(x - xn)), xn


def optimal_value_oracle(spec, data=None, tol=None, x0=None, max_iter=1_000_000):
    """Run the exact iteration until the prox-residual is below ``tol``.

    Returns ``(h_star, x_star)``.
    """
    x = np.zeros(spec.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    if tol is None:
        tol = 1e-12 * max(1.0, float(np.linalg.norm(x)))
    if spec.nonsmooth.kind == "box":
        x = np.clip(x, spec.nonsmooth.lo, spec.nonsmooth.hi)
    for it in range(max_iter):
        res, xn = prox_residual(spec, data, x)
        if not np.isfinite(res):
            raise NumericError("non-finite iterate in optimal-value oracle", iteration=it)
        x = xn
        if res <= tol:
            return float(composite_value(spec, data, x)), x
    raise NumericError(
        "optimal-value oracle hit its iteration cap",
        iteration=max_iter,
        best=(float(composite_value(spec, data, x)), x),
    )


def _predraw(model, streams, m, k_max, n, M):
    """Bulk-draw every replicate's randomness for the whole run."""
    if model.kind == GAUSSIAN:
        return np.stack([s.standard_normal((k_max, n)) for s in streams])
    if model.kind == WITHOUT_REPLACEMENT:
        return np.stack([s.random((k_max, M)) for s in streams])
    if model.kind == WITH_REPLACEMENT:
        total = int(m.sum())
        u = np.stack([s.random(total) for s in streams])
        return np.minimum((u * M).astype(np.int64), M - 1)
    return None


def simulate(
    spec,
    data,
    x0,
    model,
    k_max,
    streams,
    h_star,
    schedule=None,
    x_star=None,
    keep_iterates=False,
    track_population=False,
    injected_errors=None,
):
    """Advance ``len(streams)`` independent trajectories for ``k_max`` steps.

    Returns a dict of arrays with a leading replicate axis: ``h``, ``pi``,
    ``err_sq`` and the shared ``m``; optionally ``x``, ``estimates``,
    ``dist_sq`` (to ``x_star``), ``S`` (population variance at ``x_k``) and
    ``dmax`` (largest per-coordinate population diameter at ``x_k``).
    ``failed`` maps replicate index to the first non-finite iteration.
    """
    if k_max < 1:
        raise ArgumentError("k_max must be at least 1")
    n = spec.n
    B = 1 if injected_errors is not None else len(streams)
    finite_sum = spec.smooth_kind == LOGISTIC
    if (model.subsampled or track_population) and not finite_sum:
        raise ArgumentError("subsampling needs a finite-sum objective")
    M = data.M if finite_sum else 0
    if model.subsampled:
        if schedule is None:
            raise ArgumentError("subsampled error model needs a schedule")
        m = sample_sizes(schedule, k_max)
        if model.kind == WITHOUT_REPLACEMENT:
            m = np.minimum(m, M)
    else:
        m = np.zeros(k_max, dtype=np.int64)
    draws = None if injected_errors is not None else _predraw(model, streams, m, k_max, n, M)
    if injected_errors is not None:
        injected_errors = np.asarray(injected_errors, dtype=float).reshape(k_max, n)
    offsets = np.concatenate([[0], np.cumsum(m)])

    X = np.broadcast_to(np.asarray(x0, dtype=float), (B, n)).copy()
    h = np.empty((B, k_max + 1))
    err_sq = np.empty((B, k_max))
    h[:, 0] = composite_value(spec, data, X)
    out = {}
    if keep_iterates:
        xs = np.empty((B, k_max + 1, n))
        ests = np.empty((B, k_max, n))
        xs[:, 0] = X
    if x_star is not None:
        dist_sq = np.empty((B, k_max + 1))
        dist_sq[:, 0] = np.sum((X - x_star) ** 2, axis=1)
    if track_population:
        S = np.empty((B, k_max))
        dmax = np.empty((B, k_max))
    alive = np.ones(B, dtype=bool)
    failed = {}
    step = 1.0 / spec.L
    rows = np.arange(B)[:, None]

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(k_max):
            if finite_sum:
                w = -data.b * expit(-data.b * (X @ data.A.T))
                grad = w @ data.A / M + spec.mu * X
            else:
                grad = full_gradient(spec, data, X)
            mk = int(m[k])
            if injected_errors is not None:
                est = grad + injected_errors[k]
            elif model.kind == NONE:
                est = grad
            elif model.kind == GAUSSIAN:
                est = grad + model.sigma_at(k) * draws[:, k]
            elif model.kind == WITHOUT_REPLACEMENT and mk == M:
                est = grad
            else:
                if model.kind == WITHOUT_REPLACEMENT:
                    keys = draws[:, k]
                    thr = np.partition(keys, mk - 1, axis=1)[:, mk - 1 : mk]
                    weights = (keys <= thr).astype(float)
                else:
                    idx = draws[:, offsets[k] : offsets[k + 1]]
                    weights = np.zeros((B, M))
                    np.add.at(weights, (np.broadcast_to(rows, idx.shape), idx), 1.0)
                est = (w * weights) @ data.A / mk + spec.mu * X
            e = est - grad
            err_sq[:, k] = np.sum(e * e, axis=1)
            if track_population:
                G = w[:, :, None] * data.A
                dev = G - G.mean(axis=1, keepdims=True)
                S[:, k] = np.sum(dev * dev, axis=(1, 2)) / max(M - 1, 1)
                dmax[:, k] = (G.max(axis=1) - G.min(axis=1)).max(axis=1)
            X = prox(spec.nonsmooth, step, X - step * est)
            h[:, k + 1] = composite_value(spec, data, X)
            if keep_iterates:
                xs[:, k + 1] = X
                ests[:, k] = est
            if x_star is not None:
                dist_sq[:, k + 1] = np.sum((X - x_star) ** 2, axis=1)
            bad = alive & ~(np.isfinite(h[:, k + 1]) & np.isfinite(err_sq[:, k]))
            if bad.any():
                for r in np.flatnonzero(bad):
                    failed[int(r)] = k
                alive &= ~bad
                X[bad] = 0.0

    out["h"] = h
    out["pi"] = h - h_star
    out["err_sq"] = err_sq
    out["m"] = m
    out["failed"] = failed
    if keep_iterates:
        out["x"] = xs
        out["estimates"] = ests
    if x_star is not None:
        out["dist_sq"] = dist_sq
    if track_population:
        out["S"] = S
        out["dmax"] = dmax
    return out


def run(
    spec,
    data,
    x0,
    error_model=None,
    schedule=None,
    k_max=100,
    constants=None,
    h_star=None,
    x_star=None,
    keep_iterates=True,
    track_population=False,
    injected_errors=None,
    stream=None,
):
    """Run one trajectory.

    ``injected_errors`` (shape ``(k_max, n)``) replaces the error model with a
    fixed error sequence. The random stream defaults to one seeded by
    ``error_model.rng_seed``.
    """
    error_model = error_model or ErrorModel()
    if constants is None:
        constants = rate_constants(spec.L, spec.tau)
    if h_star is None:
        h_star, x_opt = optimal_value_oracle(spec, data)
        if x_star is None:
            x_star = x_opt
    if stream is None:
        stream = substream(error_model.rng_seed)
    out = simulate(
        spec,
        data,
        x0,
        error_model,
        k_max,
        [stream],
        h_star,
        schedule=schedule,
        x_star=x_star,
        keep_iterates=keep_iterates,
        track_population=track_population,
        injected_errors=injected_errors,
    )
    if out["failed"]:
        k = out["failed"][0]
        raise NumericError(f"non-finite value at iteration {k}", iteration=k)
    extras = {name: out[name][0] for name in ("dist_sq", "S", "dmax") if name in out}
    if x_star is not None:
        extras["x_star"] = np.asarray(x_star, dtype=float)
    return Trajectory(
        pi=out["pi"][0],
        h=out["h"][0],
        err_sq=out["err_sq"][0],
        m=out["m"],
        constants=constants,
        h_star=float(h_star),
        seed=error_model.rng_seed,
        x=out["x"][0] if keep_iterates else None,
        estimates=out["estimates"][0] if keep_iterates else None,
        extras=extras,
    )


def discounted_error_sum(err_sq, contraction):
    """``D_k = sum_{i<k} rho^(k-1-i) err_i`` for ``k = 0..K`` along the last axis."""
    err_sq = np.asarray(err_sq, dtype=float)
    D = np.zeros(err_sq.shape[:-1] + (err_sq.shape[-1] + 1,))
    for k in range(err_sq.shape[-1]):
        D[..., k + 1] = contraction * D[..., k] + err_sq[..., k]
    return D


def pathwise_bound(pi0, err_sq, constants):
    """Right-hand side ``rho^k pi_0 + D_k / vartheta`` of the pathwise gap bound."""
    D = discounted_error_sum(err_sq, constants.contraction)
    K = D.shape[-1]
    powers = constants.contraction ** np.arange(K)
    return np.asarray(pi0, dtype=float)[..., None] * powers + D / constants.curvature


def check_pathwise_bound(traj):
    """Slack ``s_k = bound_k - pi_k``; nonnegative up to ``1e-9 max(1, pi_0)``."""
    pi = np.asarray(traj.pi)
    return pathwise_bound(pi[..., 0], traj.err_sq, traj.constants) - pi


def pathwise_ok(traj, tol=PATHWISE_TOL):
    s = check_pathwise_bound(traj)
    scale = np.maximum(1.0, np.abs(np.asarray(traj.pi)[..., :1]))
    return s >= -tol * scale


def check_sufficient_decrease(traj, rtol=PATHWISE_TOL):
    """Per-step check of ``pi_{k+1} <= rho pi_k + (rho/L) ||e_k||^2``."""
    c = traj.constants
    pi = np.asarray(traj.pi)
    rhs = c.contraction * pi[..., :-1] + c.contraction / c.L * np.asarray(traj.err_sq)
    return pi[..., 1:] <= rhs + rtol * np.maximum(1.0, np.abs(rhs))


def solution_distance_slacks(traj, x_star):
    """Slacks of the four distance-to-solution bounds at every step.

    With the unique solution ``x_star`` standing in for the projection of
    ``x_k`` onto the solution set. Returns a dict of arrays: ``a``..``d`` are
    the bounds as published; ``b_corrected`` and ``d_corrected`` keep the
    factor 2 on the cross term when squaring ``a`` and ``c`` (the published
    ``b`` and ``d`` drop it and can fail, e.g. ``f = x^2/2``, ``x_k = 1``,
    ``e_k = -8/13``).
    """
    if traj.x is None:
        raise ArgumentError("trajectory was run without keep_iterates")
    c = traj.constants
    tau, L = c.tau, c.L
    x = np.asarray(traj.x)
    dist = np.linalg.norm(x[..., :-1, :] - x_star, axis=-1)
    dist_next = np.linalg.norm(x[..., 1:, :] - x_star, axis=-1)
    move = np.linalg.norm(x[..., :-1, :] - x[..., 1:, :], axis=-1)
    en = np.sqrt(np.asarray(traj.err_sq))
    return {
        "a": tau * move + tau / L * en - dist,
        "b": 2 * tau**2 * move**2 + 1.25 * tau**2 / L**2 * en**2 - dist**2,
        "c": (1 + tau) * move + tau / L * en - dist_next,
        "d": 0.5 * (2 + 5 * tau + 3 * tau**2) * move**2
        + (3 * tau**2 + tau) / (2 * L**2) * en**2
        - dist_next**2,
        "b_corrected": 2 * tau**2 * move**2 + 2 * tau**2 / L**2 * en**2 - dist**2,
        "d_corrected": (1 + 3 * tau + 2 * tau**2) * move**2 + (2 * tau**2 + tau) / L**2 * en**2 - dist_next**2,
    }


def check_solution_distance_bounds(traj, x_star, tol=PATHWISE_TOL):
    """Per-step booleans for each entry of :func:`solution_distance_slacks`."""
    slacks = solution_distance_slacks(traj, x_star)
    return {name: s >= -tol * np.maximum(1.0, np.abs(s)) for name, s in slacks.items()}


def three_point_slacks(traj, spec, data, ys):
    """Three-point property slack for each step and each point in ``ys``.

    Shape ``(k_max, len(ys))``; entries should be ``>= -1e-9``.
    """
    if traj.estimates is None:
        raise ArgumentError("trajectory was run without keep_iterates")
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    out = np.empty((traj.k_max, len(ys)))
    for j, y in enumerate(ys):
        out[:, j] = three_point_slack(spec, data, traj.x[:-1], traj.estimates, y)
    return out


def supermartingale_condition(traj, x_star, conditional_err_var):
    """Whether ``E[||e_k||^2 | past] <= ||x_k - x*||^2 / (10 tau^2)`` at each step."""
    x = np.asarray(traj.x)
    dist_sq = np.sum((x[..., :-1, :] - x_star) ** 2, axis=-1)
    thresh = dist_sq / (10.0 * traj.constants.tau**2)
    return np.asarray(conditional_err_var, dtype=float) <= thresh


def write_trajectory_csv(path, trajectories, run_ids=None):
    """Rows ``run_id,k,m,pi,err_sq,bound_pathwise``; err_sq is ``nan`` on the last row."""
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    run_ids = range(len(trajectories)) if run_ids is None else run_ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "k", "m", "pi", "err_sq", "bound_pathwise"])
        for rid, t in zip(run_ids, trajectories):
            bound = pathwise_bound(t.pi[0], t.err_sq, t.constants)
            K = t.k_max
            for k in range(K + 1):
                m = int(t.m[k]) if k < K else 0
                e = repr(float(t.err_sq[k])) if k < K else "nan"
                w.writerow([rid, k, m, repr(float(t.pi[k])), e, repr(float(bound[k]))])


def warn_if_negative_gap(pi, tol=1e-9):
    if np.nanmin(pi) < -tol:
        warnings.warn(f"optimality gap below -{tol}: optimal value may be inaccurate")
