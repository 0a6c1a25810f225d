"""Command-line front end.

Commands: ``gen-data``, ``solve``, ``montecarlo``, ``bounds``, ``verify``.
Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import __version__, bounds, montecarlo, verify
from .errors import ArgumentError, NumericError
from .model import (
    Nonsmooth,
    generate_logistic_dataset,
    logistic_objective,
    quadratic_objective,
    read_dataset_csv,
    write_dataset_csv,
)
from .sampling import ErrorModel, SampleSchedule, substream
from .solver import (
    RateConstants,
    check_pathwise_bound,
    check_sufficient_decrease,
    optimal_value_oracle,
    rate_constants,
    run,
    solution_distance_slacks,
    write_trajectory_csv,
)

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NonsmoothCfg(_Strict):
    kind: Literal["zero", "l1", "box"] = "zero"
    weight: float = 0.0
    lo: Union[float, list[float], None] = None
    hi: Union[float, list[float], None] = None


class ProblemCfg(_Strict):
    kind: Literal["quadratic", "logistic"]
    M: int = Field(100, ge=1)
    n: int = Field(10, ge=1)
    seed: int = 0
    data_path: str | None = None
    ridge_mu: Union[Literal["auto"], float] = "auto"
    hessian: list[list[float]] | None = None
    diag: list[float] | None = None
    center: list[float] | None = None
    nonsmooth: NonsmoothCfg = NonsmoothCfg()


class NoiseCfg(_Strict):
    kind: Literal["none", "gaussian", "subsample_with_replacement", "subsample_without_replacement"]
    sigma: float | None = None
    variance_decay: float = 1.0


class ScheduleCfg(_Strict):
    lambda_: float = Field(1.0, alias="lambda", gt=0)
    beta: float = Field(0.91, gt=0, lt=1)
    mode: Literal["iid", "without_replacement"] = "without_replacement"


class SolverCfg(_Strict):
    k_max: Union[Literal["auto"], int] = "auto"
    tau: Union[Literal["auto"], float] = "auto"
    L: Union[Literal["auto"], float] = "auto"
    x0: Union[Literal["zero"], list[float]] = "zero"


class MonteCarloCfg(_Strict):
    replicates: int = Field(1000, ge=1)
    master_seed: int = 0
    parallelism: int = Field(1, ge=1)
    epsilon_grid: Union[Literal["auto"], list[float]] = "auto"
    j_range: tuple[int, int] = (-5, 5)
    k_set: list[int] | None = None

    @field_validator("epsilon_grid")
    @classmethod
    def _increasing(cls, v):
        if v != "auto" and (len(v) == 0 or any(b <= a for a, b in zip(v, v[1:])) or v[0] <= 0):
            raise ValueError("epsilon_grid must be positive and strictly increasing")
        return v


class OutputCfg(_Strict):
    dir: str = "out"


class RunConfig(_Strict):
    problem: ProblemCfg
    noise: NoiseCfg
    schedule: ScheduleCfg | None = None
    solver: SolverCfg = SolverCfg()
    montecarlo: MonteCarloCfg = MonteCarloCfg()
    output: OutputCfg = OutputCfg()


class UsageError(Exception):
    pass


def load_config(path):
    if not path:
        raise UsageError("--config is required for this command")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        msgs = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"])
            msgs.append(f"{loc}: {err['msg']}")
        raise UsageError("invalid config: " + "; ".join(msgs)) from exc


def config_echo(cfg):
    """Config as a plain dict, without run-time knobs that must not affect outputs."""
    doc = cfg.model_dump(by_alias=True, mode="json")
    doc["montecarlo"].pop("parallelism", None)
    doc.pop("output", None)
    return doc


def build_problem(cfg):
    """Resolve a RunConfig into ``(spec, data, x0, error_model, schedule, k_max)``."""
    p, s = cfg.problem, cfg.solver
    ns = p.nonsmooth
    L = None if s.L == "auto" else float(s.L)
    tau = None if s.tau == "auto" else float(s.tau)
    if p.kind == "logistic":
        data = read_dataset_csv(p.data_path) if p.data_path else generate_logistic_dataset(p.M, p.n, p.seed)
        n = data.n
    else:
        data = None
        if p.hessian is not None:
            Q = np.asarray(p.hessian, dtype=float)
        elif p.diag is not None:
            Q = np.diag(p.diag)
        else:
            Q = np.eye(p.n)
        n = Q.shape[0]
    if ns.kind == "box":
        if ns.lo is None or ns.hi is None:
            raise UsageError("problem.nonsmooth: box needs lo and hi")
        g = Nonsmooth("box", lo=np.broadcast_to(ns.lo, (n,)), hi=np.broadcast_to(ns.hi, (n,)))
    else:
        g = Nonsmooth(ns.kind, weight=ns.weight)
    if tau is None and not (g.kind == "zero"):
        raise UsageError("solver.tau: 'auto' requires nonsmooth kind 'zero'")
    if p.kind == "logistic":
        if tau is None and p.ridge_mu != "auto" and float(p.ridge_mu) <= 0:
            raise UsageError("solver.tau: 'auto' requires ridge_mu > 0")
        spec = logistic_objective(data, mu=p.ridge_mu, nonsmooth=g, L=L, tau=tau)
    else:
        mu = 0.0 if p.ridge_mu == "auto" else float(p.ridge_mu)
        spec = quadratic_objective(Q, p.center, nonsmooth=g, mu=mu, L=L, tau=tau)

    x0 = np.zeros(n) if s.x0 == "zero" else np.asarray(s.x0, dtype=float)
    if x0.shape != (n,):
        raise UsageError(f"solver.x0: expected {n} entries")
    nz = cfg.noise
    em = ErrorModel(nz.kind, sigma=nz.sigma, variance_decay=nz.variance_decay)
    schedule = None
    if em.subsampled:
        sc = cfg.schedule or ScheduleCfg()
        schedule = SampleSchedule(sc.lambda_, sc.beta, sc.mode, data.M if sc.mode == "without_replacement" else None)
    if s.k_max == "auto":
        if schedule is None or schedule.mode != "without_replacement":
            raise UsageError("solver.k_max: 'auto' needs a without_replacement schedule")
        # ceil(log(M^2/lam)/log(1/beta)) steps: the last several run with m_k = M
        horizon = math.ceil(math.log(schedule.M**2 / schedule.scale) / math.log(1.0 / schedule.decay))
        k_max = max(horizon, schedule.saturation_index() + 1)
    else:
        k_max = int(s.k_max)
    if k_max < 1:
        raise UsageError("solver.k_max must be at least 1")
    return spec, data, x0, em, schedule, k_max


def _out_dir(args, cfg=None):
    d = args.out or (cfg.output.dir if cfg is not None else "out")
    os.makedirs(d, exist_ok=True)
    return d


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=montecarlo._json_default)
        fh.write("\n")


def cmd_gen_data(args):
    out = args.out or "dataset.csv"
    if not out.endswith(".csv"):
        os.makedirs(out, exist_ok=True)
        out = os.path.join(out, "dataset.csv")
    seed = args.seed if args.seed is not None else 0
    data = generate_logistic_dataset(args.M, args.n, seed)
    digest = write_dataset_csv(data, out)
    print(f"{digest}  {out}")
    return EXIT_OK


def cmd_solve(args):
    cfg = load_config(args.config)
    spec, data, x0, em, schedule, k_max = build_problem(cfg)
    seed = args.seed if args.seed is not None else cfg.montecarlo.master_seed
    h_star, x_star = optimal_value_oracle(spec, data)
    t = run(
        spec, data, x0, em, schedule, k_max, h_star=h_star, x_star=x_star,
        stream=substream(seed, 0), track_population=False,
    )
    out = _out_dir(args, cfg)
    path = os.path.join(out, "trajectory.csv")
    write_trajectory_csv(path, t)
    slack = check_pathwise_bound(t)
    tol = verify.TOL * max(1.0, abs(t.pi[0]))
    dec = check_sufficient_decrease(t)
    dist = {k: int(np.sum(v < -verify.TOL)) for k, v in solution_distance_slacks(t, x_star).items()}
    c = t.constants
    summary = {
        "library_version": __version__,
        "seed": seed,
        "k_max": k_max,
        "rho": c.contraction,
        "vartheta": c.curvature,
        "L": c.L,
        "tau": c.tau,
        "mu": spec.mu,
        "h_star": h_star,
        "pi_0": float(t.pi[0]),
        "final_pi": float(t.pi[-1]),
        "final_m": int(t.m[-1]),
        "max_pathwise_violation": float(max(0.0, -slack.min())),
        "violations": int(np.sum(slack < -tol)),
        "sufficient_decrease_violations": int(np.sum(~dec)),
        "distance_bound_violations": dist,
        "config": config_echo(cfg),
    }
    _write_json(os.path.join(out, "summary.json"), summary)
    print(json.dumps({k: summary[k] for k in ("rho", "vartheta", "final_pi", "max_pathwise_violation", "violations")}))
    bad = summary["violations"] or summary["sufficient_decrease_violations"]
    return EXIT_VERIFY if bad else EXIT_OK


def _default_k_set(k_max):
    return sorted({k for k in (1, max(1, k_max // 4), max(1, k_max // 2), k_max)})


def _expectation_rows(cfg, ens, spec, schedule):
    """Calibrated expectation rows and the calibration record."""
    em = cfg.error_model
    c = ens.constants
    if em.kind == "none":
        return montecarlo.expectation_check(ens, 0.0, 0.5), {"lambda": 0.0, "beta": 0.5}
    if em.kind == "gaussian":
        v = spec.n * em.sigma**2
        if em.variance_decay < 1.0:
            lam, beta = v, em.variance_decay
            return montecarlo.expectation_check(ens, lam, beta), {"lambda": lam, "beta": beta}
        # constant variance: E||e_i||^2 = n sigma^2 <= lam_k rho^i for i < k with lam_k = n sigma^2 / rho^(k-1)
        rows = []
        for r in montecarlo.expectation_check(ens, v, c.contraction):
            scale = 1.0 / c.contraction ** (r.k - 1)
            rows.append(montecarlo.ExpectationRow(r.k, r.mean_dev, r.se, r.bound_k_form * scale, math.nan))
        return rows, {"lambda": "n sigma^2 / rho^(k-1)", "beta": c.contraction}
    lam = montecarlo.subsampling_expectation_lambda(ens, schedule)
    return montecarlo.expectation_check(ens, lam, schedule.decay), {"lambda": lam, "beta": schedule.decay}


def cmd_montecarlo(args):
    cfg = load_config(args.config)
    spec, data, x0, em, schedule, k_max = build_problem(cfg)
    mc = cfg.montecarlo
    seed = args.seed if args.seed is not None else mc.master_seed
    par = args.parallelism if args.parallelism is not None else mc.parallelism
    ecfg = montecarlo.ExperimentConfig(
        spec, data, x0, em, k_max, mc.replicates, master_seed=seed, schedule=schedule,
        j_range=tuple(mc.j_range), parallelism=par, track_population=em.subsampled,
    )
    ens = montecarlo.run_experiment(ecfg)
    if len(ens) == 0:
        raise NumericError("every replicate failed", iteration=min(ens.failed.values()))
    k_set = [k for k in (mc.k_set or _default_k_set(k_max)) if 1 <= k <= k_max]
    eps = montecarlo.auto_epsilon_grid(ens, k_set) if mc.epsilon_grid == "auto" else np.asarray(mc.epsilon_grid)
    main, gauss, tail_cal = montecarlo.tail_bound_functions(ecfg, ens, spec.n)
    out = _out_dir(args, cfg)
    files = [os.path.join(out, f) for f in ("quantiles.csv", "tails.csv", "tails_from_mean.csv", "expectation.csv")]
    montecarlo.write_quantiles_csv(files[0], montecarlo.quantile_series(ens, tuple(mc.j_range)))
    tails = montecarlo.empirical_tail(ens, eps, k_set, bound_main=main, bound_gaussian=gauss)
    montecarlo.write_tails_csv(files[1], tails)
    montecarlo.write_tails_csv(files[2], montecarlo.tails_from_mean(ens, eps, k_set))
    exp_rows, exp_cal = _expectation_rows(ecfg, ens, spec, schedule)
    montecarlo.write_expectation_csv(files[3], exp_rows)
    c = ens.constants
    params = {
        "rho": c.contraction,
        "vartheta": c.curvature,
        "L": c.L,
        "tau": c.tau,
        "mu": spec.mu,
        "h_star": ens.h_star,
        "k_max": k_max,
        "k_set": k_set,
        "tail_calibration": tail_cal,
        "expectation_calibration": exp_cal,
    }
    extra = {
        "replicates_used": len(ens),
        "failed_replicates": {str(k): v for k, v in sorted(ens.failed.items())},
        "pathwise_report": montecarlo.pathwise_report(ens),
    }
    montecarlo.write_manifest(os.path.join(out, "manifest.json"), config_echo(cfg), seed, params, files, extra)
    print(f"wrote {len(files)} tables and manifest.json to {out} ({len(ens)} replicates)")
    return EXIT_OK


def bound_fan_rows(M=300, beta=0.9, rho=0.9, L=1.0, tau=None, lam=1.0, n=1, k_range=(1, 100), probabilities=None):
    """Rows ``(k, epsilon, bound_name, value)`` for the bound-curve figure.

    Tail curves: ``epsilon = invert_main_bound(p)`` and ``value`` the bound
    recomputed there (equal to ``p``). The expectation and deterministic
    (norm-bounded error) curves put the bound level in both columns.
    """
    if tau is not None:
        c = rate_constants(L, tau)
    else:
        if not 0 < rho < 1:
            raise ArgumentError("rho must lie in (0, 1)")
        c = RateConstants(rho, L / rho, math.nan, L)
    if probabilities is None:
        probabilities = [10.0 ** (-10 * i) for i in range(1, 11)]
    rows = []
    for k in range(k_range[0], k_range[1] + 1):
        for p in probabilities:
            eps = bounds.invert_main_bound(p, k, lam, beta, n, c)
            rows.append((k, eps, f"main_tail_p={p:.0e}", bounds.main_tail_bound(eps, k, lam, beta, n, c)))
        if beta != c.contraction:
            e = bounds.expectation_rate_bound(lam, beta, c, k, sharp=True)
            rows.append((k, e, "expectation_sharp", e))
        e = bounds.expectation_rate_bound(lam, beta, c, k)
        rows.append((k, e, "expectation_k_form", e))
        d = bounds.expectation_rate_bound(M * lam, beta, c, k)
        rows.append((k, d, "deterministic", d))
    return rows


def cmd_bounds(args):
    if args.tau is None and not 0 < args.rho < 1:
        raise UsageError(f"--rho must lie in (0, 1), got {args.rho}")
    if args.tau is not None and args.tau < 1:
        raise UsageError(f"--tau must be >= 1, got {args.tau}")
    if not 0 < args.beta < 1:
        raise UsageError(f"--beta must lie in (0, 1), got {args.beta}")
    if args.k_min < 1 or args.k_max < args.k_min:
        raise UsageError("need 1 <= --k-min <= --k-max")
    probs = None
    if args.probabilities:
        probs = [float(v) for v in args.probabilities.split(",")]
        if any(not 0 < p <= 1 for p in probs):
            raise UsageError("--probabilities must lie in (0, 1]")
    rows = bound_fan_rows(
        M=args.M, beta=args.beta, rho=args.rho, L=args.L, tau=args.tau, lam=args.lam, n=args.n,
        k_range=(args.k_min, args.k_max), probabilities=probs,
    )
    out = _out_dir(args)
    path = os.path.join(out, "bounds.csv")
    bounds.write_bound_table(path, rows)
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


def cmd_verify(args):
    results = verify.run_suite(args.suite, args.grid, seed=args.seed or 0)
    print(verify.report(results))
    return EXIT_OK if all(r.ok for r in results) else EXIT_VERIFY


def _positive_int(v):
    i = int(v)
    if i < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {v}")
    return i


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (gen-data: file or directory)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed override")
    common.add_argument("--parallelism", type=_positive_int, default=argparse.SUPPRESS)

    ap = argparse.ArgumentParser(prog="proxtail", description=__doc__.splitlines()[0], parents=[common])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic logistic dataset")
    g.add_argument("--M", type=_positive_int, default=100)
    g.add_argument("--n", type=_positive_int, default=10)
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("solve", parents=[common], help="run one trajectory with monitors")
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("montecarlo", parents=[common], help="run the Monte Carlo experiment")
    m.set_defaults(func=cmd_montecarlo)

    b = sub.add_parser("bounds", parents=[common], help="write bound-curve data")
    b.add_argument("--M", type=_positive_int, default=300)
    b.add_argument("--beta", type=float, default=0.9)
    b.add_argument("--rho", type=float, default=0.9)
    b.add_argument("--L", type=float, default=1.0)
    b.add_argument("--tau", type=float, default=None, help="derive rho from (L, tau) instead of --rho")
    b.add_argument("--lambda", dest="lam", type=float, default=1.0)
    b.add_argument("--n", type=_positive_int, default=1)
    b.add_argument("--k-min", type=int, default=1)
    b.add_argument("--k-max", type=int, default=100)
    b.add_argument("--probabilities", default=None, help="comma-separated; default 1e-10,...,1e-100")
    b.set_defaults(func=cmd_bounds)

    v = sub.add_parser("verify", parents=[common], help="run the inequality suites")
    v.add_argument("--suite", choices=verify.SUITES + ("all",), default="all")
    v.add_argument("--grid", choices=verify.GRIDS, default="coarse")
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    for name in ("config", "out", "seed", "parallelism"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        return args.func(args)
    except (UsageError, ArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        where = f" (iteration {exc.iteration})" if exc.iteration is not None else ""
        print(f"numeric failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
