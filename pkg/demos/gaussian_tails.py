"""Empirical tails of a 1-D quadratic with Gaussian gradient noise.

Starts at the minimiser, so pi_k itself is the deviation. The empirical
probabilities sit far below both closed-form bounds, which only leave 1
well past anything 10^5 runs can observe.
"""

import numpy as np

from proxtail.model import quadratic_objective
from proxtail.montecarlo import ExperimentConfig, empirical_tail, run_experiment, tail_bound_functions
from proxtail.sampling import GAUSSIAN, ErrorModel

spec = quadratic_objective(np.eye(1))
cfg = ExperimentConfig(spec, None, np.zeros(1), ErrorModel(GAUSSIAN, sigma=0.1), 20, 100_000, master_seed=3)
ens = run_experiment(cfg)
main, gauss, _ = tail_bound_functions(cfg, ens, 1)
grid = np.array([1e-3, 5e-3, 1e-2, 2e-2, 5e-2, 0.1, 0.3, 1.0, 3.0])
print(f"{'eps':>8} {'p_hat':>10} {'ci_high':>10} {'main':>10} {'gaussian':>10}")
for e in empirical_tail(ens, grid, [20], bound_main=main, bound_gaussian=gauss):
    print(f"{e.epsilon:8.3g} {e.p_hat:10.3e} {e.ci_high:10.3e} {e.bound_main:10.3e} {e.bound_gaussian:10.3e}")
