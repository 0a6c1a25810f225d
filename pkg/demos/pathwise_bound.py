"""One noisy run on the ridge-logistic problem, next to its pathwise gap bound.

Prints a short table: gap, the bound rho^k pi_0 + D_k/vartheta, and the
sample size used at that step.
"""

import numpy as np

from proxtail.model import generate_logistic_dataset, logistic_objective
from proxtail.sampling import WITHOUT_REPLACEMENT, ErrorModel, SampleSchedule
from proxtail.solver import check_pathwise_bound, pathwise_bound, run

data = generate_logistic_dataset(100, 10, seed=7)
spec = logistic_objective(data)
schedule = SampleSchedule(1.0, 0.91, "without_replacement", data.M)
traj = run(spec, data, np.zeros(spec.n), ErrorModel(WITHOUT_REPLACEMENT, rng_seed=1), schedule, k_max=120)

c = traj.constants
print(f"L={c.L:.4g} tau={c.tau:.4g} rho={c.contraction:.8f} vartheta={c.curvature:.4g}")
bound = pathwise_bound(traj.pi[0], traj.err_sq, c)
print(f"{'k':>4} {'m_k':>4} {'pi_k':>12} {'bound':>12}")
for k in range(0, traj.k_max + 1, 10):
    m = traj.m[k] if k < traj.k_max else traj.m[-1]
    print(f"{k:4d} {m:4d} {traj.pi[k]:12.4e} {bound[k]:12.4e}")
print("min slack:", check_pathwise_bound(traj).min())
