"""Inexact proximal-gradient iterations with controlled gradient error: tail bounds and Monte Carlo checks."""

__version__ = "0.1.0"

from .errors import ArgumentError, DomainError, NumericError, ProxTailError  # noqa: E402
from .model import (  # noqa: E402
    FiniteSumData,
    Nonsmooth,
    ObjectiveSpec,
    composite_value,
    estimate_lipschitz,
    full_gradient,
    generate_logistic_dataset,
    logistic_objective,
    prox,
    quadratic_objective,
)
from .sampling import ErrorModel, SampleSchedule, sample_size, sampled_gradient  # noqa: E402
from .solver import RateConstants, Trajectory, optimal_value_oracle, rate_constants, run  # noqa: E402
