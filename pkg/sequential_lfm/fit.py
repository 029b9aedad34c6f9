"""Hyperparameter fitting by derivative-free maximization of the (approximate) marginal likelihood."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from sequential_lfm.config import ExperimentConfig
from sequential_lfm.errors import InitializationError, InvalidInputError, NumericalFailureError
from sequential_lfm.experiment import Experiment
from sequential_lfm.types import FloatArray


@dataclass(frozen=True)
class FitResult:
    """Start and end point of a fit."""

    initial_parameters: dict[str, float]
    parameters: dict[str, float]
    initial_loglik: float
    loglik: float
    evaluations: int
    config: ExperimentConfig
    """The configuration with the fitted parameters filled in."""


def fit_hyperparameters(experiment: Experiment, times: FloatArray, observations: FloatArray) -> FitResult:
    """
    Maximize the log-likelihood over the configured free parameters.

    Every free parameter is positive and optimized on the log scale with Nelder-Mead, bounded by
    ``fit.max_evaluations`` objective evaluations and a relative tolerance of ``fit.rel_tol``. Non-switching
    configurations use the exact Kalman likelihood, switching ones the ADF approximation.

    :raises InitializationError: If the objective is not finite at the starting point
    """
    config = experiment.config
    free = config.fit.free
    initial = {path: config.get_parameter(path) for path in free}

    def loglik_at(log_values: FloatArray) -> float:
        values = dict(zip(free, np.exp(log_values).tolist(), strict=True))
        try:
            candidate = experiment.with_config(config.with_parameters(values))
            return candidate.log_likelihood(times, observations)
        except (NumericalFailureError, InvalidInputError) as e:
            logging.debug("Objective failed at %s: %s", values, e)
            return -math.inf

    x0 = np.log(np.array([initial[path] for path in free], dtype=float))
    initial_loglik = loglik_at(x0)
    if not math.isfinite(initial_loglik):
        error_message = f"Log-likelihood is not finite at the initial parameters {initial}"
        raise InitializationError(error_message)

    if not free:
        logging.info("No free parameters; log-likelihood %.10g", initial_loglik)
        return FitResult(initial, initial, initial_loglik, initial_loglik, 1, config)

    evaluations = 0

    def objective(log_values: FloatArray) -> float:
        nonlocal evaluations
        evaluations += 1
        value = loglik_at(log_values)
        logging.debug("Evaluation %i: log-likelihood %.10g", evaluations, value)
        return -value if math.isfinite(value) else math.inf

    logging.info("Fitting %s starting from log-likelihood %.10g", ", ".join(free), initial_loglik)
    result = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={
            "maxfev": config.fit.max_evaluations,
            "xatol": config.fit.rel_tol,
            "fatol": config.fit.rel_tol * max(abs(initial_loglik), 1.0),
        },
    )

    best = np.asarray(result.x, dtype=float)
    loglik = -float(result.fun)
    if not loglik >= initial_loglik:
        best, loglik = x0, initial_loglik

    parameters = dict(zip(free, np.exp(best).tolist(), strict=True))
    logging.info("Fit finished after %i evaluations: log-likelihood %.10g", evaluations, loglik)
    return FitResult(
        initial_parameters=initial,
        parameters=parameters,
        initial_loglik=initial_loglik,
        loglik=loglik,
        evaluations=evaluations,
        config=config.with_parameters(parameters),
    )
