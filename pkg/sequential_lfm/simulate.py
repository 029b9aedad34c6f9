"""
Exact samplers for latent force models and their switching variant.

State and observation noise come from ``Generator(Philox(seed))``; the switching model sequence comes from the
jumped stream ``Philox(seed).jumped()``, so a switching simulation that never leaves its first model reproduces the
plain simulation draw for draw.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from sequential_lfm.errors import InvalidInputError
from sequential_lfm.kalman import TimeGrid
from sequential_lfm.lfm import ContinuousModel, MeasurementModel
from sequential_lfm.matrixnum import DiscreteTransition, Gaussian, sampling_factor
from sequential_lfm.slds import ModelBank
from sequential_lfm.types import FloatArray


@dataclass(frozen=True, eq=False)
class SimulationOutput:
    """A sampled latent trajectory and its noisy observations."""

    times: FloatArray
    states: FloatArray
    """``T x n`` latent states."""

    observations: FloatArray
    """``T x m`` observations."""

    slot_names: tuple[str, ...]
    models: FloatArray | None = None
    """True model index per step (switching simulations only)."""

    switch_times: list[float] = field(default_factory=list)
    """Times at which the reset model was active."""

    def slot(self, name: str) -> FloatArray:
        """Trajectory of one named state slot."""
        try:
            return self.states[:, self.slot_names.index(name)]
        except ValueError:
            error_message = f"Unknown state slot '{name}'"
            raise InvalidInputError(error_message) from None


def noise_generator(seed: int) -> np.random.Generator:
    """Counter-based generator for state and observation noise."""
    return np.random.Generator(np.random.Philox(seed))


def switch_generator(seed: int) -> np.random.Generator:
    """Independent counter-based stream for the model sequence."""
    return np.random.Generator(np.random.Philox(seed).jumped())


def _draw(rng: np.random.Generator, state: Gaussian) -> FloatArray:
    return state.mean + sampling_factor(state.cov) @ rng.standard_normal(state.dim)


def _step(rng: np.random.Generator, x: FloatArray, trans: DiscreteTransition) -> FloatArray:
    return trans.A @ x + sampling_factor(trans.Q) @ rng.standard_normal(x.shape[0])


def _observe(rng: np.random.Generator, x: FloatArray, meas: MeasurementModel) -> FloatArray:
    return meas.H @ x + sampling_factor(meas.R) @ rng.standard_normal(meas.n_observations)


def simulate_lfm(model: ContinuousModel, meas: MeasurementModel, grid: TimeGrid, seed: int) -> SimulationOutput:
    """
    Sample ``x_k = A x_{k-1} + chol(Q) xi``, ``y_k = H x_k + chol(R) eta`` with ``x`` at ``grid.t0`` from the prior.

    :raises NumericalFailureError: If a non-zero noise covariance cannot be factored
    """
    rng = noise_generator(seed)
    x = _draw(rng, model.prior)
    previous = grid.prior_time

    states = np.zeros((grid.size, model.dim))
    observations = np.zeros((grid.size, meas.n_observations))
    for k, t in enumerate(grid.times):
        dt = float(t - previous)
        if dt > 0.0:
            x = _step(rng, x, model.transition(dt))
        states[k] = x
        observations[k] = _observe(rng, x, meas)
        previous = float(t)

    logging.debug("Simulated %i steps with seed %i", grid.size, seed)
    return SimulationOutput(grid.times, states, observations, model.layout.names)


def simulate_slds(
    bank: ModelBank,
    Pi: FloatArray,
    grid: TimeGrid,
    meas: MeasurementModel,
    seed: int,
) -> SimulationOutput:
    """
    Sample a model sequence from the switch prior, then the state and observations of the active models.

    The first model is drawn from ``bank.initial_probs`` and its prior gives the state at ``grid.t0``.
    """
    if Pi.shape != (bank.n_models, bank.n_models):
        error_message = f"Switch matrix shape {Pi.shape} does not match {bank.n_models} models"
        raise InvalidInputError(error_message)

    rng = noise_generator(seed)
    switch_rng = switch_generator(seed)

    models = np.zeros(grid.size, dtype=int)
    s = int(switch_rng.choice(bank.n_models, p=bank.initial_probs))
    x = _draw(rng, bank.prior(s))
    previous = grid.prior_time

    states = np.zeros((grid.size, bank.dim))
    observations = np.zeros((grid.size, meas.n_observations))
    for k, t in enumerate(grid.times):
        if k > 0:
            s = int(switch_rng.choice(bank.n_models, p=Pi[s]))
        dt = float(t - previous)
        if dt > 0.0:
            x = _step(rng, x, bank.transition(s, dt))
        models[k] = s
        states[k] = x
        observations[k] = _observe(rng, x, meas)
        previous = float(t)

    switch_times = [float(t) for t, s_k in zip(grid.times, models, strict=True) if s_k == bank.reset_index]
    logging.info("Simulated %i steps with %i switch points (seed %i)", grid.size, len(switch_times), seed)
    return SimulationOutput(
        grid.times,
        states,
        observations,
        bank.models[0].layout.names,
        models=models,
        switch_times=switch_times,
    )
