"""Shared fixtures: small deterministic models and randomized instances for oracle cross-checks."""

from collections.abc import Callable

import numpy as np
import pytest

from sequential_lfm.kalman import TimeGrid
from sequential_lfm.lfm import ContinuousModel, MeasurementModel, OutputModelSpec, build_lfm, observe_outputs
from sequential_lfm.priors import MaternSpec, matern_ssm
from sequential_lfm.slds import ModelBank, SwitchTransitionSpec, build_model_bank, transition_matrix
from sequential_lfm.types import FloatArray

Instance = tuple[ContinuousModel, MeasurementModel, TimeGrid]


@pytest.fixture
def output_spec() -> OutputModelSpec:
    """One damped oscillator driven by one force."""
    return OutputModelSpec(masses=[1.0], dampings=[1.5], springs=[2.0], sensitivities=[[1.0]])


@pytest.fixture
def lfm_model(output_spec: OutputModelSpec) -> ContinuousModel:
    """The oscillator driven by a Matérn-3/2 force with length-scale 2."""
    return build_lfm(output_spec, [matern_ssm(MaternSpec(nu=1.5, lengthscale=2.0))])


@pytest.fixture
def random_instance() -> Callable[[int], Instance]:
    """Factory of randomized output models, forces, irregular grids and partly missing data."""

    def make(seed: int) -> Instance:
        rng = np.random.default_rng(seed)
        n_outputs = int(rng.integers(1, 4))
        n_forces = int(rng.integers(1, 3))
        nus = rng.choice([0.5, 1.5, 2.5], size=n_forces)

        spec = OutputModelSpec(
            masses=rng.uniform(0.5, 2.0, n_outputs).tolist(),
            dampings=rng.uniform(0.5, 2.0, n_outputs).tolist(),
            springs=rng.uniform(0.5, 2.0, n_outputs).tolist(),
            sensitivities=rng.uniform(-1.0, 1.0, (n_outputs, n_forces)).tolist(),
        )
        priors = [
            matern_ssm(MaternSpec(nu=float(nu), lengthscale=float(rng.uniform(0.5, 3.0)))) for nu in nus
        ]
        model = build_lfm(spec, priors)
        meas = observe_outputs(model, float(rng.uniform(0.05, 0.5)))

        n_steps = min(40, 480 // model.dim)
        times = np.cumsum(rng.uniform(0.05, 0.5, n_steps))
        observations = rng.normal(0.0, 1.0, (n_steps, meas.n_observations))
        observations[rng.uniform(size=observations.shape) < 0.2] = np.nan
        return model, meas, TimeGrid(times, observations, t0=float(times[0]) - 0.3)

    return make


@pytest.fixture
def small_bank(output_spec: OutputModelSpec) -> ModelBank:
    """Two candidate length-scales for one force: two regular models and the reset model."""
    return build_model_bank(output_spec, [0.5, 5.0])


@pytest.fixture
def small_switch_matrix(small_bank: ModelBank) -> FloatArray:
    """Switch prior of ``small_bank`` with ``a = 0.9``."""
    return transition_matrix(SwitchTransitionSpec(stay=0.9), small_bank.n_models)
