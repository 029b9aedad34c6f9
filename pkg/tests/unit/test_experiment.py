import numpy as np  # noqa: INP001
import pytest

from sequential_lfm.config import ExperimentConfig
from sequential_lfm.errors import ConfigError, DataError
from sequential_lfm.experiment import Experiment


def _config(**overrides: object) -> ExperimentConfig:
    return ExperimentConfig.model_validate(
        {
            "output": {"masses": [1.0], "dampings": [1.5], "springs": [2.0], "sensitivities": [[1.0]]},
            "force": {"lengthscales": [3.0]},
            "grid": {"start": 0.0, "stop": 10.0, "num": 41},
            **overrides,
        }
    )


def test_simulate_and_smooth() -> None:
    experiment = Experiment(_config())
    sim, labels = experiment.simulate()

    run = experiment.smooth(sim.times, sim.observations)

    assert labels is None
    assert run.smoothed.means.shape == (41, 4)
    assert run.loglik == pytest.approx(experiment.log_likelihood(sim.times, sim.observations))


def test_smooth_with_known_switches_expands_grid() -> None:
    experiment = Experiment(_config(known_switches=[4.1]))
    sim, _ = experiment.simulate()

    run = experiment.smooth(sim.times, sim.observations)

    assert run.grid.size == 42
    assert 4.1 in run.grid.times
    assert np.isnan(run.grid.observations[np.searchsorted(run.grid.times, 4.1), 0])
    assert run.smoothed.means.shape == (42, 4)


def test_observed_force_slot() -> None:
    experiment = Experiment(_config(observation={"observed": ["x1", "u1"], "noise_variance": 0.1}))
    model = experiment.build_model()

    meas = experiment.build_measurement(model)
    assert meas.n_observations == 2


def test_unknown_observed_slot_is_a_config_error() -> None:
    experiment = Experiment(_config(observation={"observed": ["x7"]}))
    with pytest.raises(ConfigError, match="observation.observed"):
        experiment.build_measurement(experiment.build_model())


def test_data_column_mismatch() -> None:
    experiment = Experiment(_config())
    with pytest.raises(DataError, match="observation columns"):
        experiment.smooth(np.array([0.0, 1.0]), np.zeros((2, 3)))


def test_switching_simulation_returns_labels() -> None:
    experiment = Experiment(_config(switching={"lengthscales": [1.0, 10.0], "stay": 0.9}))
    sim, labels = experiment.simulate(seed=4)

    assert labels == ["l=(1)", "l=(10)", "reset"]
    assert sim.models is not None

    run = experiment.segment(sim.times, sim.observations)
    np.testing.assert_allclose(run.smoothed.model_probs.sum(axis=1), 1.0)
    means, covs = run.state_moments()
    assert means.shape == (41, 4)
    assert covs.shape == (41, 4, 4)


def test_with_config_shares_plugins() -> None:
    experiment = Experiment(_config())
    clone = experiment.with_config(_config(seed=3))

    assert clone.force_priors is experiment.force_priors
    assert clone.config.seed == 3
