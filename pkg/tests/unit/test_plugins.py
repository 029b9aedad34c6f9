from pathlib import Path  # noqa: INP001

import numpy as np
import pytest
from pytest_mock import MockerFixture

from sequential_lfm.config import ExperimentConfig, ForcePriorConfig
from sequential_lfm.errors import ConfigError
from sequential_lfm.experiment import Experiment
from sequential_lfm.plugin import ForcePriorFactory, Plugin
from sequential_lfm.plugins.matern import MaternPlugin
from sequential_lfm.plugins.se_taylor import SquaredExponentialPlugin
from sequential_lfm.priors import MaternSpec, PriorSSM, matern_ssm


def _config(family: str = "matern", **force: object) -> ExperimentConfig:
    return ExperimentConfig.model_validate(
        {
            "output": {"masses": [1.0], "dampings": [1.0], "springs": [1.0], "sensitivities": [[1.0]]},
            "force": {"family": family, "lengthscales": [1.5], **force},
        }
    )


def test_builtin_plugins_are_registered() -> None:
    experiment = Experiment(_config())

    assert set(experiment.plugin_registry) == {"MaternPlugin", "SquaredExponentialPlugin"}
    assert set(experiment.force_priors) == {"matern", "se_taylor"}


def test_matern_plugin_builds_configured_prior() -> None:
    factory = MaternPlugin().get_force_priors()["matern"]
    prior = factory(ForcePriorConfig(nu=2.5, variance=2.0), 0.7)

    expected = matern_ssm(MaternSpec(nu=2.5, lengthscale=0.7, variance=2.0))
    np.testing.assert_array_equal(prior.F, expected.F)
    assert prior.q == pytest.approx(expected.q)


def test_se_plugin_uses_configured_order() -> None:
    factory = SquaredExponentialPlugin().get_force_priors()["se_taylor"]
    prior = factory(ForcePriorConfig(family="se_taylor", order=4), 1.0)

    assert prior.dim == 4


def test_experiment_uses_se_family() -> None:
    model = Experiment(_config("se_taylor", order=5)).build_model()

    assert model.layout.names == ("x1", "dx1", "u1", "u1_d1", "u1_d2", "u1_d3", "u1_d4")


def test_unknown_family_is_a_config_error() -> None:
    experiment = Experiment(_config("rational_quadratic"))

    with pytest.raises(ConfigError, match="force.family"):
        experiment.build_model()


def test_plugin_name_defaults_to_class_name() -> None:
    class CustomPlugin(Plugin):
        pass

    assert CustomPlugin().name == "CustomPlugin"
    assert CustomPlugin().get_force_priors() == {}


def test_plugin_family_overwrite_warns(mocker: MockerFixture) -> None:
    class ReplacementPlugin(Plugin):
        def get_force_priors(self) -> dict[str, ForcePriorFactory]:
            return {"matern": lambda _force, scale: matern_ssm(MaternSpec(nu=0.5, lengthscale=scale))}

    experiment = Experiment(_config())

    mock_log = mocker.patch("sequential_lfm.experiment.logging.warning")
    experiment.register_plugins([ReplacementPlugin()])

    mock_log.assert_called_once_with("Force prior family %s already registered--overwriting", "matern")
    assert experiment.build_model().layout.names == ("x1", "dx1", "u1")


def test_plugin_load_from_directory(tmp_path: Path) -> None:
    plugin_dir = tmp_path / "plugins"
    plugin_dir.mkdir()

    plugin_file = plugin_dir / "ou_force_plugin.py"
    plugin_file.write_text("""
from sequential_lfm.plugin import Plugin
from sequential_lfm.priors import MaternSpec, matern_ssm

class OrnsteinUhlenbeckPlugin(Plugin):
    def get_force_priors(self):
        return {"ou": lambda force, scale: matern_ssm(MaternSpec(nu=0.5, lengthscale=scale))}
    """)

    experiment = Experiment(_config("ou"), plugin_directory=plugin_dir)

    assert "OrnsteinUhlenbeckPlugin" in experiment.plugin_registry
    assert experiment.build_model().dim == 3


def test_plugin_load_failure_is_raised(tmp_path: Path) -> None:
    plugin_dir = tmp_path / "broken"
    plugin_dir.mkdir()
    (plugin_dir / "broken_force_plugin.py").write_text("raise RuntimeError('broken plugin')\n")

    with pytest.raises(RuntimeError, match="broken plugin"):
        Experiment(_config(), plugin_directory=plugin_dir)


def test_factory_signature() -> None:
    factory: ForcePriorFactory = MaternPlugin().get_force_priors()["matern"]
    prior: PriorSSM = factory(ForcePriorConfig(), 2.0)
    assert prior.dim == 2
