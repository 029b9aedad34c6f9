"""
Configuration-driven experiments.

:class:`Experiment` turns an :class:`~sequential_lfm.config.ExperimentConfig` into models through the registered
force-prior plugins and runs the simulate, smooth and segment workflows on top of them.
"""

import importlib
import logging
import logging.config
import pkgutil
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from sequential_lfm.config import ExperimentConfig, SwitchingConfig
from sequential_lfm.errors import ConfigError, DataError, InvalidInputError
from sequential_lfm.kalman import (
    FilterResult,
    SmootherResult,
    SwitchSchedule,
    TimeGrid,
    kalman_filter,
    known_switch_filter,
    rts_smoother,
)
from sequential_lfm.lfm import ContinuousModel, MeasurementModel, build_lfm
from sequential_lfm.plugin import ForcePriorFactory, Plugin
from sequential_lfm.plugins.matern import MaternPlugin
from sequential_lfm.plugins.se_taylor import SquaredExponentialPlugin
from sequential_lfm.priors import PriorSSM
from sequential_lfm.simulate import SimulationOutput, simulate_lfm, simulate_slds
from sequential_lfm.slds import (
    ADFResult,
    ECResult,
    ModelBank,
    adf,
    build_model_bank,
    ec,
    extract_switch_points,
    transition_matrix,
)
from sequential_lfm.types import FloatArray


@dataclass(frozen=True, eq=False)
class SmoothingRun:
    """Kalman filter and RTS smoother output of one data set."""

    model: ContinuousModel
    grid: TimeGrid
    filtered: FilterResult
    smoothed: SmootherResult

    @property
    def loglik(self) -> float:
        """Total log marginal likelihood."""
        return self.filtered.loglik


@dataclass(frozen=True, eq=False)
class SegmentationRun:
    """Switching inference output of one data set."""

    bank: ModelBank
    grid: TimeGrid
    filtered: ADFResult
    smoothed: ECResult
    switch_times: list[float]

    @property
    def loglik(self) -> float:
        """Approximate log marginal likelihood from the forward pass."""
        return self.filtered.loglik

    def state_moments(self) -> tuple[FloatArray, FloatArray]:
        """Moment-matched smoothed state means and covariances per step."""
        moments = [mixture.moments() for mixture in self.smoothed.mixtures]
        return np.stack([g.mean for g in moments]), np.stack([g.cov for g in moments])


class Experiment:
    """Builds models from a configuration and runs inference workflows on them."""

    def __init__(
        self,
        config: ExperimentConfig,
        plugin_directory: Path | None = None,
        logger_config: dict[str, Any] | None = None,
    ) -> None:
        """
        Construct the Experiment class.

        :param config: Validated experiment configuration
        :param plugin_directory: Optional directory with extra force-prior plugins
        :param logger_config: Optional logger configuration dictionary
        """
        self.config = config

        # Configure the logger
        if logger_config:
            logging.config.dictConfig(logger_config)
        else:
            logging.basicConfig(
                level=logging.INFO,
                format="%(asctime)s - %(levelname)s - %(message)s",
            )

        # Load default plugins regardless
        matern_plugin = MaternPlugin()
        se_plugin = SquaredExponentialPlugin()

        self.plugin_registry: dict[str, Plugin] = {
            matern_plugin.name: matern_plugin,
            se_plugin.name: se_plugin,
        }
        self.force_priors: dict[str, ForcePriorFactory] = {}

        logging.debug("Loading plugins")
        if plugin_directory:
            self.load_plugins(plugin_directory)

        logging.debug("Loaded the following plugins: %s", list(self.plugin_registry.keys()))
        self.register_plugins(list(self.plugin_registry.values()))

    def load_plugins(self, plugin_dir: Path) -> None:
        """
        Load plugins from the specified directory.

        :param plugin_dir: The directory to load plugins from
        """
        plugins_to_register: list[Plugin] = []
        name = ""

        try:
            sys.path.insert(0, str(plugin_dir))
            for _finder, name, _ispkg in pkgutil.iter_modules([str(plugin_dir)]):
                module = importlib.import_module(name)
                for attr in dir(module):
                    cls = getattr(module, attr)
                    if isinstance(cls, type) and issubclass(cls, Plugin) and cls is not Plugin:
                        plugins_to_register.append(cls())
        except Exception:
            logging.exception("Unexpected error while loading plugin %s", name)
            raise
        finally:
            sys.path.pop(0)
            for plugin in plugins_to_register:
                self.plugin_registry[plugin.name] = plugin

    def register_plugins(self, plugins: list[Plugin]) -> None:
        """Register the force-prior families of the given plugins; later families overwrite earlier ones."""
        for plugin in plugins:
            self.plugin_registry[plugin.name] = plugin
            for family, factory in plugin.get_force_priors().items():
                if family in self.force_priors:
                    logging.warning("Force prior family %s already registered--overwriting", family)
                self.force_priors[family] = factory

    def with_config(self, config: ExperimentConfig) -> "Experiment":
        """An experiment sharing this one's plugins but using another configuration."""
        clone = object.__new__(Experiment)
        clone.config = config
        clone.plugin_registry = self.plugin_registry
        clone.force_priors = self.force_priors
        return clone

    def force_prior(self, lengthscale: float) -> PriorSSM:
        """
        State-space prior of one force with the configured family.

        :raises ConfigError: If the family is not registered
        """
        family = self.config.force.family
        if family not in self.force_priors:
            error_message = f"force.family: unknown family '{family}'; registered: {', '.join(self.force_priors)}"
            raise ConfigError(error_message)
        return self.force_priors[family](self.config.force, lengthscale)

    def build_model(self) -> ContinuousModel:
        """
        Augmented model with the configured force length-scales.

        :raises ConfigError: If no force length-scales are configured
        """
        if self.config.force.lengthscales is None:
            error_message = "force.lengthscales: required for a non-switching model"
            raise ConfigError(error_message)
        priors = [self.force_prior(scale) for scale in self.config.force.lengthscales]
        return build_lfm(self.config.output, priors, self.config.initial_output_variance)

    def build_measurement(self, model: ContinuousModel) -> MeasurementModel:
        """
        Observation model of the configured slots.

        :raises ConfigError: If a slot name is unknown
        """
        names = self.config.observation.observed or model.layout.output_slots()
        try:
            return MeasurementModel.from_slots(model.layout, names, self.config.observation.noise_variance)
        except InvalidInputError as e:
            error_message = f"observation.observed: {e}"
            raise ConfigError(error_message) from e

    def build_bank(self) -> ModelBank:
        """
        Switching model bank of the configured candidate length-scales.

        :raises ConfigError: If the configuration has no switching section
        """
        switching = self._require_switching()
        return build_model_bank(
            self.config.output,
            switching.lengthscales,
            prior_factory=self.force_prior,
            px0_variance=self.config.initial_output_variance,
            reset_prior_scale=switching.reset_prior_scale,
        )

    def switch_matrix(self, bank: ModelBank) -> FloatArray:
        """Switch prior of the configured switching section."""
        return transition_matrix(self._require_switching().transition_spec(), bank.n_models)

    def data_grid(self, times: FloatArray, observations: FloatArray, meas: MeasurementModel) -> TimeGrid:
        """
        Grid of observed data.

        :raises DataError: If the column count does not match the observed slots
        """
        if observations.shape[1] != meas.n_observations:
            error_message = (
                f"Data has {observations.shape[1]} observation columns, "
                f"the configuration observes {meas.n_observations}"
            )
            raise DataError(error_message)
        return TimeGrid(times, observations)

    def simulate(self, seed: int | None = None) -> tuple[SimulationOutput, list[str] | None]:
        """
        Simulate the configured model on the configured grid.

        :returns: The simulation and, for switching configurations, the model labels
        """
        seed = self.config.seed if seed is None else seed
        times = self.config.grid.times()

        if self.config.switching is None:
            model = self.build_model()
            meas = self.build_measurement(model)
            return simulate_lfm(model, meas, TimeGrid.unobserved(times, meas.n_observations), seed), None

        bank = self.build_bank()
        meas = self.build_measurement(bank.models[0])
        grid = TimeGrid.unobserved(times, meas.n_observations)
        return simulate_slds(bank, self.switch_matrix(bank), grid, meas, seed), bank.labels

    def smooth(self, times: FloatArray, observations: FloatArray) -> SmoothingRun:
        """Kalman filter and RTS smoother, with resets at the configured known switch times if any."""
        model = self.build_model()
        meas = self.build_measurement(model)
        grid = self.data_grid(times, observations, meas)

        if self.config.known_switches:
            schedule = SwitchSchedule(np.asarray(self.config.known_switches))
            filtered, smoothed = known_switch_filter(model, meas, grid, schedule)
            grid = TimeGrid(filtered.times, _expand(grid, filtered.times), grid.prior_time)
        else:
            filtered = kalman_filter(model, meas, grid)
            smoothed = rts_smoother(model, filtered, grid)

        logging.info("Log marginal likelihood: %.10g", filtered.loglik)
        return SmoothingRun(model, grid, filtered, smoothed)

    def segment(self, times: FloatArray, observations: FloatArray, threshold: float | None = None) -> SegmentationRun:
        """Assumed density filtering, expectation correction and switch-point extraction."""
        bank = self.build_bank()
        meas = self.build_measurement(bank.models[0])
        grid = self.data_grid(times, observations, meas)
        Pi = self.switch_matrix(bank)

        filtered = adf(bank, Pi, meas, grid, self.config.inference.adf_components)
        smoothed = ec(bank, Pi, meas, grid, filtered, self.config.inference.ec_components)
        threshold = self.config.threshold if threshold is None else threshold
        switch_times = extract_switch_points(grid.times, smoothed.reset_probs, threshold)

        logging.info(
            "Detected %i switch points; approximate log marginal likelihood %.10g",
            len(switch_times),
            filtered.loglik,
        )
        return SegmentationRun(bank, grid, filtered, smoothed, switch_times)

    def log_likelihood(self, times: FloatArray, observations: FloatArray) -> float:
        """Exact Kalman log-likelihood, or the ADF approximation for switching configurations."""
        if self.config.switching is None:
            model = self.build_model()
            meas = self.build_measurement(model)
            return kalman_filter(model, meas, self.data_grid(times, observations, meas)).loglik

        bank = self.build_bank()
        meas = self.build_measurement(bank.models[0])
        grid = self.data_grid(times, observations, meas)
        return adf(bank, self.switch_matrix(bank), meas, grid, self.config.inference.adf_components).loglik

    def _require_switching(self) -> SwitchingConfig:
        if self.config.switching is None:
            error_message = "switching: section required for switching models"
            raise ConfigError(error_message)
        return self.config.switching


def _expand(grid: TimeGrid, times: FloatArray) -> FloatArray:
    observations = np.full((times.shape[0], grid.n_observations), np.nan)
    observations[np.searchsorted(times, grid.times)] = grid.observations
    return observations
