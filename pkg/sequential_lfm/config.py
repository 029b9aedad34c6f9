"""
Experiment configuration.

One JSON or YAML document holds every hyperparameter of an experiment: the output model, the force priors,
the observation model, the optional switching section, inference budgets, the simulation grid and the fit setup.
Unknown keys are rejected so misspelt hyperparameters fail loudly.
"""

import hashlib
import json
import re
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from sequential_lfm.errors import ConfigError
from sequential_lfm.lfm import OutputModelSpec
from sequential_lfm.slds import DEFAULT_THRESHOLD, SwitchTransitionSpec
from sequential_lfm.types import FloatArray

_PATH_PATTERN = re.compile(r"^(?P<section>\w+)\.(?P<field>\w+)(?:\[(?P<index>\d+)\])?$")

PROVENANCE_KEY = "_provenance"
"""Top-level key of the version, seed and source config hash written with fitted configurations; ignored on load."""


class ForcePriorConfig(BaseModel):
    """Gaussian-process prior shared by the latent forces."""

    model_config = ConfigDict(extra="forbid")

    family: str = "matern"
    """Name of a registered force-prior family, ``matern`` or ``se_taylor`` out of the box."""

    nu: float = 1.5
    """Matérn smoothness."""

    order: int = Field(default=6, ge=2)
    """State dimension of the squared exponential approximation."""

    lengthscales: list[float] | None = None
    """One length-scale per force; not needed when a switching section is present."""

    variance: float = Field(default=1.0, gt=0.0)
    """Force variance ``sigma^2``."""


class ObservationConfig(BaseModel):
    """Which state slots are observed and with how much noise."""

    model_config = ConfigDict(extra="forbid")

    noise_variance: float = Field(default=0.01, ge=0.0)

    observed: list[str] | None = None
    """Observed slot names such as ``x1`` or ``u1``; all output positions when omitted."""


class SwitchingConfig(BaseModel):
    """Candidate length-scales and the Markov switch prior."""

    model_config = ConfigDict(extra="forbid")

    lengthscales: list[float] = Field(min_length=1)
    stay: float | list[float] = 0.98
    exit: list[float] | None = None
    reset_prior_scale: float = Field(default=1.0, gt=0.0)
    """Multiplier of the stationary covariance (shortest length-scale) the reset model re-primes with."""

    def transition_spec(self) -> SwitchTransitionSpec:
        """Switch prior of this section."""
        return SwitchTransitionSpec(stay=self.stay, exit=self.exit)


class InferenceConfig(BaseModel):
    """Mixture budgets of the switching inference."""

    model_config = ConfigDict(extra="forbid")

    adf_components: int = Field(default=3, ge=1)
    ec_components: int = Field(default=3, ge=1)


class GridConfig(BaseModel):
    """Regular simulation grid ``linspace(start, stop, num)``."""

    model_config = ConfigDict(extra="forbid")

    start: float = 0.0
    stop: float = 10.0
    num: int = Field(default=101, ge=1)

    @model_validator(mode="after")
    def validate_span(self) -> "GridConfig":
        """
        Validate that the grid is strictly increasing.

        :raises ValueError: If ``stop <= start`` with more than one point
        """
        if self.num > 1 and self.stop <= self.start:
            error_message = f"grid: stop ({self.stop}) must exceed start ({self.start})"
            raise ValueError(error_message)
        return self

    def times(self) -> FloatArray:
        """Return the grid times."""
        return np.linspace(self.start, self.stop, self.num)


class FitConfig(BaseModel):
    """Free parameters and stopping rule of the hyperparameter fit."""

    model_config = ConfigDict(extra="forbid")

    free: list[str] = Field(default_factory=list)
    """Parameter paths such as ``output.masses[0]`` or ``force.lengthscales[0]``."""

    max_evaluations: int = Field(default=500, ge=1)
    rel_tol: float = Field(default=1e-6, gt=0.0)


class ExperimentConfig(BaseModel):
    """Complete configuration of one experiment."""

    model_config = ConfigDict(extra="forbid")

    output: OutputModelSpec
    force: ForcePriorConfig = Field(default_factory=ForcePriorConfig)
    observation: ObservationConfig = Field(default_factory=ObservationConfig)
    switching: SwitchingConfig | None = None
    inference: InferenceConfig = Field(default_factory=InferenceConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    fit: FitConfig = Field(default_factory=FitConfig)

    seed: int = Field(default=0, ge=0, lt=2**64)
    """Seed of the counter-based random generator."""

    threshold: float = Field(default=DEFAULT_THRESHOLD, gt=0.0, lt=1.0)
    """Reset probability above which a switch point is reported."""

    initial_output_variance: float = Field(default=1.0, gt=0.0)
    """Variance of the isotropic prior on the output states."""

    known_switches: list[float] = Field(default_factory=list)
    """Known force switch times used by the ``smooth`` command."""

    @model_validator(mode="after")
    def validate_dimensions(self) -> "ExperimentConfig":
        """
        Validate cross-section consistency.

        :returns: The validated configuration
        :raises ValueError: If the force length-scales do not match ``R`` or a free parameter path is invalid
        """
        n_forces = self.output.n_forces
        if self.force.lengthscales is None:
            if self.switching is None:
                error_message = "force.lengthscales: required when no switching section is given"
                raise ValueError(error_message)
        elif len(self.force.lengthscales) != n_forces:
            error_message = (
                f"force.lengthscales: expected {n_forces} entries (one per force), got {len(self.force.lengthscales)}"
            )
            raise ValueError(error_message)

        if any(scale <= 0.0 for scale in self.force.lengthscales or []):
            error_message = "force.lengthscales: length-scales must be positive"
            raise ValueError(error_message)

        if self.switching is not None:
            if any(scale <= 0.0 for scale in self.switching.lengthscales):
                error_message = "switching.lengthscales: length-scales must be positive"
                raise ValueError(error_message)
            n_regular = len(self.switching.lengthscales) ** n_forces
            for name in ("stay", "exit"):
                value = getattr(self.switching, name)
                if isinstance(value, list) and len(value) not in (1, n_regular):
                    error_message = f"switching.{name}: expected 1 or {n_regular} probabilities, got {len(value)}"
                    raise ValueError(error_message)

        if any(np.diff(self.known_switches) <= 0.0):
            error_message = "known_switches: switch times must be strictly increasing"
            raise ValueError(error_message)

        for path in self.fit.free:
            value = _resolve(self.model_dump(mode="json"), path)[0]
            if not isinstance(value, (int, float)) or value <= 0.0:
                error_message = f"fit.free: parameter '{path}' must be a positive number, got {value!r}"
                raise ValueError(error_message)

        return self

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def get_parameter(self, path: str) -> float:
        """
        Value of a numeric parameter addressed by a path such as ``output.masses[0]``.

        :raises ConfigError: If the path does not resolve to a number
        """
        value = _resolve(self.model_dump(mode="json"), path)[0]
        if not isinstance(value, (int, float)):
            error_message = f"Parameter '{path}' is not a number"
            raise ConfigError(error_message)
        return float(value)

    def with_parameters(self, values: dict[str, float]) -> "ExperimentConfig":
        """
        Copy of this configuration with the addressed parameters replaced.

        :raises ConfigError: If a path does not resolve
        """
        data = self.model_dump(mode="json")
        for path, value in values.items():
            _, container, key = _resolve(data, path)
            container[key] = float(value)
        return ExperimentConfig.model_validate(data)

    @classmethod
    def from_json(cls, path: Path) -> "ExperimentConfig":
        """
        Load a JSON formatted experiment configuration.

        :param path: Path to the JSON file
        """
        with path.open("r") as f:
            json_data = json.loads(f.read())

        if isinstance(json_data, dict):
            json_data.pop(PROVENANCE_KEY, None)
        return cls(**json_data)

    @classmethod
    def from_yaml(cls, path: Path) -> "ExperimentConfig":
        """
        Load a YAML formatted experiment configuration.

        :param path: Path to the YAML file
        """
        with path.open("r") as f:
            yaml_data = yaml.safe_load(f)

        if isinstance(yaml_data, dict):
            yaml_data.pop(PROVENANCE_KEY, None)
        return cls(**yaml_data)


def _resolve(data: dict[str, Any], path: str) -> tuple[Any, Any, Any]:
    match = _PATH_PATTERN.match(path)
    if match is None:
        error_message = f"Malformed parameter path '{path}'; expected 'section.field' or 'section.field[i]'"
        raise ConfigError(error_message)

    section = data.get(match["section"])
    if not isinstance(section, dict) or match["field"] not in section:
        error_message = f"Unknown parameter path '{path}'"
        raise ConfigError(error_message)

    container: Any = section
    key: Any = match["field"]
    if match["index"] is not None:
        container = section[key]
        key = int(match["index"])
        if not isinstance(container, list) or key >= len(container):
            error_message = f"Index out of range in parameter path '{path}'"
            raise ConfigError(error_message)

    return container[key], container, key


def load_config(path: Path) -> ExperimentConfig:
    """
    Load an experiment configuration, dispatching on the file suffix.

    :raises FileNotFoundError: If the file does not exist
    :raises ValueError: If the suffix is neither JSON nor YAML
    """
    if not path.exists():
        error_message = f"Configuration file {path} does not exist"
        raise FileNotFoundError(error_message)

    if path.suffix == ".json":
        return ExperimentConfig.from_json(path)
    if path.suffix in [".yaml", ".yml"]:
        return ExperimentConfig.from_yaml(path)

    error_message = f"Unsupported configuration format '{path.suffix}'; use .json, .yaml or .yml"
    raise ConfigError(error_message)
