"""
CSV input and output.

Observation files have a header ``t,y_1,...,y_m`` and one row per time; an empty cell is a missing observation.
Every file written starts with a ``#`` comment naming the tool version, the seed and the configuration hash.
Values are written with 17 significant digits so files read back losslessly.
"""

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from sequential_lfm import __version__
from sequential_lfm.config import ExperimentConfig
from sequential_lfm.errors import DataError
from sequential_lfm.simulate import SimulationOutput
from sequential_lfm.types import FloatArray

TIME_COLUMN = "t"
CREDIBLE_Z = 1.96
"""Half-width of the 95% band in standard deviations."""


def file_header(config: ExperimentConfig, seed: int | None = None) -> str:
    """Provenance comment line for output files."""
    seed = config.seed if seed is None else seed
    return f"# sequential-lfm {__version__} seed={seed} config={config.config_hash()}"


def write_table(path: Path, frame: pd.DataFrame, header: str) -> None:
    """Write a data frame as CSV below a provenance comment."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(header + "\n")
        frame.to_csv(f, index=False, float_format="%.17g", na_rep="", lineterminator="\n")
    logging.info("Wrote %s", path)


def observation_frame(times: FloatArray, observations: FloatArray) -> pd.DataFrame:
    """Observation table with columns ``t, y_1, ..., y_m``."""
    frame = pd.DataFrame(observations, columns=[f"y_{i}" for i in range(1, observations.shape[1] + 1)])
    frame.insert(0, TIME_COLUMN, times)
    return frame


def read_observations(path: Path) -> tuple[FloatArray, FloatArray]:
    """
    Read an observation CSV.

    :returns: The times and the ``T x m`` observations with NaN for missing cells
    :raises DataError: If the file cannot be parsed, has no rows, or its times are not strictly increasing
    :raises FileNotFoundError: If the file does not exist
    """
    if not path.exists():
        error_message = f"Data file {path} does not exist"
        raise FileNotFoundError(error_message)

    try:
        frame = pd.read_csv(path, comment="#", skip_blank_lines=True, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        error_message = f"{path}: cannot parse CSV: {e}"
        raise DataError(error_message) from e

    if frame.empty:
        error_message = f"{path}: no data rows"
        raise DataError(error_message)
    if frame.columns[0] != TIME_COLUMN:
        error_message = f"{path}: first column must be '{TIME_COLUMN}', got '{frame.columns[0]}'"
        raise DataError(error_message)

    for column in frame.columns:
        numeric = pd.to_numeric(frame[column], errors="coerce")
        bad = numeric.isna() & frame[column].notna()
        if bad.any():
            row = int(np.argmax(bad.to_numpy())) + 1
            error_message = f"{path}: row {row}: non-numeric value in column '{column}'"
            raise DataError(error_message)
        frame[column] = numeric

    times = frame[TIME_COLUMN].to_numpy(dtype=float)
    if np.any(np.isnan(times)):
        row = int(np.argmax(np.isnan(times))) + 1
        error_message = f"{path}: row {row}: missing time"
        raise DataError(error_message)

    decreasing = np.flatnonzero(np.diff(times) <= 0.0)
    if decreasing.size:
        row = int(decreasing[0]) + 2
        error_message = f"{path}: row {row}: time {times[row - 1]} does not increase on {times[row - 2]}"
        raise DataError(error_message)

    observations = frame.drop(columns=TIME_COLUMN).to_numpy(dtype=float)
    logging.debug("Read %i rows with %i observation columns from %s", *observations.shape, path)
    return times, observations


def ground_truth_frame(sim: SimulationOutput, labels: list[str] | None = None) -> pd.DataFrame:
    """Latent states of a simulation, with the true model per step when switching."""
    frame = pd.DataFrame(sim.states, columns=list(sim.slot_names))
    frame.insert(0, TIME_COLUMN, sim.times)
    if sim.models is not None:
        frame["model"] = sim.models.astype(int)
        if labels is not None:
            frame["model_label"] = [labels[int(s)] for s in sim.models]
        frame["switch"] = np.isin(sim.times, sim.switch_times).astype(int)
    return frame


def band_frame(times: FloatArray, slot_names: tuple[str, ...], means: FloatArray, covs: FloatArray) -> pd.DataFrame:
    """Posterior mean and 95% band of every state slot."""
    std = np.sqrt(np.clip(np.diagonal(covs, axis1=1, axis2=2), 0.0, None))
    columns: dict[str, FloatArray] = {TIME_COLUMN: times}
    for i, name in enumerate(slot_names):
        columns[f"{name}_mean"] = means[:, i]
        columns[f"{name}_lower"] = means[:, i] - CREDIBLE_Z * std[:, i]
        columns[f"{name}_upper"] = means[:, i] + CREDIBLE_Z * std[:, i]
    return pd.DataFrame(columns)


def model_probability_frame(times: FloatArray, labels: list[str], probs: FloatArray) -> pd.DataFrame:
    """Per-step model probabilities, one column per model label."""
    frame = pd.DataFrame(probs, columns=labels)
    frame.insert(0, TIME_COLUMN, times)
    return frame


def switch_point_frame(switch_times: list[float]) -> pd.DataFrame:
    """Detected switch times."""
    return pd.DataFrame({TIME_COLUMN: np.asarray(switch_times, dtype=float)})
