"""Command-line entry point: ``sequential-lfm {simulate,smooth,segment,fit}``."""

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from sequential_lfm import __version__
from sequential_lfm.config import PROVENANCE_KEY, load_config
from sequential_lfm.dataio import (
    band_frame,
    file_header,
    ground_truth_frame,
    model_probability_frame,
    observation_frame,
    read_observations,
    switch_point_frame,
    write_table,
)
from sequential_lfm.errors import InvalidInputError, NumericalFailureError, ResourceLimitError
from sequential_lfm.experiment import Experiment
from sequential_lfm.fit import fit_hyperparameters
from sequential_lfm.types import CommandName

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}_{suffix}{path.suffix or '.csv'}")


def _emit(line: str) -> None:
    sys.stdout.write(line + "\n")


def cmd_simulate(experiment: Experiment, out_path: Path) -> None:
    """Write simulated observations to ``out_path`` and the latent truth next to it (``*_truth.csv``)."""
    config = experiment.config
    sim, labels = experiment.simulate()
    header = file_header(config)

    write_table(out_path, observation_frame(sim.times, sim.observations), header)
    write_table(_sibling(out_path, "truth"), ground_truth_frame(sim, labels), header)

    _emit(f"seed={config.seed}")
    if sim.models is not None:
        _emit(f"switch_times={json.dumps(sim.switch_times)}")


def cmd_smooth(experiment: Experiment, data_path: Path, out_path: Path) -> None:
    """Write smoothed means and 95% bands of every state slot; print the log marginal likelihood."""
    times, observations = read_observations(data_path)
    run = experiment.smooth(times, observations)
    frame = band_frame(run.grid.times, run.model.layout.names, run.smoothed.means, run.smoothed.covs)
    write_table(out_path, frame, file_header(experiment.config))
    _emit(f"loglik={run.loglik:.17g}")


def cmd_segment(experiment: Experiment, data_path: Path, out_path: Path, threshold: float | None = None) -> None:
    """
    Write smoothed model probabilities, moment-matched state bands and detected switch points.

    Files: ``out_path`` (model probabilities), ``*_states.csv`` and ``*_switches.csv``.
    """
    times, observations = read_observations(data_path)
    run = experiment.segment(times, observations, threshold)
    header = file_header(experiment.config)

    write_table(out_path, model_probability_frame(run.grid.times, run.bank.labels, run.smoothed.model_probs), header)
    means, covs = run.state_moments()
    write_table(
        _sibling(out_path, "states"),
        band_frame(run.grid.times, run.bank.models[0].layout.names, means, covs),
        header,
    )
    write_table(_sibling(out_path, "switches"), switch_point_frame(run.switch_times), header)

    _emit(f"loglik={run.loglik:.17g}")
    _emit(f"switch_times={json.dumps(run.switch_times)}")


def cmd_fit(experiment: Experiment, data_path: Path, out_path: Path | None = None) -> None:
    """Fit the free parameters; print start and end values and optionally write the fitted configuration."""
    times, observations = read_observations(data_path)
    result = fit_hyperparameters(experiment, times, observations)

    _emit(f"initial_loglik={result.initial_loglik:.17g}")
    _emit(f"loglik={result.loglik:.17g}")
    for path, value in result.parameters.items():
        _emit(f"{path}={value:.17g} (start {result.initial_parameters[path]:.17g})")

    if out_path is not None:
        fitted = result.config.model_dump(mode="json")
        fitted[PROVENANCE_KEY] = {
            "version": __version__,
            "seed": experiment.config.seed,
            "config": experiment.config.config_hash(),
        }
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(fitted, indent=2) + "\n", encoding="utf-8")
        logging.info("Wrote %s", out_path)


def _logger_config(level: str) -> dict[str, Any]:
    return {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {"default": {"format": "%(asctime)s - %(levelname)s - %(message)s"}},
        "handlers": {
            "stderr": {"class": "logging.StreamHandler", "formatter": "default", "stream": "ext://sys.stderr"},
        },
        "root": {"level": level, "handlers": ["stderr"]},
    }


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one sub-command per workflow."""
    parser = argparse.ArgumentParser(
        prog="sequential-lfm",
        description="Sequential inference for (switching) latent force models",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_command(name: CommandName, description: str, *, needs_data: bool) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=description)
        sub.add_argument("--config", type=Path, required=True, help="Experiment configuration (JSON or YAML)")
        if needs_data:
            sub.add_argument("--data", type=Path, required=True, help="Observation CSV (t,y_1,...,y_m)")
        sub.add_argument("--seed", type=int, help="Override the configured random seed")
        sub.add_argument("--plugin-dir", type=Path, help="Directory with extra force-prior plugins")
        sub.add_argument(
            "--log-level",
            choices=["DEBUG", "INFO", "WARNING", "ERROR"],
            default="WARNING",
            help="Logging verbosity",
        )
        return sub

    add_command("simulate", "Simulate data from the configured model", needs_data=False).add_argument(
        "--out", type=Path, required=True, help="Output CSV of the observations"
    )
    add_command("smooth", "Kalman filter and RTS smoother", needs_data=True).add_argument(
        "--out", type=Path, required=True, help="Output CSV of the smoothed states"
    )
    segment = add_command("segment", "Detect force switch points", needs_data=True)
    segment.add_argument("--out", type=Path, required=True, help="Output CSV of the model probabilities")
    segment.add_argument("--threshold", type=float, help="Reset probability threshold (default 0.2)")
    add_command("fit", "Fit the free hyperparameters", needs_data=True).add_argument(
        "--out", type=Path, help="Write the fitted configuration as JSON"
    )
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    """
    Parse arguments and run one command.

    :returns: 0 on success, 2 for invalid configuration, data, I/O or a problem too large for an oracle cap,
        3 for numerical failures, 1 otherwise
    """
    args = build_parser().parse_args(argv)

    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = config.model_validate({**config.model_dump(mode="json"), "seed": args.seed})

        experiment = Experiment(config, args.plugin_dir, _logger_config(args.log_level))

        if args.command == "simulate":
            cmd_simulate(experiment, args.out)
        elif args.command == "smooth":
            cmd_smooth(experiment, args.data, args.out)
        elif args.command == "segment":
            cmd_segment(experiment, args.data, args.out, args.threshold)
        else:
            cmd_fit(experiment, args.data, args.out)

    except (InvalidInputError, ValidationError, ResourceLimitError, OSError) as e:
        logging.error("%s", e)  # noqa: TRY400
        return EXIT_INVALID
    except NumericalFailureError as e:
        logging.error("Numerical failure: %s", e)  # noqa: TRY400
        return EXIT_NUMERICAL
    except Exception:
        logging.exception("Unexpected error running %s", args.command)
        return EXIT_UNEXPECTED

    return EXIT_OK


def main() -> None:
    """CLI entry point."""
    sys.exit(run())


if __name__ == "__main__":
    main()
