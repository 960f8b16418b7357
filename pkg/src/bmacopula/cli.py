"""Command line interface: run the copula verification pipeline stage by stage."""

import argparse
import datetime
import logging
import os
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import pydantic
from InquirerPy import inquirer
from InquirerPy.base.control import Choice

from bmacopula import consts, models
from bmacopula.__version__ import VERSION
from bmacopula.data import Dataset, generate_synthetic, save_dataset
from bmacopula.errors import BmaCopulaError, ConfigError
from bmacopula.pipeline import estimate_stage, forecast_stage, run_all, verify_stage
from bmacopula.utils import dump_config, dump_schema, load_mapping, load_run_config

BUNDLED_CONFIG_FOLDER = Path(__file__).parent / consts.CONFIG_FOLDER


def _stations(value: str) -> list[str]:
    stations = [s.strip() for s in value.split(",") if s.strip()]
    if not stations:
        raise argparse.ArgumentTypeError("expected a comma separated list of station ids")
    return stations


_COMMON_ARGS = argparse.ArgumentParser(add_help=False)
_COMMON_ARGS.add_argument(
    "-c", "--config", type=Path, help="Run configuration file (.json5, .json or .toml)."
)
_COMMON_ARGS.add_argument("--seed", type=int, help="Override the configured seed.")
_COMMON_ARGS.add_argument(
    "--stations", type=_stations, help="Comma separated station ids to process."
)
_COMMON_ARGS.add_argument("--jobs", type=int, help="Number of worker processes.")
_COMMON_ARGS.add_argument("--output-dir", type=str, help="Override the output directory.")
_COMMON_ARGS.add_argument(
    "-v", "--verbose", action="count", default=0, help="Log progress (-vv for debug)."
)

MAIN_ARGS = argparse.ArgumentParser(
    prog="bmacopula",
    description="Ensemble BMA marginals joined by a Gaussian copula, with verification.",
)
MAIN_ARGS.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
_SUBCOMMANDS = MAIN_ARGS.add_subparsers(dest="command", required=True)
_SUBCOMMANDS.add_parser(
    "estimate", parents=[_COMMON_ARGS], help="Estimate per-station correlation matrices."
)
_SUBCOMMANDS.add_parser(
    "forecast", parents=[_COMMON_ARGS], help="Draw joint predictive samples for test days."
)
_SUBCOMMANDS.add_parser("verify", parents=[_COMMON_ARGS], help="Score the forecasts.")
_SUBCOMMANDS.add_parser(
    "run-all", parents=[_COMMON_ARGS], help="Run estimate, forecast and verify."
)
_SYNTH = _SUBCOMMANDS.add_parser(
    "synth", parents=[_COMMON_ARGS], help="Write a synthetic dataset from a spec file."
)
_SYNTH.add_argument(
    "--spec",
    type=Path,
    default=BUNDLED_CONFIG_FOLDER / consts.FIXTURE_SYNTH_FNAME,
    help="Synthetic spec file; defaults to the bundled 3-station fixture.",
)
_SYNTH.add_argument("--out", type=Path, default=Path("synthetic.csv"), help="CSV to write.")
_SYNTH.add_argument(
    "--run-config",
    type=Path,
    help="Also write a run configuration that calibrates on the first half of the data.",
)
_INIT = _SUBCOMMANDS.add_parser(
    "init", parents=[_COMMON_ARGS], help="Interactively write a run configuration."
)
_INIT.add_argument(
    "--out", type=Path, default=Path(consts.SELF_CONFIG_FNAME), help="Config file to write."
)


def _parse_date(value: str) -> bool:
    if not value:
        return True
    try:
        datetime.date.fromisoformat(value)
    except ValueError:
        return False
    return True


def prompt_for_run_config() -> models.RunConfig:
    """Prompt the user for a run configuration."""
    config: dict[str, Any] = dict(models.DEFAULT_RUN_CONFIG)
    config["calibration_path"] = inquirer.text(
        message="📂 Calibration dataset (CSV):",
        validate=lambda result: len(result) > 0,
        invalid_message="Path cannot be empty.",
    ).execute()
    config["test_path"] = inquirer.text(
        message="📂 Test dataset (CSV):",
        default=config["calibration_path"],
        validate=lambda result: len(result) > 0,
        invalid_message="Path cannot be empty.",
    ).execute()
    test_start: str = inquirer.text(
        message="📅 First test day (YYYY-MM-DD, empty for the whole test file):",
        validate=_parse_date,
        invalid_message="Use an ISO date such as 2008-01-01.",
    ).execute()
    config["test_start"] = test_start or None

    use_default: bool = inquirer.confirm(
        message="⚙️ Would you like to use the default settings for everything else?",
        default=True,
    ).execute()
    if not use_default:
        config["window"] = int(
            inquirer.number(
                message="🪟 Training window (days):",
                min_allowed=2,
                default=consts.DEFAULT_WINDOW,
            ).execute()
        )
        config["sample_size"] = int(
            inquirer.number(
                message="🎲 Joint samples per station-day:",
                min_allowed=consts.MIN_SAMPLE_SIZE,
                default=consts.DEFAULT_SAMPLE_SIZE,
            ).execute()
        )
        config["seed"] = int(
            inquirer.number(message="🌱 Random seed:", min_allowed=0, default=0).execute()
        )
        config["methods"] = inquirer.checkbox(
            message="📊 Select the methods to verify:",
            choices=[Choice(value=m, enabled=True) for m in consts.METHODS],
            validate=lambda result: len(result) > 0,
            invalid_message="Select at least one method.",
        ).execute()
        config["variables"] = inquirer.checkbox(
            message="🌦️ Select the weather variables:",
            choices=[
                Choice(value=v, name=f"{v} ({consts.VARIABLE_UNITS[v]})", enabled=True)
                for v in consts.VARIABLES
            ],
            validate=lambda result: len(result) > 0,
            invalid_message="Select at least one variable.",
        ).execute()
        config["output_dir"] = inquirer.text(
            message="📁 Output directory:", default=config["output_dir"]
        ).execute()
    try:
        return models.PydRunConfig.validate_python(config)
    except pydantic.ValidationError as exc:
        raise ConfigError(f"Invalid run configuration: {exc}") from exc


def write_fixture_run_config(path: Path, csv_path: Path, dataset: Dataset) -> None:
    """Write the bundled fixture run configuration pointed at ``csv_path``.

    The test period starts at the middle date of the dataset and the variables
    are the dataset's own.
    """
    config = load_run_config(BUNDLED_CONFIG_FOLDER / consts.FIXTURE_RUN_FNAME)
    data_path = os.path.relpath(csv_path.resolve(), path.resolve().parent)
    config["calibration_path"] = data_path
    config["test_path"] = data_path
    config["output_dir"] = f"{csv_path.stem}_out"
    config["variables"] = list(dataset.variables)  # type: ignore[arg-type]
    dates = sorted({r.date for r in dataset.records})
    config["test_start"] = dates[len(dates) // 2] if dates else None
    dump_config(path, config)


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _report_error(exc: BmaCopulaError | OSError) -> int:
    report: models.ErrorReport = {
        "error": type(exc).__name__,
        "message": str(exc),
        "exit_code": 1,
    }
    print(f"🚨 {exc}")
    sys.stderr.write(models.PydErrorReport.dump_json(report).decode("utf8") + "\n")
    return 1


def _run(args: argparse.Namespace) -> None:
    if args.command == "init":
        config = prompt_for_run_config()
        dump_config(args.out, config)
        dump_schema(args.out.parent / consts.SELF_CONFIG_SCHEMA_FNAME)
        print(f"✅ Configuration saved at {args.out}.")
        return
    if args.command == "synth":
        print(f"🎲 Generating synthetic dataset from {args.spec}...")
        spec = load_mapping(args.spec)
        if args.seed is not None:
            spec["seed"] = args.seed
        dataset = generate_synthetic(spec)
        if args.stations is not None:
            dataset = dataset.select_stations(args.stations)
        save_dataset(dataset, args.out)
        print(f"✅ Wrote {len(dataset)} station-days to {args.out}.")
        if args.run_config is not None:
            write_fixture_run_config(args.run_config, args.out, dataset)
            print(f"✅ Run configuration saved at {args.run_config}.")
        return

    config = load_run_config(
        args.config,
        {
            "seed": args.seed,
            "stations": args.stations,
            "jobs": args.jobs,
            "output_dir": args.output_dir,
        },
    )
    if args.command == "estimate":
        print("🚀 Estimating correlation matrices...")
        matrices = estimate_stage(config)
        print(f"✅ Estimated {len(matrices)} correlation matrices in {config['output_dir']}.")
    elif args.command == "forecast":
        print("🚀 Drawing joint forecasts...")
        index = forecast_stage(config)
        print(f"✅ Forecast {len(index['cases'])} station-days.")
    else:
        if args.command == "run-all":
            print("🚀 Running estimate, forecast and verify...")
            report = run_all(config)
        else:
            print("🚀 Verifying forecasts...")
            report = verify_stage(config)
        print(report.scores_frame().to_string(index=False, float_format="%.4f"))
        print(f"✅ Reports written to {config['output_dir']}.")


def main(argv: Sequence[str] | None = None) -> int:
    """Main entry point for the CLI tool."""
    args = MAIN_ARGS.parse_args(argv)
    _configure_logging(args.verbose)
    try:
        _run(args)
    except (BmaCopulaError, OSError) as exc:
        return _report_error(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
