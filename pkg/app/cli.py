import os
import sys
from typing import Any, Callable, Dict, Optional

import click

from app import settings
from app.exceptions import PolCompError
from app.logger import configure_logging, get_logger
from app.schemas import ScenarioConfig, ScenarioKind, validate_scenario
from app.services import harness
from app.storage import crud

# Create logger for this module
logger = get_logger(__name__)

IO_EXIT_CODE = 4


def resolve_config(
    config_path: Optional[str],
    kind: Optional[ScenarioKind] = None,
    **overrides: Any,
) -> tuple[ScenarioConfig, str]:
    """
    Load the config file (or the defaults) and apply command-line overrides.

    Returns the effective config and the directory relative calibration files
    are resolved against.
    """
    if config_path:
        cfg = crud.load_config(config_path)
        base_dir = os.path.dirname(os.path.abspath(config_path))
    else:
        cfg = ScenarioConfig(output_prefix=settings.DEFAULT_OUTPUT_PREFIX)
        base_dir = os.getcwd()

    update: Dict[str, Any] = {k: v for k, v in overrides.items() if v is not None}
    if kind is not None:
        update["kind"] = kind.value
    if update:
        cfg = validate_scenario({**cfg.model_dump(mode="json"), **update})
    return cfg, base_dir


def _run_guarded(action: Callable[[], Any]) -> Any:
    """Map domain and I/O failures onto '<category> error: <detail>' and an exit code."""
    try:
        return action()
    except PolCompError as exc:
        logger.error("Command failed", category=exc.category, error=str(exc))
        click.echo(f"{exc.category} error: {exc}", err=True)
        sys.exit(exc.exit_code)
    except OSError as exc:
        logger.error("Command failed", category="io", error=str(exc))
        click.echo(f"io error: {exc}", err=True)
        sys.exit(IO_EXIT_CODE)


def _emit(payload: str) -> None:
    click.echo(payload)


config_option = click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    default=None,
    help="JSON scenario config; defaults are used when omitted.",
)
seed_option = click.option("--seed", type=int, default=None, help="Root seed (0..2^64-1).")
out_option = click.option(
    "--out", "output_prefix", default=None, help="Output file prefix."
)
duration_option = click.option(
    "--duration", "duration_s", type=float, default=None, help="Simulated seconds."
)


@click.group()
@click.option("--log-level", default=None, help="Overrides POLCOMP_LOG_LEVEL.")
def cli(log_level: Optional[str]) -> None:
    """Polarization drift compensation simulator for entanglement-based QKD."""
    configure_logging(level=log_level)


def _single_run(kind: ScenarioKind, **options: Any) -> None:
    config_path = options.pop("config_path")

    def action() -> str:
        cfg, base_dir = resolve_config(config_path, kind=kind, **options)
        result = harness.run_scenario(cfg, base_dir)
        return result.summary.model_dump_json(indent=2)

    _emit(_run_guarded(action))


@cli.command()
@config_option
@seed_option
@out_option
@duration_option
def optimize(**options: Any) -> None:
    """Run the closed-loop search against a drifting link."""
    _single_run(ScenarioKind.OPTIMIZE, **options)


@cli.command("drift-log")
@config_option
@seed_option
@out_option
@duration_option
def drift_log(**options: Any) -> None:
    """Log uncompensated drift of arm A with the compensator held."""
    _single_run(ScenarioKind.DRIFT_LOG, **options)


@cli.command()
@config_option
@seed_option
@out_option
@duration_option
@click.option("--batch-size", type=int, default=None, help="Number of runs.")
@click.option("--workers", type=int, default=None, help="Parallel processes.")
def batch(**options: Any) -> None:
    """Run a batch of independently seeded scenarios and aggregate them."""
    config_path = options.pop("config_path")

    def action() -> str:
        cfg, base_dir = resolve_config(config_path, kind=ScenarioKind.BATCH, **options)
        summary = harness.run_batch(cfg, base_dir)
        return summary.model_dump_json(indent=2, exclude={"runs"})

    _emit(_run_guarded(action))


@cli.command("validate-config")
@click.option(
    "--config", "config_path", type=click.Path(dir_okay=False), required=True
)
def validate_config(config_path: str) -> None:
    """Validate a config file and print the effective configuration."""

    def action() -> str:
        cfg, _ = resolve_config(config_path)
        return crud.dump_config(cfg)

    _emit(_run_guarded(action))
