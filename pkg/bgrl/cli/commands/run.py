from pathlib import Path

import click

from ...core.logging_config import logger
from ...models.config import RunConfig
from ...services.experiment import ExperimentRunner
from ..middleware.error_handler import handle_errors


@click.command("run")
@click.argument("config_path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--output", "-o", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="CSV path (overrides the config's output key)")
@click.option("--progress/--no-progress", default=False, help="Show a progress bar")
@handle_errors
def run_command(config_path: Path, output, progress: bool):
    """Run the experiment described by CONFIG_PATH and write per-iteration metrics"""
    config = RunConfig.load(config_path)
    logger.info(f"Loaded run config {config_path}")
    target = output or Path(config.output)
    records = ExperimentRunner(config).run(output=target, progress=progress)
    click.echo(f"{len(records)} iterations written to {target}")
