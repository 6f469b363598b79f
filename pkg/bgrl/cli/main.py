import click

from ..core.config import settings
from ..core.logging_config import logger
from .commands.run import run_command
from .commands.verify import verify_command
from .commands.wd import wd_command


@click.group(help=settings.DESCRIPTION)
@click.version_option(settings.VERSION, prog_name=settings.PROJECT_NAME)
def cli():
    logger.debug(f"{settings.PROJECT_NAME} {settings.VERSION}, rollout threads: {settings.BGRL_THREADS}")


cli.add_command(run_command)
cli.add_command(verify_command)
cli.add_command(wd_command)


def main():
    cli()
