import functools
import traceback

import click

from ...core.exceptions import BGRLError, ConfigError, IterationError, UnknownSuiteError
from ...core.logging_config import logger


def config_error_handler(exc: BGRLError) -> int:
    """Handle malformed configs and unknown suite names"""
    logger.error(f"Invalid input: {exc.detail}")
    click.echo(f"error: {exc.detail}", err=True)
    return exc.exit_code


def iteration_error_handler(exc: IterationError) -> int:
    """Handle failures inside a training iteration"""
    logger.error(f"Run failed at iteration {exc.iteration}: {exc.detail}")
    click.echo(f"error: {exc.detail}", err=True)
    return exc.exit_code


def bgrl_error_handler(exc: BGRLError) -> int:
    logger.error(f"{type(exc).__name__}: {exc.detail}")
    click.echo(f"error: {exc.detail}", err=True)
    return exc.exit_code


def general_exception_handler(exc: Exception) -> int:
    """Handle anything the services did not anticipate"""
    logger.error(f"Unhandled exception: {str(exc)}\n{traceback.format_exc()}")
    click.echo(f"error: {exc}", err=True)
    return 1


def handle_errors(command):
    """Turn exceptions raised by a command into process exit codes"""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except click.exceptions.Exit:
            raise
        except click.ClickException:
            raise
        except (ConfigError, UnknownSuiteError) as exc:
            code = config_error_handler(exc)
        except IterationError as exc:
            code = iteration_error_handler(exc)
        except BGRLError as exc:
            code = bgrl_error_handler(exc)
        except Exception as exc:
            code = general_exception_handler(exc)
        raise click.exceptions.Exit(code)

    return wrapper
