import click

from ...services.verification import run_suite
from ..middleware.error_handler import handle_errors


@click.command("verify")
@click.argument("suite")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--verbose", "-v", is_flag=True, help="List every failed check")
@handle_errors
def verify_command(suite: str, seed: int, verbose: bool):
    """Run a property suite: transport, theorem1, lemma-equality or gradients"""
    report = run_suite(suite, seed=seed)
    click.echo(f"{report.suite}: {report.passed} passed, {report.failed} failed")
    for key, value in report.details.items():
        click.echo(f"  {key}: {value}")
    if verbose:
        for failure in report.failures:
            click.echo(f"  FAIL {failure}")
    if not report.ok:
        raise click.exceptions.Exit(1)
