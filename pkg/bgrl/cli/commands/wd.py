from pathlib import Path
from typing import Optional

import click
import numpy as np

from ...core import constants
from ...core.exceptions import InvalidParameterError
from ...core.logging_config import logger
from ...models.enums import CostKind, WDSolver
from ...services import transport
from ...services.rff import rff_new
from ..middleware.error_handler import handle_errors


def load_points(path: Path) -> np.ndarray:
    """Whitespace-separated floats, one point per line"""
    try:
        points = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise click.BadParameter(f"cannot read points from {path}: {exc}") from exc
    if points.size == 0:
        raise click.BadParameter(f"{path} holds no points")
    if not np.all(np.isfinite(points)):
        raise click.BadParameter(f"{path} holds non-finite values")
    return points


def sgd_value(a: np.ndarray, b: np.ndarray, cost: CostKind, gamma: float, steps: int, features: int,
              bandwidth: float, alpha: float, seed: int) -> float:
    """Dual SGD on random features; the value adds back the constant γ of the KL dual"""
    feature_map = rff_new(a.shape[1], features, bandwidth, seed)
    mu = transport.EmpiricalEmbedding.from_points(a)
    nu = transport.EmpiricalEmbedding.from_points(b)
    pot = transport.wd_solve(mu, nu, cost, gamma, alpha, steps, (feature_map, feature_map), seed)
    dual, _ = transport.dual_objective_samples(pot, a, b, cost)
    return dual + gamma


@click.command("wd")
@click.argument("file_a", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("file_b", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--gamma", type=float, default=None,
              help=f"Entropic smoothing for the sinkhorn and sgd solvers [default: {constants.DEFAULT_GAMMA}]")
@click.option("--cost", type=click.Choice([kind.value for kind in CostKind]), default=CostKind.L2.value,
              show_default=True)
@click.option("--solver", type=click.Choice([solver.value for solver in WDSolver]), default=WDSolver.EXACT.value,
              show_default=True)
@click.option("--steps", type=int, default=50_000, show_default=True, help="Dual SGD steps")
@click.option("--features", type=int, default=constants.DEFAULT_RFF_FEATURES, show_default=True)
@click.option("--rff-sigma", type=float, default=constants.DEFAULT_RFF_SIGMA, show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True, help="Dual SGD step size")
@click.option("--seed", type=int, default=0, show_default=True)
@handle_errors
def wd_command(file_a: Path, file_b: Path, gamma: Optional[float], cost: str, solver: str, steps: int, features: int,
               rff_sigma: float, alpha: float, seed: int):
    """Wasserstein distance between the point clouds in FILE_A and FILE_B"""
    a, b = load_points(file_a), load_points(file_b)
    if a.shape[1] != b.shape[1]:
        raise InvalidParameterError(f"point dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    kind, method = CostKind(cost), WDSolver(solver)
    if method == WDSolver.EXACT and gamma is not None:
        raise click.UsageError("--gamma applies only to the sinkhorn and sgd solvers")
    gamma = constants.DEFAULT_GAMMA if gamma is None else gamma
    logger.info(f"WD between {file_a} ({len(a)} points) and {file_b} ({len(b)} points), solver {method.value}")

    if method == WDSolver.EXACT:
        value = transport.exact_ot_discrete(a, b, kind)
    elif method == WDSolver.SINKHORN:
        value = transport.sinkhorn_oracle(a, b, kind, gamma).value
    else:
        if not gamma > 0.0:
            raise InvalidParameterError("smoothed solver requires gamma > 0")
        value = sgd_value(a, b, kind, gamma, steps, features, rff_sigma, alpha, seed)
    click.echo(constants.CSV_FLOAT_FORMAT.format(value))
