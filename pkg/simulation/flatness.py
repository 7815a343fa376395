"""
Flatness and consistency diagnostics.

  - power iteration for the dominant Hessian eigenvalue (lambda1), on top of
    central-difference Hessian-vector products
  - 1D interpolation between two models, gamma in [-1, 2]
  - 2D loss landscapes along two seeded, per-layer normalised directions
  - delta_eps: distance between two normalised pseudo-gradients scaled by rho
  - local vs global lambda1 table for the clients' last local models

All diagnostics only read the models they are given.
"""
from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import structlog

from simulation.shared.datagen import Dataset
from simulation.shared.errors import InvalidArgumentError
from simulation.shared.numcore import (
    BatchObjective,
    ModelArch,
    Objective,
    ParamVector,
    hessian_vector_product,
)

logger = structlog.get_logger(__name__)

INTERPOLATION_MIN = -1.0
INTERPOLATION_SPAN = 3.0

# ||Hv|| at or below this, scaled by (1 + ||w||), counts as a flat operator
DEGENERATE_HV_NORM = 1e-12


@dataclass(frozen=True)
class EigenEstimate:
    lambda1: float
    iterations: int
    residual: float
    converged: bool
    degenerate: bool = False

    @property
    def negative(self) -> bool:
        return self.lambda1 < 0


@dataclass(frozen=True)
class InterpolationPoint:
    gamma: float
    loss: float
    acc: float


@dataclass(frozen=True)
class LandscapeGrid:
    d1: ParamVector = field(repr=False)
    d2: ParamVector = field(repr=False)
    coords: np.ndarray
    losses: np.ndarray = field(repr=False)  # losses[i, j] at (coords[i], coords[j])
    extent: float = 1.0

    @property
    def resolution(self) -> int:
        return int(self.coords.shape[0])


@dataclass(frozen=True)
class EigenRow:
    client: int
    dominant_class: int | None
    lambda1_local: float
    lambda1_global: float


# ---------------------------------------------------------------------------
# Power iteration
# ---------------------------------------------------------------------------


def power_iteration(
    hvp_fn: Callable[[ParamVector], ParamVector],
    dim: int,
    max_iter: int = 20,
    tol: float = 1e-3,
    seed: int = 0,
    degenerate_tol: float = DEGENERATE_HV_NORM,
) -> EigenEstimate:
    """
    Dominant eigenvalue of the operator behind ``hvp_fn``.

    Stops when the relative change of the Rayleigh quotient drops below
    ``tol`` or after ``max_iter`` products. An operator that maps the unit
    iterate to a vector of norm <= ``degenerate_tol`` yields lambda1 = 0 with
    ``degenerate`` set.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)

    lam_prev: float | None = None
    lam = 0.0
    residual = float("inf")
    for it in range(1, max_iter + 1):
        hv = hvp_fn(v)
        norm_hv = float(np.linalg.norm(hv))
        if norm_hv <= degenerate_tol:
            return EigenEstimate(0.0, it, 0.0, converged=True, degenerate=True)
        lam = float(v @ hv)
        residual = float(np.linalg.norm(hv - lam * v))
        if lam_prev is not None and abs(lam - lam_prev) <= tol * max(abs(lam), 1e-12):
            return EigenEstimate(lam, it, residual, converged=True)
        lam_prev = lam
        v = hv / norm_hv

    logger.debug("power_iteration_not_converged", lambda1=lam, iterations=max_iter)
    return EigenEstimate(lam, max_iter, residual, converged=False)


def _degenerate_tol(w: ParamVector) -> float:
    return DEGENERATE_HV_NORM * (1.0 + float(np.linalg.norm(w)))


def objective_lambda1(
    objective: Objective,
    w: ParamVector,
    max_iter: int = 20,
    tol: float = 1e-3,
    seed: int = 0,
    h: float | None = None,
) -> EigenEstimate:
    return power_iteration(
        lambda v: hessian_vector_product(objective.grad, w, v, h),
        dim=int(w.shape[0]),
        max_iter=max_iter,
        tol=tol,
        seed=seed,
        degenerate_tol=_degenerate_tol(w),
    )


def power_iteration_lambda1(
    w: ParamVector,
    arch: ModelArch,
    dataset: Dataset,
    max_iter: int = 20,
    tol: float = 1e-3,
    seed: int = 0,
    batch_size: int | None = None,
) -> EigenEstimate:
    """lambda1 of the loss on ``dataset``; full batch unless ``batch_size`` is set."""
    if len(dataset) == 0:
        raise InvalidArgumentError("power iteration needs a nonempty dataset")
    if batch_size is None or batch_size >= len(dataset):
        return objective_lambda1(BatchObjective(arch, dataset.as_batch()), w, max_iter, tol, seed)

    batch_rng = np.random.default_rng([seed, 1])

    def stochastic_hvp(v: ParamVector) -> ParamVector:
        idx = batch_rng.choice(len(dataset), size=batch_size, replace=False)
        objective = BatchObjective(arch, dataset.subset(idx).as_batch())
        return hessian_vector_product(objective.grad, w, v)

    return power_iteration(stochastic_hvp, arch.param_count, max_iter, tol, seed, _degenerate_tol(w))


# ---------------------------------------------------------------------------
# 1D interpolation
# ---------------------------------------------------------------------------


def interpolation_gammas(num_points: int) -> np.ndarray:
    if num_points < 4 or (num_points - 1) % 3 != 0:
        raise InvalidArgumentError(
            f"num_points={num_points}: need num_points - 1 divisible by 3 (e.g. 31)"
        )
    i = np.arange(num_points, dtype=np.float64)
    return INTERPOLATION_MIN + INTERPOLATION_SPAN * i / (num_points - 1)


def scan_line(
    objective: Objective, w_a: ParamVector, w_b: ParamVector, gammas: Sequence[float]
) -> list[float]:
    return [objective.loss(g * w_a + (1.0 - g) * w_b) for g in gammas]


def interpolate_1d(
    w_a: ParamVector,
    w_b: ParamVector,
    arch: ModelArch,
    dataset: Dataset,
    num_points: int = 31,
) -> list[InterpolationPoint]:
    """Loss and accuracy along gamma * w_a + (1 - gamma) * w_b."""
    if w_a.shape != w_b.shape:
        raise InvalidArgumentError(f"model shapes differ: {w_a.shape} vs {w_b.shape}")
    objective = BatchObjective(arch, dataset.as_batch())
    points: list[InterpolationPoint] = []
    for g in interpolation_gammas(num_points):
        w = g * w_a + (1.0 - g) * w_b
        points.append(InterpolationPoint(float(g), objective.loss(w), objective.accuracy(w)))
    return points


# ---------------------------------------------------------------------------
# 2D landscape
# ---------------------------------------------------------------------------


def random_directions(dim: int, seed: int) -> tuple[ParamVector, ParamVector]:
    rng = np.random.default_rng(seed)
    return rng.standard_normal(dim), rng.standard_normal(dim)


def filter_normalize(direction: ParamVector, w: ParamVector, arch: ModelArch) -> ParamVector:
    """Rescale each layer's weight and bias segment of ``direction`` to the norm of w's."""
    out = np.array(direction, dtype=np.float64, copy=True)
    for w_sl, b_sl in arch.layer_slices():
        for sl in (w_sl, b_sl):
            d_norm = float(np.linalg.norm(out[sl]))
            target = float(np.linalg.norm(w[sl]))
            out[sl] = out[sl] * (target / d_norm) if d_norm > 0 else 0.0
    return out


def grid_coords(resolution: int, extent: float = 1.0) -> np.ndarray:
    if resolution < 3:
        raise InvalidArgumentError(f"landscape resolution must be >= 3, got {resolution}")
    half = (resolution - 1) / 2.0
    return (np.arange(resolution, dtype=np.float64) - half) / half * extent


def scan_plane(
    objective: Objective, w: ParamVector, d1: ParamVector, d2: ParamVector, coords: np.ndarray
) -> np.ndarray:
    losses = np.empty((coords.size, coords.size))
    for i, x in enumerate(coords):
        for j, y in enumerate(coords):
            losses[i, j] = objective.loss(w + x * d1 + y * d2)
    return losses


def landscape_2d(
    w: ParamVector,
    arch: ModelArch,
    dataset: Dataset,
    resolution: int = 11,
    extent: float = 1.0,
    seed: int = 0,
) -> LandscapeGrid:
    """Loss surface around w; the raw directions depend on ``seed`` only."""
    raw1, raw2 = random_directions(arch.param_count, seed)
    d1 = filter_normalize(raw1, w, arch)
    d2 = filter_normalize(raw2, w, arch)
    coords = grid_coords(resolution, extent)
    losses = scan_plane(BatchObjective(arch, dataset.as_batch()), w, d1, d2, coords)
    return LandscapeGrid(d1=d1, d2=d2, coords=coords, losses=losses, extent=extent)


# ---------------------------------------------------------------------------
# Alignment and norms
# ---------------------------------------------------------------------------


def delta_eps(prev_pg: ParamVector, curr_pg: ParamVector, rho: float) -> float | None:
    """rho * || prev/||prev|| - curr/||curr|| ||, or None if either is zero."""
    n_prev = float(np.linalg.norm(prev_pg))
    n_curr = float(np.linalg.norm(curr_pg))
    if n_prev == 0.0 or n_curr == 0.0:
        return None
    return rho * float(np.linalg.norm(prev_pg / n_prev - curr_pg / n_curr))


def param_norm(w: ParamVector) -> float:
    return float(np.linalg.norm(w))


# ---------------------------------------------------------------------------
# Local / global eigenvalues
# ---------------------------------------------------------------------------


def local_global_eigs(
    local_models: Mapping[int, ParamVector],
    local_objectives: Mapping[int, Objective],
    global_objective: Objective,
    max_iter: int = 20,
    tol: float = 1e-3,
    seed: int = 0,
    dominant_classes: Mapping[int, int] | None = None,
) -> list[EigenRow]:
    """lambda1 of each client's model on its own data and on the global data."""
    rows: list[EigenRow] = []
    for k in sorted(local_models):
        w_k = local_models[k]
        local = objective_lambda1(local_objectives[k], w_k, max_iter, tol, seed)
        glob = objective_lambda1(global_objective, w_k, max_iter, tol, seed)
        rows.append(
            EigenRow(
                client=k,
                dominant_class=None if dominant_classes is None else dominant_classes.get(k),
                lambda1_local=local.lambda1,
                lambda1_global=glob.lambda1,
            )
        )
    return rows


def mlp_objectives(
    arch: ModelArch, shards: Mapping[int, Dataset], train: Dataset
) -> tuple[dict[int, BatchObjective], BatchObjective]:
    return (
        {k: BatchObjective(arch, shard.as_batch()) for k, shard in shards.items()},
        BatchObjective(arch, train.as_batch()),
    )


# ---------------------------------------------------------------------------
# CSV writers
# ---------------------------------------------------------------------------


def _write(df: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g")
    return path


def write_interpolation_csv(points: Sequence[InterpolationPoint], path: str | Path) -> Path:
    df = pd.DataFrame(
        {"gamma": [p.gamma for p in points], "loss": [p.loss for p in points], "acc": [p.acc for p in points]}
    )
    return _write(df, path)


def write_landscape_csv(grid: LandscapeGrid, path: str | Path) -> Path:
    xs, ys = np.meshgrid(grid.coords, grid.coords, indexing="ij")
    df = pd.DataFrame({"x": xs.ravel(), "y": ys.ravel(), "loss": grid.losses.ravel()})
    return _write(df, path)


def write_eigs_csv(rows: Sequence[EigenRow], path: str | Path) -> Path:
    df = pd.DataFrame(
        {
            "client": [r.client for r in rows],
            "dominant_class": pd.array([r.dominant_class for r in rows], dtype="Int64"),
            "lambda1_local": [r.lambda1_local for r in rows],
            "lambda1_global": [r.lambda1_global for r in rows],
        }
    )
    return _write(df, path)
