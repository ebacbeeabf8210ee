"""Training objectives with analytic gradients.

All losses are sums over cells (and over images when given a batch).
"""
from dataclasses import dataclass
from typing import Union
import numpy as np
from ..utils.errors import DivergenceError
from .gridcodec import PredictionGrid

EPSILON = 1e-7

GridLike = Union[PredictionGrid, np.ndarray]


@dataclass(frozen=True)
class LossResult:
    value: float
    gradient: np.ndarray


@dataclass(frozen=True)
class ConfidenceLossResult:
    value: float
    grad_p: np.ndarray
    grad_z: np.ndarray


def _values(grid: GridLike) -> np.ndarray:
    return grid.values if isinstance(grid, PredictionGrid) else np.asarray(grid, dtype=np.float64)


def loc_loss(pred: GridLike, target: GridLike, mask: np.ndarray) -> LossResult:
    """Masked squared L2 between predicted and target box coordinates.

    mask = p* trains on all foreground cells, l* on large-object cells and
    s* on small-object cells.
    """
    pred_v, target_v = _values(pred), _values(target)
    mask = np.asarray(mask, dtype=np.float64)
    if pred_v.shape != target_v.shape or pred_v.shape[:-1] != mask.shape or pred_v.shape[-1] != 4:
        raise ValueError(
            f"Shape mismatch: pred {pred_v.shape}, target {target_v.shape}, mask {mask.shape}"
        )
    diff = (pred_v - target_v) * mask[..., None]
    value = float(np.sum(diff * (pred_v - target_v)))
    return LossResult(value, 2.0 * diff)


def _xent(prob: np.ndarray, label: np.ndarray) -> tuple:
    """Elementwise binary cross-entropy and its derivative w.r.t. prob."""
    prob = np.clip(prob, EPSILON, 1.0 - EPSILON)
    value = -(label * np.log(prob) + (1.0 - label) * np.log(1.0 - prob))
    grad = -(label / prob - (1.0 - label) / (1.0 - prob))
    return value, grad


def confidence_loss(
    p: np.ndarray,
    z: np.ndarray,
    p_star: np.ndarray,
    z_star: np.ndarray,
    z_weights: np.ndarray,
) -> ConfidenceLossResult:
    """Objectness cross-entropy plus size cross-entropy on weighted foreground cells."""
    p, z = np.asarray(p, dtype=np.float64), np.asarray(z, dtype=np.float64)
    shapes = {a.shape for a in (p, z, np.asarray(p_star), np.asarray(z_star), np.asarray(z_weights))}
    if len(shapes) != 1:
        raise ValueError(f"Confidence loss inputs disagree in shape: {sorted(shapes)}")

    obj_value, grad_p = _xent(p, p_star)
    size_value, grad_z = _xent(z, z_star)
    size_mask = np.asarray(z_weights, dtype=np.float64) * p_star

    value = float(np.sum(obj_value) + np.sum(size_mask * size_value))
    if not np.isfinite(value):
        raise DivergenceError("Confidence loss is not finite")
    return ConfidenceLossResult(value, grad_p, size_mask * grad_z)
