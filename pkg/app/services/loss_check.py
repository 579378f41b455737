"""
Reference implementations of the reweighted cross-entropy edge loss and the
weighted combination of branch losses, with analytic gradients.
"""

import logging
from typing import Sequence, Tuple, Union

import numpy as np

from app.errors import ParamError, ShapeError
from app.models.schemas import BoundaryMap, LossBreakdown, ProbMap

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, ProbMap, BoundaryMap]


def _as_array(value: ArrayLike) -> np.ndarray:
    if isinstance(value, ProbMap):
        return np.asarray(value.values, dtype=np.float64)
    if isinstance(value, BoundaryMap):
        return np.asarray(value.bits, dtype=np.float64)
    return np.asarray(value, dtype=np.float64)


def balance_factors(gt: ArrayLike) -> Tuple[float, float]:
    """
    Edge and non-edge fractions of a binary label, over all channels jointly.

    Returns:
        (eta, eta_bar) with eta = |edges| / |pixels|
    """
    labels = _as_array(gt)
    if labels.size == 0:
        raise ParamError("Balance factors need a non-empty label")
    edges = int(np.count_nonzero(labels))
    eta = edges / labels.size
    return eta, (labels.size - edges) / labels.size


def _weighted_terms(f: np.ndarray, y: np.ndarray, eta, eta_bar, clip_eps: float):
    clipped = np.clip(f, clip_eps, 1.0 - clip_eps)
    value = -eta * (1.0 - y) * np.log(1.0 - clipped) - eta_bar * y * np.log(clipped)
    inside = (f >= clip_eps) & (f <= 1.0 - clip_eps)
    grad = np.where(inside, eta * (1.0 - y) / (1.0 - clipped) - eta_bar * y / clipped, 0.0)
    return value, grad


def reweighted_edge_loss(
    pred: ArrayLike, gt: ArrayLike, clip_eps: float = 1e-7, per_channel: bool = False
) -> LossBreakdown:
    """
    Reweighted cross-entropy between edge probabilities and a binary label.

    The same form serves semantic edges (K channels) and instance edges
    (one channel). Non-edge pixels are weighted by eta and edge pixels by
    eta_bar; probabilities are clipped to [clip_eps, 1 - clip_eps].

    Args:
        pred: Edge probabilities
        gt: Binary label of the same shape
        clip_eps: Clipping epsilon in (0, 0.5)
        per_channel: Compute balance factors per channel (first axis) instead of jointly

    Returns:
        LossBreakdown with the summed loss and its gradient w.r.t. pred
    """
    f = _as_array(pred)
    y = (_as_array(gt) != 0).astype(np.float64)
    if f.shape != y.shape:
        raise ShapeError(f"Prediction {f.shape} and label {y.shape} differ")
    if not 0.0 < clip_eps < 0.5:
        raise ParamError(f"clip_eps {clip_eps} outside (0, 0.5)")

    eta, eta_bar = balance_factors(y)
    channel_eta = None
    if per_channel:
        if f.ndim < 2:
            raise ShapeError("Per-channel balance needs a channel axis")
        factors = [balance_factors(channel) for channel in y]
        channel_eta = [e for e, _ in factors]
        shape = (len(factors),) + (1,) * (f.ndim - 1)
        weights = np.array([e for e, _ in factors]).reshape(shape)
        bar_weights = np.array([b for _, b in factors]).reshape(shape)
        value, grad = _weighted_terms(f, y, weights, bar_weights, clip_eps)
    else:
        value, grad = _weighted_terms(f, y, eta, eta_bar, clip_eps)

    return LossBreakdown(
        eta=eta,
        eta_bar=eta_bar,
        value=float(value.sum()),
        gradient=grad,
        channel_eta=channel_eta,
    )


def total_loss(l_s: float, l_o: float, l_i: float, alphas: Sequence[float]) -> float:
    """
    Weighted sum a1 * L_S + a2 * L_O + a3 * L_I of the branch losses.
    """
    if len(alphas) != 3:
        raise ParamError(f"Expected three weights, got {len(alphas)}")
    values = np.array([l_s, l_o, l_i], dtype=np.float64)
    weights = np.array(alphas, dtype=np.float64)
    if not (np.isfinite(values).all() and np.isfinite(weights).all()):
        raise ParamError("Losses and weights must be finite")
    if (weights < 0).any():
        raise ParamError(f"Weights must be non-negative, got {tuple(alphas)}")
    return float(weights[0] * l_s + weights[1] * l_o + weights[2] * l_i)
