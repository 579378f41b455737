"""
Boundary correspondence and maximum F-measure at optimal dataset scale.

A predicted edge pixel is matched when a ground-truth edge pixel lies within
Euclidean distance tol, and vice versa. Distances are compared as integer
squared offsets taken from an exact feature transform, so results agree with
an all-pairs scan exactly.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import distance_transform_edt, maximum_filter

from app.errors import ParamError, ShapeError
from app.models.schemas import BoundaryMap, MatchCounts, PrAccumulator, ProbMap, threshold_grid
from app.services.raster import disk_footprint

logger = logging.getLogger(__name__)

PRED_TOTAL, PRED_MATCHED, GT_TOTAL, GT_MATCHED = range(4)


def default_grid(count: int = 99) -> Tuple[float, ...]:
    return threshold_grid(count)


def resolve_tolerance(setting: float, width: int, height: int) -> float:
    """
    Matching tolerance in pixels for an image.

    Settings below 1 are a fraction of the image diagonal, rounded to the
    nearest pixel with a minimum of 1; larger settings are absolute pixels.
    """
    if setting < 0:
        raise ParamError(f"Tolerance {setting} must be non-negative")
    if setting >= 1:
        return float(setting)
    diagonal = float(np.hypot(width, height))
    return float(max(1, int(np.floor(setting * diagonal + 0.5))))


def within_tolerance(target: np.ndarray, tol: float) -> np.ndarray:
    """Pixels whose nearest set pixel of target is within Euclidean distance tol."""
    if not target.any():
        return np.zeros(target.shape, dtype=bool)
    nearest = distance_transform_edt(~target, return_distances=False, return_indices=True)
    rows, cols = np.indices(target.shape)
    dy = nearest[0].astype(np.int64) - rows
    dx = nearest[1].astype(np.int64) - cols
    return dy * dy + dx * dx <= tol * tol


def _apply_ignore(ignore: Optional[np.ndarray], *maps: np.ndarray):
    if ignore is None:
        return maps
    keep = ~ignore
    return tuple(m & keep if m.dtype == bool else np.where(keep, m, 0).astype(m.dtype) for m in maps)


def correspond(
    pred: BoundaryMap, gt: BoundaryMap, tol: float, ignore: Optional[np.ndarray] = None
) -> MatchCounts:
    """
    Match binary predicted edges against ground-truth edges.

    Args:
        pred: Binarized prediction
        gt: Ground-truth edges
        tol: Matching distance in pixels
        ignore: Optional boolean mask of pixels excluded from all counts

    Returns:
        MatchCounts for the pair
    """
    if pred.bits.shape != gt.bits.shape:
        raise ShapeError(f"Prediction {pred.bits.shape} and ground truth {gt.bits.shape} differ")
    if tol < 0:
        raise ParamError(f"Tolerance {tol} must be non-negative")
    if ignore is not None and ignore.shape != gt.bits.shape:
        raise ShapeError("Ignore mask does not match the edge maps")
    p, g = _apply_ignore(ignore, pred.bits, gt.bits)

    return MatchCounts(
        pred_total=int(p.sum()),
        pred_matched=int((p & within_tolerance(g, tol)).sum()),
        gt_total=int(g.sum()),
        gt_matched=int((g & within_tolerance(p, tol)).sum()),
    )


def _count_at_least(values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    ordered = np.sort(values, axis=None)
    return ordered.size - np.searchsorted(ordered, thresholds, side="left")


def pr_counts(
    prob: np.ndarray,
    gt: np.ndarray,
    grid: Sequence[float],
    tol: float,
    ignore: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Correspondence counts of one probability map at every grid threshold.

    Equivalent to calling correspond(binarize(prob, theta), gt, tol) for each
    theta: a ground-truth pixel is matched at theta iff the largest prediction
    within tol of it is >= theta.

    Args:
        prob: (H, W) probabilities
        gt: (H, W) boolean ground truth
        grid: Increasing thresholds
        tol: Matching distance in pixels
        ignore: Optional boolean mask of excluded pixels

    Returns:
        int64 array of shape (len(grid), 4)
    """
    if prob.shape != gt.shape:
        raise ShapeError(f"Prediction {prob.shape} and ground truth {gt.shape} differ")
    prob = np.asarray(prob, dtype=np.float32)
    gt, prob = _apply_ignore(ignore, gt.astype(bool), prob)
    thresholds = np.asarray(grid, dtype=prob.dtype)

    counts = np.zeros((len(thresholds), 4), dtype=np.int64)
    counts[:, PRED_TOTAL] = _count_at_least(prob, thresholds)
    counts[:, GT_TOTAL] = int(gt.sum())
    if counts[0, GT_TOTAL]:
        counts[:, PRED_MATCHED] = _count_at_least(prob[within_tolerance(gt, tol)], thresholds)
        reach = maximum_filter(prob, footprint=disk_footprint(tol), mode="constant", cval=0.0)
        counts[:, GT_MATCHED] = _count_at_least(reach[gt], thresholds)
    return counts


def empty_accumulator(grid: Sequence[float]) -> PrAccumulator:
    return PrAccumulator(grid=tuple(grid), counts=np.zeros((len(grid), 4), dtype=np.int64))


def add_counts(acc: PrAccumulator, counts: np.ndarray, images: int = 1) -> PrAccumulator:
    """New accumulator holding acc plus counts."""
    return PrAccumulator(grid=acc.grid, counts=acc.counts + counts, images=acc.images + images)


def accumulate_pr(
    pred: ProbMap,
    gt: BoundaryMap,
    grid: Sequence[float],
    tol: float,
    acc: PrAccumulator,
    ignore: Optional[np.ndarray] = None,
) -> PrAccumulator:
    """
    Add one image's per-threshold counts to an accumulator.

    Images without ground-truth edges leave the accumulator unchanged, since
    their recall is undefined.

    Returns:
        Updated accumulator (acc itself is not modified)
    """
    if tuple(grid) != acc.grid:
        raise ParamError("Threshold grid does not match the accumulator grid")
    if pred.channels != 1:
        raise ShapeError(f"accumulate_pr expects one channel, got {pred.channels}")
    counts = pr_counts(pred.values[0], gt.bits, grid, tol, ignore)
    if counts[0, GT_TOTAL] == 0:
        return acc
    return add_counts(acc, counts)


def merge_accumulators(*accs: PrAccumulator) -> PrAccumulator:
    """Sum accumulators sharing one grid; integer sums make the order irrelevant."""
    if not accs:
        raise ParamError("Nothing to merge")
    grid = accs[0].grid
    if any(acc.grid != grid for acc in accs):
        raise ParamError("Cannot merge accumulators with different grids")
    total = np.sum([acc.counts for acc in accs], axis=0)
    return PrAccumulator(grid=grid, counts=total, images=sum(acc.images for acc in accs))


def f_measure_curve(counts: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Precision, recall and F per threshold.

    Undefined precision (no predictions) and undefined recall count as 0; F is
    0 when P + R = 0.
    """
    counts = np.asarray(counts, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(counts[:, PRED_TOTAL] > 0, counts[:, PRED_MATCHED] / counts[:, PRED_TOTAL], 0.0)
        recall = np.where(counts[:, GT_TOTAL] > 0, counts[:, GT_MATCHED] / counts[:, GT_TOTAL], 0.0)
        total = precision + recall
        f = np.where(total > 0, 2.0 * precision * recall / total, 0.0)
    return precision, recall, f


def mf_ods(acc: PrAccumulator) -> Tuple[float, float]:
    """
    Maximum F-measure over the grid and its threshold.

    Returns:
        (F, theta_star); the lowest threshold wins ties
    """
    _, _, f = f_measure_curve(acc.counts)
    best = int(np.argmax(f))
    return float(f[best]), float(acc.grid[best])


def pair_max_f(counts: np.ndarray) -> float:
    """Best F over the grid for a single pair's counts."""
    _, _, f = f_measure_curve(counts)
    return float(f.max())
