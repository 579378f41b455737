"""
Coarse-to-fine matching of predicted instances to ground-truth instances.

Coarse matching keeps, for every ground truth, up to t predictions whose box
IoU exceeds iou_min. Fine matching scores each candidate pair by its best
edge F-measure over the threshold grid and assigns pairs greedily in
descending score, consuming each ground truth and prediction at most once.
"""

import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np

from app.models.schemas import Box, CoarseMatch, GtInstance, MatchResult, PredInstance, TpPair
from app.services.boundary_eval import pair_max_f, pr_counts
from app.services.raster import embed_array

logger = logging.getLogger(__name__)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two half-open boxes."""
    ix = min(a.x1, b.x1) - max(a.x0, b.x0)
    iy = min(a.y1, b.y1) - max(a.y0, b.y0)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def coarse_match(
    gts: Sequence[GtInstance],
    preds: Sequence[PredInstance],
    iou_min: float = 0.5,
    t: int = 2,
) -> CoarseMatch:
    """
    IoU-gated top-t candidate selection.

    Candidates of a ground truth are ranked by IoU, then score, then input
    order. Ground truths without any candidate are immediate false negatives.

    Args:
        gts: Ground-truth instances of one category
        preds: Predicted instances of the same category
        iou_min: Strict lower bound on box IoU
        t: Maximum candidates per ground truth

    Returns:
        CoarseMatch with candidate prediction indices per ground-truth index
    """
    candidates: Dict[int, List[int]] = {}
    fn: List[int] = []
    for gi, gt in enumerate(gts):
        scored = []
        for pi, pred in enumerate(preds):
            overlap = iou(gt.box, pred.box)
            if overlap > iou_min:
                scored.append((-overlap, -pred.score, pi))
        scored.sort()
        chosen = [pi for _, _, pi in scored[:t]]
        if chosen:
            candidates[gi] = chosen
        else:
            fn.append(gi)
    return CoarseMatch(candidates=candidates, fn=fn)


def pair_counts(
    gt: GtInstance, pred: PredInstance, grid: Sequence[float], tol: float
) -> np.ndarray:
    """Per-threshold counts of a prediction embedded on the ground truth's canvas."""
    height, width = gt.edges.bits.shape
    canvas = embed_array(pred.edges.values, pred.box, width, height)[0]
    return pr_counts(canvas, gt.edges.bits, grid, tol)


def fine_match(
    gts: Sequence[GtInstance],
    preds: Sequence[PredInstance],
    coarse: CoarseMatch,
    grid: Sequence[float],
    tol: float,
) -> MatchResult:
    """
    Resolve coarse candidates into TP pairs, false positives and false negatives.

    Pairs are taken in descending pair F (ties: higher IoU, then ground-truth
    order, then candidate rank) while both sides are still free.

    Returns:
        MatchResult holding indices into gts and preds
    """
    scored: List[Tuple[float, float, int, int, int, np.ndarray]] = []
    for gi in sorted(coarse.candidates):
        for rank, pi in enumerate(coarse.candidates[gi]):
            counts = pair_counts(gts[gi], preds[pi], grid, tol)
            pair_mf = pair_max_f(counts)
            overlap = iou(gts[gi].box, preds[pi].box)
            scored.append((pair_mf, overlap, gi, rank, pi, counts))

    scored.sort(key=lambda item: (-item[0], -item[1], item[2], item[3]))

    used_gt, used_pred = set(), set()
    tp_pairs = []
    for pair_mf, overlap, gi, _, pi, counts in scored:
        if gi in used_gt or pi in used_pred:
            continue
        used_gt.add(gi)
        used_pred.add(pi)
        tp_pairs.append(TpPair(gt=gi, pred=pi, pair_mf=pair_mf, iou=overlap, counts=counts))

    tp_pairs.sort(key=lambda pair: pair.gt)
    fp = [pi for pi in range(len(preds)) if pi not in used_pred]
    fn = [gi for gi in range(len(gts)) if gi not in used_gt]
    return MatchResult(tp_pairs=tp_pairs, fp=fp, fn=fn)


def match_instances(
    gts: Sequence[GtInstance],
    preds: Sequence[PredInstance],
    grid: Sequence[float],
    tol: float,
    iou_min: float = 0.5,
    t: int = 2,
) -> MatchResult:
    """Coarse then fine matching for one category of one image."""
    coarse = coarse_match(gts, preds, iou_min, t)
    result = fine_match(gts, preds, coarse, grid, tol)
    logger.debug(
        f"Matched {len(gts)} gts / {len(preds)} preds: "
        f"{len(result.tp_pairs)} TP, {len(result.fp)} FP, {len(result.fn)} FN"
    )
    return result
