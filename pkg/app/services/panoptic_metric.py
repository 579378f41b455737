"""
Panoptic dual F-measure: F2 = F_edge x F_object per category, plus report means.
"""

import logging
from typing import List, Optional, Sequence, Union

import numpy as np

from app.errors import EmptyReportError, InvariantViolation, ParamError, UndefinedError
from app.models.schemas import (
    Category,
    CategoryKind,
    CategoryScore,
    CategorySet,
    EvalConfig,
    MeanScores,
    PrAccumulator,
    Report,
    SkippedCategory,
)
from app.services.boundary_eval import GT_TOTAL, mf_ods

logger = logging.getLogger(__name__)

Outcome = Union[CategoryScore, SkippedCategory]


def f_object(tp: int, fp: int, fn: int) -> float:
    """
    Object recognition quality TP / (TP + FP/2 + FN/2).

    Raises:
        UndefinedError: when all three counts are zero
    """
    if min(tp, fp, fn) < 0:
        raise ParamError(f"Counts must be non-negative, got ({tp}, {fp}, {fn})")
    if tp == 0 and fp == 0 and fn == 0:
        raise UndefinedError("F_object is undefined without any instance")
    return tp / (tp + 0.5 * fp + 0.5 * fn)


def compose_f2(f_edge: float, f_obj: float) -> float:
    return f_edge * f_obj


def _skip(category: Category, reason: str) -> SkippedCategory:
    logger.warning(f"Skipping category {category.id} ({category.name}): {reason}")
    return SkippedCategory(category=category.id, name=category.name, kind=category.kind, reason=reason)


def f2_stuff(category: Category, acc: PrAccumulator) -> Outcome:
    """
    Score a stuff category: F_object is 1, so F2 equals F_edge.

    Args:
        category: Stuff category
        acc: Dataset accumulator of the category's semantic channel

    Returns:
        CategoryScore, or SkippedCategory when the dataset has no edges of it
    """
    if category.kind != CategoryKind.STUFF:
        raise ParamError(f"Category {category.id} is not a stuff category")
    if acc.images == 0 or int(acc.counts[0, GT_TOTAL]) == 0:
        return _skip(category, "no ground-truth edge pixels in the dataset")
    f_edge, theta = mf_ods(acc)
    return CategoryScore(
        category=category.id,
        name=category.name,
        kind=category.kind,
        f_edge=f_edge,
        f_object=1.0,
        f2=compose_f2(f_edge, 1.0),
        theta_star=theta,
        support=acc.images,
    )


def f2_instance(
    category: Category,
    tp: int,
    fp: int,
    fn: int,
    acc: PrAccumulator,
    pair_mfs: Optional[Sequence[float]] = None,
    mode: str = "dataset",
) -> Outcome:
    """
    Score an instance category from its matching totals.

    Args:
        category: Instance category
        tp, fp, fn: Matching totals over the dataset
        acc: Accumulator summed over every TP pair of the category
        pair_mfs: Per-pair maximum F of the TP pairs (used by "per-pair" mode)
        mode: "dataset" for one threshold per category, "per-pair" for the mean pair maximum

    Returns:
        CategoryScore, or SkippedCategory when there are neither ground truths nor predictions
    """
    if category.kind != CategoryKind.INSTANCE:
        raise ParamError(f"Category {category.id} is not an instance category")
    if mode not in ("dataset", "per-pair"):
        raise ParamError(f"Unknown instance F_edge mode {mode}")
    if tp + fp + fn == 0:
        return _skip(category, "no ground-truth or predicted instances")

    obj = f_object(tp, fp, fn)
    theta = acc.grid[0]
    if tp == 0:
        f_edge = 0.0
    elif mode == "per-pair":
        f_edge = float(np.mean(pair_mfs)) if pair_mfs else 0.0
    else:
        f_edge, theta = mf_ods(acc)
    return CategoryScore(
        category=category.id,
        name=category.name,
        kind=category.kind,
        f_edge=f_edge,
        f_object=obj,
        f2=compose_f2(f_edge, obj),
        theta_star=theta,
        support=tp + fn,
    )


def _mean(scores: List[CategoryScore]) -> Optional[MeanScores]:
    if not scores:
        return None
    return MeanScores(
        f_edge=float(np.mean([s.f_edge for s in scores])),
        f_object=float(np.mean([s.f_object for s in scores])),
        f2=float(np.mean([s.f2 for s in scores])),
        count=len(scores),
    )


def aggregate(outcomes: Sequence[Outcome], cats: CategorySet, config: EvalConfig) -> Report:
    """
    Collect per-category outcomes into a report ordered like the category set.

    Raises:
        EmptyReportError: when no category could be evaluated
    """
    order = {category_id: index for index, category_id in enumerate(cats.ids)}
    ordered = sorted(outcomes, key=lambda o: order[o.category])
    scores = [o for o in ordered if isinstance(o, CategoryScore)]
    skipped = [o for o in ordered if isinstance(o, SkippedCategory)]
    if not scores:
        raise EmptyReportError("No category could be evaluated")

    for score in scores:
        if score.f2 != compose_f2(score.f_edge, score.f_object):
            raise InvariantViolation(f"Inconsistent F2 for category {score.category}")

    report = Report(
        categories=scores,
        skipped=skipped,
        stuff_mean=_mean([s for s in scores if s.kind == CategoryKind.STUFF]),
        instance_mean=_mean([s for s in scores if s.kind == CategoryKind.INSTANCE]),
        overall_mean=_mean(scores),
        config=config,
    )
    logger.info(
        f"Report: {len(scores)} categories evaluated, {len(skipped)} skipped, "
        f"overall F2 {report.overall_mean.f2:.4f}"
    )
    return report
