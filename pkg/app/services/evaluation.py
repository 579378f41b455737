"""
Dataset-level panoptic edge evaluation.

Each image is scored independently (stuff channel counts, instance matching
tallies); the per-image results are then reduced in manifest order, so the
report does not depend on how the images were scheduled.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.models.schemas import (
    CategorySet,
    EvalConfig,
    GtScene,
    ImageEvaluation,
    InstanceTally,
    PrAccumulator,
    PredInstance,
    ProbMap,
    Report,
)
from app.services import io_formats
from app.services.boundary_eval import (
    GT_TOTAL,
    add_counts,
    empty_accumulator,
    f_measure_curve,
    pr_counts,
    resolve_tolerance,
)
from app.services.instance_match import match_instances
from app.services.panoptic_metric import aggregate, f2_instance, f2_stuff

logger = logging.getLogger(__name__)


def evaluate_scene(
    image_id: str,
    scene: GtScene,
    semantic_pred: ProbMap,
    preds: Sequence[PredInstance],
    cats: CategorySet,
    config: EvalConfig,
    ignore: Optional[np.ndarray] = None,
) -> ImageEvaluation:
    """
    Score one image against its converted ground truth.

    Args:
        image_id: Image identifier
        scene: Ground truth (semantic channels ordered like cats)
        semantic_pred: Predicted per-category edge probabilities
        preds: Predicted instances of all categories
        cats: Category set
        config: Evaluation settings
        ignore: Optional mask of pixels excluded from semantic counts

    Returns:
        ImageEvaluation with this image's contributions
    """
    height, width = scene.semantic.height, scene.semantic.width
    tol = resolve_tolerance(config.tolerance, width, height)
    grid = config.grid

    stuff = {}
    for category_id in cats.stuff_ids:
        k = cats.index_of(category_id)
        counts = pr_counts(semantic_pred.values[k], scene.semantic.values[k] > 0.5, grid, tol, ignore)
        # Recall is undefined without ground-truth edges; such images do not contribute
        if counts[0, GT_TOTAL] > 0:
            stuff[category_id] = counts

    kept = [p for p in preds if p.score >= config.score_min]
    instance_ids = set(cats.instance_ids)
    stray = [p for p in kept if p.category not in instance_ids]
    if stray:
        logger.warning(
            f"{image_id}: skipping {len(stray)} predicted instance(s) of non-instance categories "
            f"{sorted({p.category for p in stray})}"
        )
    instance = {}
    for category_id in cats.instance_ids:
        gts = [g for g in scene.instances if g.category == category_id]
        cands = [p for p in kept if p.category == category_id]
        result = match_instances(gts, cands, grid, tol, config.iou_min, config.top_t)
        counts = np.zeros((len(grid), 4), dtype=np.int64)
        for pair in result.tp_pairs:
            counts += pair.counts
        instance[category_id] = InstanceTally(
            tp=len(result.tp_pairs),
            fp=len(result.fp),
            fn=len(result.fn),
            counts=counts,
            pair_mfs=[pair.pair_mf for pair in result.tp_pairs],
        )
    return ImageEvaluation(id=image_id, stuff=stuff, instance=instance)


def summarize(
    evaluations: Sequence[ImageEvaluation], cats: CategorySet, config: EvalConfig
) -> Tuple[Report, Dict[int, PrAccumulator]]:
    """
    Reduce per-image evaluations into the report.

    Returns:
        (Report, accumulator per evaluated category id)
    """
    grid = config.grid
    outcomes = []
    accumulators = {}
    for category in cats.categories:
        acc = empty_accumulator(grid)
        if category.id in cats.stuff_ids:
            for evaluation in evaluations:
                if category.id in evaluation.stuff:
                    acc = add_counts(acc, evaluation.stuff[category.id])
            outcomes.append(f2_stuff(category, acc))
        else:
            tp = fp = fn = 0
            pair_mfs: List[float] = []
            for evaluation in evaluations:
                tally = evaluation.instance.get(category.id)
                if tally is None:
                    continue
                tp, fp, fn = tp + tally.tp, fp + tally.fp, fn + tally.fn
                pair_mfs.extend(tally.pair_mfs)
                if tally.tp:
                    acc = add_counts(acc, tally.counts, images=tally.tp)
            outcomes.append(f2_instance(category, tp, fp, fn, acc, pair_mfs, config.instance_fedge))
        accumulators[category.id] = acc
    return aggregate(outcomes, cats, config), accumulators


def pr_curves(accumulators: Dict[int, PrAccumulator]) -> Dict[int, pd.DataFrame]:
    """Precision / recall / F per threshold for every accumulator with data."""
    curves = {}
    for category_id, acc in accumulators.items():
        if acc.images == 0:
            continue
        precision, recall, f = f_measure_curve(acc.counts)
        curves[category_id] = pd.DataFrame(
            {"threshold": list(acc.grid), "precision": precision, "recall": recall, "f": f}
        )
    return curves


def _evaluate_job(args) -> ImageEvaluation:
    gt_root, image, pred_root, pred_manifest, cats, config, quantized, strict = args
    scene, ignore = io_formats.load_gt_scene(gt_root, image, strict=strict)
    semantic, preds = io_formats.load_predictions(
        pred_root, image.id, pred_manifest, len(cats), image.width, image.height,
        quantized=quantized, strict=strict,
    )
    logger.info(f"Evaluating {image.id}: {len(scene.instances)} gt instances, {len(preds)} predictions")
    return evaluate_scene(image.id, scene, semantic, preds, cats, config, ignore)


def evaluate_dataset(
    gt_manifest_path: str,
    pred_manifest_path: str,
    config: EvalConfig,
    jobs: int = 1,
    quantized: bool = False,
    strict: bool = True,
) -> Tuple[Report, Dict[int, PrAccumulator]]:
    """
    Evaluate a prediction manifest against a converted dataset manifest.

    Args:
        gt_manifest_path: manifest.json written by convert_dataset
        pred_manifest_path: Prediction manifest
        config: Evaluation settings (radius is filled from the dataset manifest)
        jobs: Worker processes
        quantized: Read 8-bit PNG probabilities instead of PEDP files
        strict: Reject out-of-range probabilities instead of clamping

    Returns:
        (Report, accumulator per category id)
    """
    manifest = io_formats.load_dataset_manifest(gt_manifest_path)
    predictions = io_formats.load_prediction_manifest(pred_manifest_path)
    config = config.model_copy(update={"radius": manifest.radius})
    gt_root = os.path.dirname(os.path.abspath(gt_manifest_path))
    pred_root = os.path.dirname(os.path.abspath(pred_manifest_path))
    images = sorted(manifest.images, key=lambda image: image.id)
    logger.info(f"Evaluating {len(images)} images with {jobs} job(s)")

    work = [
        (gt_root, image, pred_root, predictions, manifest.categories, config, quantized, strict)
        for image in images
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            evaluations = list(pool.map(_evaluate_job, work))
    else:
        evaluations = [_evaluate_job(item) for item in work]
    return summarize(evaluations, manifest.categories, config)
