#!/usr/bin/env python3
"""
Panoptic edge evaluation toolkit.

Usage:
    python main.py convert-gt --seg-root DIR --out-root DIR [--categories FILE] [--radius R]
    python main.py eval --gt MANIFEST --pred MANIFEST --out-json FILE [--out-csv FILE] [--pr-dump DIR]
    python main.py perturb --gt MANIFEST --out-root DIR [--spec FILE | --dilate R --shift DX DY ...]
    python main.py loss --pred FILE --gt FILE | --components LS LO LI
    python main.py report --json FILE [--csv FILE]
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional

import numpy as np

import config
from app.errors import ParamError, PedError
from app.models.schemas import EvalConfig, PredictedInstanceEntry, PredictionImage, PredictionManifest
from app.services import io_formats
from app.services.evaluation import evaluate_dataset, pr_curves
from app.services.gt_convert import (
    convert_dataset,
    discover_images,
    rank_categories_by_edge_density,
    screen_categories,
)
from app.services.loss_check import reweighted_edge_loss, total_loss
from app.services.perturb import perturb_instances, perturb_semantic, perturb_spec_from_flags

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_matching(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tolerance", type=float, default=config.TOLERANCE,
                        help="Match distance: fraction of the diagonal if < 1, else pixels")
    parser.add_argument("--thresholds", type=int, default=config.THRESHOLDS, help="Threshold grid size")
    parser.add_argument("--iou-min", type=float, default=config.IOU_MIN)
    parser.add_argument("--top-t", type=int, default=config.TOP_T)


def _add_strictness(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--strict", dest="strict", action="store_true", default=config.STRICT)
    parser.add_argument("--lenient", dest="strict", action="store_false",
                        help="Clamp out-of-range probabilities instead of failing")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(description="Panoptic edge detection evaluation toolkit")
    parser.add_argument("--log-level", default=config.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    convert = sub.add_parser("convert-gt", help="Convert segmentation labels to boundary ground truth")
    convert.add_argument("--seg-root", required=True)
    convert.add_argument("--out-root", required=True)
    convert.add_argument("--categories", default="cityscapes", help="Preset name or category JSON file")
    convert.add_argument("--radius", type=int, default=config.BOUNDARY_RADIUS)
    convert.add_argument("--jobs", type=int, default=config.JOBS)
    convert.add_argument("--keep-ids", type=int, nargs="+", help="Evaluate only these category ids")
    convert.add_argument("--screen-top", type=int, nargs="?", const=config.SCREEN_TOP,
                         help="Screen categories among the densest N (default N from config)")
    convert.add_argument("--screen-per-kind", type=int, default=config.SCREEN_PER_KIND)

    evaluate = sub.add_parser("eval", help="Evaluate predictions against converted ground truth")
    _add_matching(evaluate)
    _add_strictness(evaluate)
    evaluate.add_argument("--gt", required=True, help="Dataset manifest from convert-gt")
    evaluate.add_argument("--pred", required=True, help="Prediction manifest")
    evaluate.add_argument("--out-json", required=True)
    evaluate.add_argument("--out-csv")
    evaluate.add_argument("--pr-dump", help="Directory for per-category PR curves")
    evaluate.add_argument("--jobs", type=int, default=config.JOBS)
    evaluate.add_argument("--score-min", type=float, default=config.SCORE_MIN)
    evaluate.add_argument("--instance-fedge", choices=["dataset", "per-pair"], default=config.INSTANCE_FEDGE)
    evaluate.add_argument("--quantized", action="store_true", help="Read 8-bit PNG probabilities")

    perturb = sub.add_parser("perturb", help="Write degraded predictions derived from ground truth")
    _add_strictness(perturb)
    perturb.add_argument("--gt", required=True, help="Dataset manifest from convert-gt")
    perturb.add_argument("--out-root", required=True)
    perturb.add_argument("--seed", type=int, default=config.SEED)
    perturb.add_argument("--jobs", type=int, default=config.JOBS)
    perturb.add_argument("--spec", help="Perturbation spec JSON")
    perturb.add_argument("--dilate", type=int)
    perturb.add_argument("--shift", type=int, nargs=2, metavar=("DX", "DY"))
    perturb.add_argument("--drop", type=float)
    perturb.add_argument("--jitter", type=int)
    perturb.add_argument("--flip", type=float)
    perturb.add_argument("--score", type=float)

    loss = sub.add_parser("loss", help="Spot-check the reweighted edge loss")
    loss.add_argument("--pred", help="Prediction PEDP file")
    loss.add_argument("--gt", help="Binary ground-truth PEDP file")
    loss.add_argument("--clip-eps", type=float, default=config.CLIP_EPS)
    loss.add_argument("--per-channel", action="store_true")
    loss.add_argument("--components", type=float, nargs=3, metavar=("L_S", "L_O", "L_I"))
    loss.add_argument("--alphas", type=float, nargs=3, default=list(config.LOSS_ALPHAS))

    report = sub.add_parser("report", help="Render a saved JSON report")
    report.add_argument("--json", required=True)
    report.add_argument("--csv")
    return parser


def _eval_config(args) -> EvalConfig:
    return EvalConfig(
        tolerance=args.tolerance,
        thresholds=args.thresholds,
        top_t=args.top_t,
        iou_min=args.iou_min,
        score_min=args.score_min,
        instance_fedge=args.instance_fedge,
    )


def run_convert(args) -> int:
    cats = io_formats.load_category_set(args.categories)
    keep_ids = args.keep_ids
    if args.screen_top:
        labels = (
            io_formats.read_label_png(os.path.join(args.seg_root, config.FILE_LAYOUT["source"]["label"].format(image_id=i)))
            for i in discover_images(args.seg_root)
        )
        ranked = rank_categories_by_edge_density(labels, cats, args.radius)
        keep_ids = screen_categories(ranked, cats, args.screen_top, args.screen_per_kind)
        logger.info(f"Screened categories: {keep_ids}")
    manifest = convert_dataset(args.seg_root, args.out_root, cats, args.radius, keep_ids, args.jobs)
    return 2 if manifest.failures else 0


def run_eval(args) -> int:
    report, accumulators = evaluate_dataset(
        args.gt, args.pred, _eval_config(args), jobs=args.jobs, quantized=args.quantized, strict=args.strict
    )
    io_formats.write_report(report, args.out_json, args.out_csv)
    if args.pr_dump:
        io_formats.write_pr_dump(args.pr_dump, pr_curves(accumulators))
    print(io_formats.report_table(report).to_string(index=False))
    return 0


def _perturb_image(job) -> PredictionImage:
    gt_root, out_root, image, spec, stream, strict = job
    layout = config.FILE_LAYOUT["predicted"]
    scene, _ = io_formats.load_gt_scene(gt_root, image, strict=strict)
    semantic = perturb_semantic(scene.semantic, spec, stream)
    preds = perturb_instances(scene.instances, spec, stream)

    semantic_name = layout["semantic"].format(image_id=image.id)
    io_formats.write_prob_map(os.path.join(out_root, semantic_name), semantic)
    entries = []
    for index, pred in enumerate(preds):
        name = layout["instance"].format(image_id=image.id, index=index)
        io_formats.write_prob_map(os.path.join(out_root, name), pred.edges)
        entries.append(
            PredictedInstanceEntry(category=pred.category, score=pred.score, box=pred.box.as_list(), edges=name)
        )
    logger.info(f"Perturbed {image.id}: {len(preds)} of {len(scene.instances)} instances kept")
    return PredictionImage(semantic=semantic_name, instances=entries)


def run_perturb(args) -> int:
    if args.spec:
        spec = io_formats.load_perturb_spec(args.spec)
    else:
        spec = perturb_spec_from_flags(
            args.seed, args.dilate, args.shift, args.drop, args.jitter, args.flip, args.score
        )
    manifest = io_formats.load_dataset_manifest(args.gt)
    gt_root = os.path.dirname(os.path.abspath(args.gt))
    images = sorted(manifest.images, key=lambda i: i.id)
    # The random stream of an image is its ordinal, whatever the worker count
    jobs = [(gt_root, args.out_root, image, spec, stream, args.strict) for stream, image in enumerate(images)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_perturb_image, jobs))
    else:
        results = [_perturb_image(job) for job in jobs]

    predictions = PredictionManifest(images={image.id: result for image, result in zip(images, results)})
    manifest_name = config.FILE_LAYOUT["predicted"]["manifest"]
    io_formats.write_json(os.path.join(args.out_root, manifest_name), predictions.model_dump(mode="json"))
    return 0


def run_loss(args) -> int:
    if args.components:
        value = total_loss(*args.components, alphas=args.alphas)
        print(f"total_loss={value:.10g}")
        return 0
    if not (args.pred and args.gt):
        raise ParamError("loss needs --pred and --gt, or --components")
    pred = io_formats.read_prob_map(args.pred)
    gt = io_formats.read_prob_map(args.gt)
    breakdown = reweighted_edge_loss(pred, gt.values > 0.5, args.clip_eps, args.per_channel)
    print(f"eta={breakdown.eta:.10g} eta_bar={breakdown.eta_bar:.10g} loss={breakdown.value:.10g}")
    print(f"gradient_l2={float(np.linalg.norm(breakdown.gradient)):.10g}")
    return 0


def run_report(args) -> int:
    report = io_formats.read_report(args.json)
    if args.csv:
        io_formats.write_report(report, None, args.csv)
    print(io_formats.report_table(report).to_string(index=False))
    return 0


COMMANDS = {
    "convert-gt": run_convert,
    "eval": run_eval,
    "perturb": run_perturb,
    "loss": run_loss,
    "report": run_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stdout)],
    )
    try:
        return COMMANDS[args.command](args)
    except PedError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Internal error: {e}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
