"""
Seeded degradations of ground truth into predictions with known metric effects.

Randomness comes from numpy's PCG64 generator seeded through
SeedSequence([seed, stream]); stream distinguishes images of one dataset.
Ops apply left to right without renormalization in between.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
from scipy.ndimage import maximum_filter

from app.errors import ParamError
from app.models.schemas import (
    DilateOp,
    DropInstancesOp,
    FlipNoiseOp,
    GtInstance,
    JitterBoxesOp,
    PerturbSpec,
    PredInstance,
    ProbMap,
    ScoreAssignOp,
    ShiftOp,
)
from app.services.raster import clip_box, disk_footprint, expand_box, shift_array

logger = logging.getLogger(__name__)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """PCG64 generator for (seed, stream)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))


def validate_spec(spec: PerturbSpec) -> None:
    """Raise ParamError for any out-of-range op parameter."""
    for op in spec.ops:
        if isinstance(op, DilateOp) and op.radius < 0:
            raise ParamError(f"dilate radius must be >= 0, got {op.radius}")
        if isinstance(op, DropInstancesOp) and not 0.0 <= op.fraction <= 1.0:
            raise ParamError(f"drop fraction must lie in [0, 1], got {op.fraction}")
        if isinstance(op, JitterBoxesOp) and op.max_px < 0:
            raise ParamError(f"jitter max_px must be >= 0, got {op.max_px}")
        if isinstance(op, FlipNoiseOp) and not 0.0 <= op.rate <= 1.0:
            raise ParamError(f"flip rate must lie in [0, 1], got {op.rate}")
        if isinstance(op, ScoreAssignOp):
            if op.distribution == "constant" and not 0.0 <= op.value <= 1.0:
                raise ParamError(f"constant score must lie in [0, 1], got {op.value}")
            if op.distribution == "uniform" and not 0.0 <= op.low <= op.high <= 1.0:
                raise ParamError(f"uniform score bounds invalid: [{op.low}, {op.high}]")


def _dilate(values: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return values
    footprint = disk_footprint(radius)
    return np.stack([maximum_filter(channel, footprint=footprint, mode="constant", cval=0.0) for channel in values])


def _flip(values: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    flips = rng.random(values.shape) < rate
    return np.where(flips, 1.0 - values, values).astype(np.float32)


def perturb_semantic(gt: ProbMap, spec: PerturbSpec, stream: int = 0) -> ProbMap:
    """
    Degrade per-category ground-truth edges into a semantic prediction.

    Instance-only ops (drop_instances, jitter_boxes, score_assign) leave the
    semantic map unchanged.

    Args:
        gt: Binary per-category edge maps
        spec: Perturbation spec
        stream: Per-image stream index

    Returns:
        ProbMap with the same channels as gt
    """
    validate_spec(spec)
    rng = make_rng(spec.seed, stream)
    values = np.array(gt.values, dtype=np.float32)
    for op in spec.ops:
        if isinstance(op, DilateOp):
            values = _dilate(values, op.radius)
        elif isinstance(op, ShiftOp):
            values = shift_array(values, op.dx, op.dy)
        elif isinstance(op, FlipNoiseOp):
            values = _flip(values, op.rate, rng)
    return ProbMap(values=values)


class _Working:
    """Mutable prediction under construction: full-canvas edges plus box and score."""

    def __init__(self, category: int, box, canvas: np.ndarray, score: float = 1.0):
        self.category = category
        self.box = box
        self.canvas = canvas
        self.score = score

    def freeze(self) -> PredInstance:
        rows, cols = self.box.slices
        return PredInstance(
            category=self.category,
            score=self.score,
            box=self.box,
            edges=ProbMap(values=self.canvas[rows, cols]),
        )


def perturb_instances(
    gt: Sequence[GtInstance], spec: PerturbSpec, stream: int = 0
) -> List[PredInstance]:
    """
    Copy ground-truth instances into predictions, then apply spec's ops.

    Args:
        gt: Ground-truth instances of one image
        spec: Perturbation spec
        stream: Per-image stream index

    Returns:
        Predicted instances in ground-truth order (minus dropped ones)
    """
    validate_spec(spec)
    rng = make_rng(spec.seed, stream)
    work = [_Working(g.category, g.box, g.edges.bits.astype(np.float32)) for g in gt]
    if not work:
        return []
    height, width = work[0].canvas.shape

    for op in spec.ops:
        if isinstance(op, DilateOp):
            for item in work:
                item.canvas = _dilate(item.canvas[np.newaxis], op.radius)[0]
                item.box = expand_box(item.box, op.radius, width, height)
        elif isinstance(op, ShiftOp):
            kept = []
            for item in work:
                box = clip_box(
                    item.box.x0 + op.dx, item.box.y0 + op.dy, item.box.x1 + op.dx, item.box.y1 + op.dy,
                    width, height,
                )
                if box is None:
                    continue
                item.canvas = shift_array(item.canvas, op.dx, op.dy)
                item.box = box
                kept.append(item)
            work = kept
        elif isinstance(op, DropInstancesOp):
            n_drop = int(np.floor(op.fraction * len(work) + 0.5))
            dropped = set(int(i) for i in rng.permutation(len(work))[:n_drop])
            work = [item for index, item in enumerate(work) if index not in dropped]
        elif isinstance(op, JitterBoxesOp):
            offsets = rng.integers(-op.max_px, op.max_px + 1, size=(len(work), 4))
            for item, (d0, d1, d2, d3) in zip(work, offsets):
                x0 = int(np.clip(item.box.x0 + d0, 0, width - 1))
                y0 = int(np.clip(item.box.y0 + d1, 0, height - 1))
                x1 = int(np.clip(item.box.x1 + d2, x0 + 1, width))
                y1 = int(np.clip(item.box.y1 + d3, y0 + 1, height))
                item.box = clip_box(x0, y0, x1, y1, width, height)
        elif isinstance(op, FlipNoiseOp):
            for item in work:
                rows, cols = item.box.slices
                item.canvas = item.canvas.copy()
                item.canvas[rows, cols] = _flip(item.canvas[rows, cols], op.rate, rng)
        elif isinstance(op, ScoreAssignOp):
            if op.distribution == "constant":
                scores = np.full(len(work), op.value)
            else:
                scores = rng.uniform(op.low, op.high, size=len(work))
            for item, score in zip(work, scores):
                item.score = float(score)

    logger.debug(f"Perturbed {len(gt)} instances into {len(work)} predictions")
    return [item.freeze() for item in work]


def perturb_spec_from_flags(
    seed: int,
    dilate: Optional[int] = None,
    shift: Optional[Sequence[int]] = None,
    drop: Optional[float] = None,
    jitter: Optional[int] = None,
    flip: Optional[float] = None,
    score: Optional[float] = None,
) -> PerturbSpec:
    """Build a spec from command-line flags, in a fixed op order."""
    ops = []
    if dilate is not None:
        ops.append(DilateOp(radius=dilate))
    if shift is not None:
        ops.append(ShiftOp(dx=shift[0], dy=shift[1]))
    if flip is not None:
        ops.append(FlipNoiseOp(rate=flip))
    if drop is not None:
        ops.append(DropInstancesOp(fraction=drop))
    if jitter is not None:
        ops.append(JitterBoxesOp(max_px=jitter))
    if score is not None:
        ops.append(ScoreAssignOp(distribution="constant", value=score))
    spec = PerturbSpec(seed=seed, ops=ops)
    validate_spec(spec)
    return spec
