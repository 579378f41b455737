from enum import Enum
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, conlist, field_validator, model_validator

from app.errors import ParamError, RangeError, ShapeError

IGNORE_LABEL = 65535
BACKGROUND_INSTANCE = 0

# Serialized [x0, y0, x1, y1]
BoxCoords = conlist(int, min_length=4, max_length=4)


def threshold_grid(count: int) -> Tuple[float, ...]:
    """count evenly spaced thresholds i / (count + 1)."""
    if count < 1:
        raise ParamError(f"Threshold count must be >= 1, got {count}")
    return tuple((i + 1) / (count + 1) for i in range(count))


def _frozen_array(value, dtype, ndim: int) -> np.ndarray:
    """Copy value into a read-only array of the given dtype and rank."""
    array = np.array(value, dtype=dtype)
    if array.ndim != ndim:
        raise ShapeError(f"Expected a {ndim}-d array, got shape {array.shape}")
    array.setflags(write=False)
    return array


class CategoryKind(str, Enum):
    """Stuff categories are scored semantically, instance categories per object."""
    STUFF = "stuff"
    INSTANCE = "instance"


class Category(BaseModel):
    """One evaluated category."""
    model_config = ConfigDict(frozen=True)

    id: int
    name: str
    kind: CategoryKind


class CategorySet(BaseModel):
    """Ordered category list; the order fixes the semantic channel order."""
    model_config = ConfigDict(frozen=True)

    categories: List[Category]

    @model_validator(mode="after")
    def _check_ids(self) -> "CategorySet":
        ids = [category.id for category in self.categories]
        if len(set(ids)) != len(ids):
            raise ParamError(f"Duplicate category ids in {ids}")
        if any(i < 0 or i >= IGNORE_LABEL for i in ids):
            raise ParamError(f"Category ids must lie in [0, {IGNORE_LABEL})")
        return self

    @property
    def ids(self) -> List[int]:
        return [category.id for category in self.categories]

    @property
    def stuff_ids(self) -> List[int]:
        return [c.id for c in self.categories if c.kind == CategoryKind.STUFF]

    @property
    def instance_ids(self) -> List[int]:
        return [c.id for c in self.categories if c.kind == CategoryKind.INSTANCE]

    def __len__(self) -> int:
        return len(self.categories)

    def index_of(self, category_id: int) -> int:
        """Channel index of a category id."""
        for index, category in enumerate(self.categories):
            if category.id == category_id:
                return index
        raise ParamError(f"Category {category_id} is not in the category set")

    def get(self, category_id: int) -> Category:
        return self.categories[self.index_of(category_id)]

    def subset(self, keep_ids) -> "CategorySet":
        """Categories whose id is in keep_ids, in the original order."""
        keep = set(keep_ids)
        return CategorySet(categories=[c for c in self.categories if c.id in keep])


class Box(BaseModel):
    """Half-open pixel box [x0, x1) x [y0, y1)."""
    model_config = ConfigDict(frozen=True)

    x0: int
    y0: int
    x1: int
    y1: int

    @model_validator(mode="after")
    def _check_extent(self) -> "Box":
        if self.x0 < 0 or self.y0 < 0 or self.x0 >= self.x1 or self.y0 >= self.y1:
            raise ParamError(f"Invalid box ({self.x0}, {self.y0}, {self.x1}, {self.y1})")
        return self

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def slices(self) -> Tuple[slice, slice]:
        """Row and column slices selecting the box from a (H, W) array."""
        return slice(self.y0, self.y1), slice(self.x0, self.x1)

    def fits(self, width: int, height: int) -> bool:
        return self.x1 <= width and self.y1 <= height

    def as_list(self) -> List[int]:
        return [self.x0, self.y0, self.x1, self.y1]


class _Raster(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class LabelMap(_Raster):
    """Per-pixel category ids; IGNORE_LABEL marks unlabeled pixels."""
    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value, np.uint16, 2)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


class InstanceMap(_Raster):
    """Per-pixel instance ids; 0 marks pixels belonging to no instance."""
    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value, np.uint32, 2)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


class BoundaryMap(_Raster):
    """Binary edge raster."""
    bits: np.ndarray

    @field_validator("bits", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value, bool, 2)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


class ProbMap(_Raster):
    """Channel-major edge probabilities, shape (K, H, W), values in [0, 1]."""
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _coerce(cls, value):
        array = np.asarray(value, dtype=np.float32)
        if array.ndim == 2:
            array = array[np.newaxis]
        array = _frozen_array(array, np.float32, 3)
        if array.size and (np.isnan(array).any() or array.min() < 0.0 or array.max() > 1.0):
            raise RangeError("Probability values must lie in [0, 1]")
        return array

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def channel(self, index: int) -> np.ndarray:
        return self.values[index]


class GtInstance(_Raster):
    """Ground-truth instance with full-canvas edges."""
    id: int
    category: int
    box: Box
    edges: BoundaryMap


class GtScene(_Raster):
    """Converted ground truth for one image."""
    semantic: ProbMap
    instances: List[GtInstance] = Field(default_factory=list)


class PredInstance(_Raster):
    """Predicted instance; edges is a one-channel crop sized to box."""
    category: int
    score: float
    box: Box
    edges: ProbMap

    @model_validator(mode="after")
    def _check_crop(self) -> "PredInstance":
        if self.edges.channels != 1:
            raise ShapeError("Instance edge crops must have exactly one channel")
        if (self.edges.height, self.edges.width) != (self.box.height, self.box.width):
            raise ShapeError(
                f"Crop {self.edges.height}x{self.edges.width} does not match "
                f"box {self.box.height}x{self.box.width}"
            )
        if not 0.0 <= self.score <= 1.0:
            raise ParamError(f"Score {self.score} outside [0, 1]")
        return self


class MatchCounts(BaseModel):
    """Edge correspondence counts for one binarized prediction."""
    model_config = ConfigDict(frozen=True)

    pred_total: int = 0
    pred_matched: int = 0
    gt_total: int = 0
    gt_matched: int = 0

    @model_validator(mode="after")
    def _check_counts(self) -> "MatchCounts":
        if not (0 <= self.pred_matched <= self.pred_total and 0 <= self.gt_matched <= self.gt_total):
            raise ParamError(f"Inconsistent match counts {self}")
        return self


class PrAccumulator(_Raster):
    """
    Per-threshold correspondence counts summed over images.

    counts has shape (len(grid), 4) with columns pred_total, pred_matched,
    gt_total, gt_matched.
    """
    grid: Tuple[float, ...]
    counts: np.ndarray
    images: int = 0

    @field_validator("grid")
    @classmethod
    def _check_grid(cls, grid):
        if not grid:
            raise ParamError("Threshold grid is empty")
        if any(t <= 0.0 or t >= 1.0 for t in grid):
            raise ParamError("Thresholds must lie in (0, 1)")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ParamError("Threshold grid must be strictly increasing")
        return grid

    @field_validator("counts", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value, np.int64, 2)

    @model_validator(mode="after")
    def _check_shape(self) -> "PrAccumulator":
        if self.counts.shape != (len(self.grid), 4):
            raise ShapeError(f"Counts shape {self.counts.shape} does not match grid of {len(self.grid)}")
        return self

    def at(self, index: int) -> MatchCounts:
        pred_total, pred_matched, gt_total, gt_matched = (int(v) for v in self.counts[index])
        return MatchCounts(
            pred_total=pred_total,
            pred_matched=pred_matched,
            gt_total=gt_total,
            gt_matched=gt_matched,
        )


class CoarseMatch(BaseModel):
    """IoU-gated candidates per ground-truth index plus immediate misses."""
    candidates: Dict[int, List[int]]
    fn: List[int]


class TpPair(_Raster):
    """A matched (ground truth, prediction) pair with its per-threshold counts."""
    gt: int
    pred: int
    pair_mf: float
    iou: float
    counts: np.ndarray


class MatchResult(BaseModel):
    """TP pairs, unmatched prediction indices and unmatched ground-truth indices."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    tp_pairs: List[TpPair] = Field(default_factory=list)
    fp: List[int] = Field(default_factory=list)
    fn: List[int] = Field(default_factory=list)


class CategoryScore(BaseModel):
    """Panoptic scores of one evaluated category."""
    category: int
    name: str
    kind: CategoryKind
    f_edge: float
    f_object: float
    f2: float
    theta_star: float
    support: int


class SkippedCategory(BaseModel):
    """A category excluded from the report, with the reason."""
    category: int
    name: str
    kind: CategoryKind
    reason: str


class MeanScores(BaseModel):
    f_edge: float
    f_object: float
    f2: float
    count: int


class EvalConfig(BaseModel):
    """Resolved evaluation settings, echoed into every report."""
    tolerance: float = 0.0035
    thresholds: int = 99
    radius: Optional[int] = None
    top_t: int = 2
    iou_min: float = 0.5
    score_min: float = 0.0
    instance_fedge: Literal["dataset", "per-pair"] = "dataset"

    @property
    def grid(self) -> Tuple[float, ...]:
        return threshold_grid(self.thresholds)


class Report(BaseModel):
    """Per-category scores and their stuff / instance / overall means."""
    categories: List[CategoryScore]
    skipped: List[SkippedCategory] = Field(default_factory=list)
    stuff_mean: Optional[MeanScores] = None
    instance_mean: Optional[MeanScores] = None
    overall_mean: MeanScores
    config: EvalConfig


class LossBreakdown(_Raster):
    """Reweighted cross-entropy value, balance factors and analytic gradient."""
    eta: float
    eta_bar: float
    value: float
    gradient: np.ndarray
    channel_eta: Optional[List[float]] = None


class DilateOp(BaseModel):
    op: Literal["dilate"] = "dilate"
    radius: int


class ShiftOp(BaseModel):
    op: Literal["shift"] = "shift"
    dx: int = 0
    dy: int = 0


class DropInstancesOp(BaseModel):
    op: Literal["drop_instances"] = "drop_instances"
    fraction: float


class JitterBoxesOp(BaseModel):
    op: Literal["jitter_boxes"] = "jitter_boxes"
    max_px: int


class FlipNoiseOp(BaseModel):
    op: Literal["flip_noise"] = "flip_noise"
    rate: float


class ScoreAssignOp(BaseModel):
    op: Literal["score_assign"] = "score_assign"
    distribution: Literal["constant", "uniform"] = "constant"
    value: float = 1.0
    low: float = 0.0
    high: float = 1.0


PerturbOp = Annotated[
    Union[DilateOp, ShiftOp, DropInstancesOp, JitterBoxesOp, FlipNoiseOp, ScoreAssignOp],
    Field(discriminator="op"),
]


class PerturbSpec(BaseModel):
    """Seeded, ordered list of degradations applied to ground truth."""
    seed: int = 0
    ops: List[PerturbOp] = Field(default_factory=list)


class DatasetImage(BaseModel):
    """One converted image; paths are relative to the manifest directory."""
    id: str
    width: int
    height: int
    label: str
    instance: str
    semantic_gt: str
    instances_gt: str
    instance_edges: str
    ignore: str
    sha256: Dict[str, str] = Field(default_factory=dict)


class ConversionFailure(BaseModel):
    id: str
    error: str


class DatasetManifest(BaseModel):
    version: int = 1
    categories: CategorySet
    radius: int
    keep_ids: Optional[List[int]] = None
    images: List[DatasetImage] = Field(default_factory=list)
    failures: List[ConversionFailure] = Field(default_factory=list)


class InstanceEntry(BaseModel):
    """Serialized ground-truth instance; its edges live in a channel of instance_edges."""
    id: int
    category: int
    box: BoxCoords
    channel: int


class PredictedInstanceEntry(BaseModel):
    category: int
    score: float
    box: BoxCoords
    edges: str


class PredictionImage(BaseModel):
    semantic: str
    instances: List[PredictedInstanceEntry] = Field(default_factory=list)


class PredictionManifest(BaseModel):
    version: int = 1
    images: Dict[str, PredictionImage] = Field(default_factory=dict)


class InstanceTally(_Raster):
    """Matching totals of one instance category in one image."""
    tp: int = 0
    fp: int = 0
    fn: int = 0
    counts: np.ndarray
    pair_mfs: List[float] = Field(default_factory=list)


class ImageEvaluation(_Raster):
    """Per-image contributions: stuff channel counts and instance tallies by category id."""
    id: str
    stuff: Dict[int, np.ndarray] = Field(default_factory=dict)
    instance: Dict[int, InstanceTally] = Field(default_factory=dict)
