import os
import sys
from typing import List

import numpy as np
import pytest

# Make the project root importable when running pytest from anywhere
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from app.models.schemas import (
    BoundaryMap,
    Box,
    Category,
    CategoryKind,
    CategorySet,
    EvalConfig,
    GtInstance,
    PredInstance,
    ProbMap,
)
from app.services.raster import bbox_of


@pytest.fixture
def two_category_set() -> CategorySet:
    """Two stuff categories with ids 1 and 2."""
    return CategorySet(categories=[
        Category(id=1, name="left", kind=CategoryKind.STUFF),
        Category(id=2, name="right", kind=CategoryKind.STUFF),
    ])


@pytest.fixture
def mixed_category_set() -> CategorySet:
    """One stuff category (0) and one instance category (7)."""
    return CategorySet(categories=[
        Category(id=0, name="road", kind=CategoryKind.STUFF),
        Category(id=7, name="car", kind=CategoryKind.INSTANCE),
    ])


@pytest.fixture
def half_split_labels() -> np.ndarray:
    """4x4 labels: left half 1, right half 2."""
    labels = np.ones((4, 4), dtype=np.uint16)
    labels[:, 2:] = 2
    return labels


@pytest.fixture
def pixel_eval_config() -> EvalConfig:
    """Absolute two-pixel tolerance on the default grid."""
    return EvalConfig(tolerance=2.0)


def square_outline(size: int, x0: int, y0: int, side: int) -> np.ndarray:
    """Boolean outline of a side x side square on a size x size canvas."""
    mask = np.zeros((size, size), dtype=bool)
    mask[y0:y0 + side, x0:x0 + side] = True
    mask[y0 + 1:y0 + side - 1, x0 + 1:x0 + side - 1] = False
    return mask


def gt_instance(edges: np.ndarray, category: int = 7, instance_id: int = 1) -> GtInstance:
    return GtInstance(id=instance_id, category=category, box=bbox_of(edges), edges=BoundaryMap(bits=edges))


def copy_prediction(gt: GtInstance, score: float = 1.0) -> PredInstance:
    """A prediction whose crop reproduces the ground-truth edges exactly."""
    rows, cols = gt.box.slices
    crop = gt.edges.bits[rows, cols].astype(np.float32)
    return PredInstance(category=gt.category, score=score, box=gt.box, edges=ProbMap(values=crop))


def box_prediction(box: Box, canvas: np.ndarray, category: int = 7, score: float = 1.0) -> PredInstance:
    rows, cols = box.slices
    return PredInstance(
        category=category, score=score, box=box, edges=ProbMap(values=canvas[rows, cols].astype(np.float32))
    )


@pytest.fixture
def four_squares() -> List[GtInstance]:
    """Four separated square outlines of category 7 on a 64x64 canvas."""
    return [
        gt_instance(square_outline(64, x, y, 10), instance_id=i + 1)
        for i, (x, y) in enumerate([(4, 4), (34, 4), (4, 34), (34, 34)])
    ]
