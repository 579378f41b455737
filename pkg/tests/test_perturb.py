import unittest

import numpy as np
import pytest
from pydantic import ValidationError

from app.errors import ParamError
from app.models.schemas import (
    BoundaryMap,
    Category,
    CategoryKind,
    CategorySet,
    DilateOp,
    DropInstancesOp,
    EvalConfig,
    GtScene,
    JitterBoxesOp,
    PerturbSpec,
    ProbMap,
    ScoreAssignOp,
    ShiftOp,
)
from app.services.boundary_eval import accumulate_pr, correspond, default_grid, empty_accumulator
from app.services.evaluation import evaluate_scene, summarize
from app.services.panoptic_metric import f2_stuff
from app.services.perturb import (
    make_rng,
    perturb_instances,
    perturb_semantic,
    perturb_spec_from_flags,
)
from app.services.raster import binarize
from tests.conftest import square_outline

CAR = Category(id=7, name="car", kind=CategoryKind.INSTANCE)
ROAD = Category(id=0, name="road", kind=CategoryKind.STUFF)
GRID = default_grid()


def instance_f2(gts, preds, tol=2.0):
    cats = CategorySet(categories=[CAR])
    config = EvalConfig(tolerance=tol)
    scene = GtScene(semantic=ProbMap(values=np.zeros((1, 64, 64))), instances=gts)
    evaluation = evaluate_scene("s", scene, scene.semantic, preds, cats, config)
    report, _ = summarize([evaluation], cats, config)
    return report.categories[0]


def semantic_gt() -> ProbMap:
    edges = square_outline(48, 10, 10, 20) | square_outline(48, 5, 30, 8)
    return ProbMap(values=edges[np.newaxis].astype(np.float32))


class TestPerturbSemantic(unittest.TestCase):
    """Tests for semantic degradations."""

    def test_empty_spec_is_identity(self):
        gt = semantic_gt()
        pred = perturb_semantic(gt, PerturbSpec(seed=1))
        np.testing.assert_array_equal(pred.values, gt.values)
        acc = accumulate_pr(pred, BoundaryMap(bits=gt.values[0] > 0.5), GRID, 2, empty_accumulator(GRID))
        self.assertEqual(f2_stuff(ROAD, acc).f2, 1.0)

    def test_shift_beyond_tolerance_lowers_f_edge(self):
        gt = semantic_gt()
        pred = perturb_semantic(gt, PerturbSpec(ops=[ShiftOp(dx=3, dy=0)]))
        acc = accumulate_pr(pred, BoundaryMap(bits=gt.values[0] > 0.5), GRID, 2, empty_accumulator(GRID))
        self.assertLess(f2_stuff(ROAD, acc).f_edge, 1.0)

    def test_dilation_beyond_tolerance_lowers_precision(self):
        gt = semantic_gt()
        bits = BoundaryMap(bits=gt.values[0] > 0.5)
        for seed in range(1, 6):
            base = correspond(binarize(perturb_semantic(gt, PerturbSpec(seed=seed)), 0.5), bits, 2)
            dilated = perturb_semantic(gt, PerturbSpec(seed=seed, ops=[DilateOp(radius=4)]))
            counts = correspond(binarize(dilated, 0.5), bits, 2)
            self.assertLess(counts.pred_matched / counts.pred_total, base.pred_matched / base.pred_total)
            self.assertEqual(counts.gt_matched, counts.gt_total)

    def test_determinism(self):
        gt = semantic_gt()
        spec = perturb_spec_from_flags(seed=4, dilate=1, flip=0.05)
        first = perturb_semantic(gt, spec, stream=2)
        second = perturb_semantic(gt, spec, stream=2)
        np.testing.assert_array_equal(first.values, second.values)
        other = perturb_semantic(gt, spec, stream=3)
        self.assertFalse(np.array_equal(first.values, other.values))


def test_copy_without_ops_is_perfect(four_squares):
    preds = perturb_instances(four_squares, PerturbSpec(ops=[JitterBoxesOp(max_px=0), DropInstancesOp(fraction=0)]))
    assert len(preds) == 4
    result = instance_f2(four_squares, preds)
    assert (result.f_edge, result.f_object, result.f2) == (1.0, 1.0, 1.0)


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_drop_one_of_four(four_squares, seed):
    preds = perturb_instances(four_squares, PerturbSpec(seed=seed, ops=[DropInstancesOp(fraction=0.25)]))
    assert len(preds) == 3
    result = instance_f2(four_squares, preds)
    assert abs(result.f_object - 6 / 7) < 1e-9
    assert result.f_edge == 1.0


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_drop_is_monotone(four_squares, seed):
    previous = 1.0
    for fraction in (0.0, 0.25, 0.5, 0.75):
        preds = perturb_instances(four_squares, PerturbSpec(seed=seed, ops=[DropInstancesOp(fraction=fraction)]))
        current = instance_f2(four_squares, preds).f_object
        assert current <= previous
        previous = current


def test_large_jitter_turns_match_into_fp_and_fn(four_squares):
    """Shifting one prediction past the IoU gate gives (n - 1) / n for n ground truths."""
    preds = perturb_instances(four_squares, PerturbSpec())
    moved = preds[0].model_copy(update={"box": preds[0].box.model_copy(update={"x0": 24, "x1": 34})})
    result = instance_f2(four_squares, [moved] + preds[1:])
    n = len(four_squares)
    assert result.f_object == pytest.approx((n - 1) / ((n - 1) + 1))


def test_instance_perturbation_is_deterministic(four_squares):
    spec = perturb_spec_from_flags(seed=9, dilate=1, drop=0.5, jitter=2, flip=0.01)
    first = perturb_instances(four_squares, spec, stream=1)
    second = perturb_instances(four_squares, spec, stream=1)
    assert [p.box for p in first] == [p.box for p in second]
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.edges.values, b.edges.values)


def test_score_assignment(four_squares):
    preds = perturb_instances(four_squares, PerturbSpec(ops=[ScoreAssignOp(distribution="constant", value=0.4)]))
    assert [p.score for p in preds] == [0.4] * 4
    preds = perturb_instances(
        four_squares, PerturbSpec(seed=3, ops=[ScoreAssignOp(distribution="uniform", low=0.2, high=0.6)])
    )
    assert all(0.2 <= p.score <= 0.6 for p in preds)


def test_shift_off_canvas_drops_instance(four_squares):
    preds = perturb_instances(four_squares, PerturbSpec(ops=[ShiftOp(dx=-60, dy=0)]))
    assert preds == []


def test_invalid_parameters():
    with pytest.raises(ParamError):
        perturb_spec_from_flags(seed=0, drop=1.5)
    with pytest.raises(ParamError):
        perturb_spec_from_flags(seed=0, dilate=-1)
    with pytest.raises(ParamError):
        perturb_semantic(semantic_gt(), PerturbSpec(ops=[ScoreAssignOp(distribution="uniform", low=0.8, high=0.2)]))
    with pytest.raises(ValidationError):
        PerturbSpec.model_validate({"seed": 0, "ops": [{"op": "blur", "sigma": 1}]})


def test_rng_streams_are_reproducible():
    assert make_rng(5, 1).integers(0, 1 << 30) == make_rng(5, 1).integers(0, 1 << 30)
