import unittest

import numpy as np
import pytest

from app.errors import EmptyReportError, ParamError, UndefinedError
from app.models.schemas import (
    Category,
    CategoryKind,
    CategoryScore,
    CategorySet,
    EvalConfig,
    GtScene,
    PrAccumulator,
    ProbMap,
    SkippedCategory,
)
from app.services.boundary_eval import default_grid, empty_accumulator
from app.services.evaluation import evaluate_scene, summarize
from app.services.panoptic_metric import aggregate, compose_f2, f2_instance, f2_stuff, f_object
from tests.conftest import copy_prediction

GRID = default_grid()
ROAD = Category(id=0, name="road", kind=CategoryKind.STUFF)
SKY = Category(id=1, name="sky", kind=CategoryKind.STUFF)
CAR = Category(id=7, name="car", kind=CategoryKind.INSTANCE)


def accumulator(pred_total, pred_matched, gt_total, gt_matched, images=1) -> PrAccumulator:
    counts = np.tile([pred_total, pred_matched, gt_total, gt_matched], (len(GRID), 1))
    return PrAccumulator(grid=GRID, counts=counts, images=images)


def score(category: Category, f2: float) -> CategoryScore:
    return CategoryScore(
        category=category.id, name=category.name, kind=category.kind,
        f_edge=f2, f_object=1.0, f2=f2, theta_star=0.5, support=1,
    )


class TestFObject(unittest.TestCase):
    """Tests for the object recognition term."""

    def test_formula(self):
        self.assertAlmostEqual(f_object(3, 1, 2), 3 / 4.5, places=9)
        self.assertEqual(f_object(5, 0, 0), 1.0)
        self.assertEqual(f_object(0, 3, 0), 0.0)

    def test_undefined(self):
        with self.assertRaises(UndefinedError):
            f_object(0, 0, 0)

    def test_negative(self):
        with self.assertRaises(ParamError):
            f_object(1, -1, 0)


class TestCategoryScores(unittest.TestCase):
    """Tests for per-category composition."""

    def test_composition_reproduces_reported_instance_row(self):
        self.assertAlmostEqual(compose_f2(0.678, 0.555), 0.376, delta=0.0005)

    def test_perfect_stuff(self):
        result = f2_stuff(ROAD, accumulator(10, 10, 10, 10))
        self.assertEqual(result.f2, 1.0)
        self.assertEqual(result.f_object, 1.0)

    def test_stuff_f2_equals_f_edge(self):
        result = f2_stuff(ROAD, accumulator(10, 7, 20, 9))
        self.assertEqual(result.f2, result.f_edge)

    def test_stuff_without_predictions(self):
        self.assertEqual(f2_stuff(ROAD, accumulator(0, 0, 10, 0)).f2, 0.0)

    def test_stuff_without_ground_truth_is_skipped(self):
        self.assertIsInstance(f2_stuff(ROAD, empty_accumulator(GRID)), SkippedCategory)

    def test_kind_checks(self):
        with self.assertRaises(ParamError):
            f2_stuff(CAR, accumulator(1, 1, 1, 1))
        with self.assertRaises(ParamError):
            f2_instance(ROAD, 1, 0, 0, accumulator(1, 1, 1, 1))

    def test_perfect_instances(self):
        result = f2_instance(CAR, 4, 0, 0, accumulator(40, 40, 40, 40, images=4))
        self.assertEqual((result.f_edge, result.f_object, result.f2), (1.0, 1.0, 1.0))

    def test_one_extra_false_positive(self):
        result = f2_instance(CAR, 4, 1, 0, accumulator(40, 40, 40, 40, images=4))
        self.assertAlmostEqual(result.f_object, 4 / 4.5, places=12)
        self.assertAlmostEqual(result.f2, 4 / 4.5, places=12)
        self.assertEqual(result.support, 4)

    def test_predictions_without_ground_truth(self):
        result = f2_instance(CAR, 0, 3, 0, empty_accumulator(GRID))
        self.assertEqual((result.f_edge, result.f_object, result.f2), (0.0, 0.0, 0.0))

    def test_nothing_at_all_is_skipped(self):
        self.assertIsInstance(f2_instance(CAR, 0, 0, 0, empty_accumulator(GRID)), SkippedCategory)

    def test_per_pair_mode(self):
        result = f2_instance(CAR, 2, 0, 0, accumulator(40, 40, 40, 40), pair_mfs=[0.6, 0.8], mode="per-pair")
        self.assertAlmostEqual(result.f_edge, 0.7)


class TestAggregate(unittest.TestCase):
    """Tests for report means."""

    def setUp(self):
        self.cats = CategorySet(categories=[ROAD, SKY, CAR])

    def test_stuff_mean(self):
        report = aggregate([score(ROAD, 0.8), score(SKY, 0.6)], self.cats, EvalConfig())
        self.assertAlmostEqual(report.stuff_mean.f2, 0.7)
        self.assertIsNone(report.instance_mean)
        self.assertEqual(report.overall_mean.count, 2)

    def test_skipped_category_is_excluded_from_means(self):
        skipped = SkippedCategory(category=7, name="car", kind=CategoryKind.INSTANCE, reason="none")
        report = aggregate([skipped, score(SKY, 0.6), score(ROAD, 0.8)], self.cats, EvalConfig())
        self.assertEqual([s.category for s in report.categories], [0, 1])
        self.assertEqual([s.category for s in report.skipped], [7])
        self.assertAlmostEqual(report.overall_mean.f2, 0.7)

    def test_nineteen_categories(self):
        cats = CategorySet(categories=[
            Category(id=i, name=f"c{i}", kind=CategoryKind.STUFF if i < 11 else CategoryKind.INSTANCE)
            for i in range(19)
        ])
        outcomes = [score(category, (category.id + 1) / 20) for category in cats.categories]
        report = aggregate(outcomes, cats, EvalConfig())
        self.assertEqual(report.overall_mean.count, 19)
        self.assertEqual(report.stuff_mean.count, 11)
        self.assertEqual(report.instance_mean.count, 8)
        self.assertAlmostEqual(report.overall_mean.f2, np.mean([(i + 1) / 20 for i in range(19)]))

    def test_empty_report(self):
        skipped = SkippedCategory(category=0, name="road", kind=CategoryKind.STUFF, reason="none")
        with self.assertRaises(EmptyReportError):
            aggregate([skipped], self.cats, EvalConfig())


def test_scene_with_one_extra_false_positive(four_squares):
    """Four exact copies plus one spurious prediction give F2 = 4 / 4.5."""
    cats = CategorySet(categories=[CAR])
    config = EvalConfig(tolerance=2.0)
    preds = [copy_prediction(gt) for gt in four_squares]
    preds.append(copy_prediction(four_squares[0]).model_copy(update={"score": 0.3}))
    scene = GtScene(semantic=ProbMap(values=np.zeros((1, 64, 64))), instances=four_squares)
    evaluation = evaluate_scene("s", scene, scene.semantic, preds, cats, config)
    report, _ = summarize([evaluation], cats, config)
    (result,) = report.categories
    assert result.f_edge == 1.0
    assert result.f_object == pytest.approx(4 / 4.5)
    assert result.f2 == pytest.approx(0.889, abs=5e-4)


if __name__ == "__main__":
    unittest.main()
