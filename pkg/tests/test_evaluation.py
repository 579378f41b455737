import logging

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from app.models.schemas import Category, CategoryKind, CategorySet, EvalConfig, GtScene, ProbMap
from app.services.evaluation import evaluate_scene, pr_curves, summarize
from tests.conftest import box_prediction, copy_prediction


def road_scene(four_squares) -> GtScene:
    """Road edge along row 60; the four squares as car instances."""
    semantic = np.zeros((2, 64, 64), dtype=np.float32)
    semantic[0, 60, :] = 1.0
    for gt in four_squares:
        semantic[1][gt.edges.bits] = 1.0
    return GtScene(semantic=ProbMap(values=semantic), instances=four_squares)


def test_perfect_scene_scores_one(four_squares, mixed_category_set, pixel_eval_config):
    scene = road_scene(four_squares)
    preds = [copy_prediction(gt) for gt in four_squares]
    evaluation = evaluate_scene("a", scene, scene.semantic, preds, mixed_category_set, pixel_eval_config)
    assert evaluation.instance[7].tp == 4
    report, _ = summarize([evaluation], mixed_category_set, pixel_eval_config)
    assert [s.f2 for s in report.categories] == [1.0, 1.0]
    assert report.overall_mean.f2 == 1.0


def test_missing_instance_is_a_false_negative(four_squares, mixed_category_set, pixel_eval_config):
    scene = road_scene(four_squares)
    preds = [copy_prediction(gt) for gt in four_squares[:3]]
    evaluation = evaluate_scene("a", scene, scene.semantic, preds, mixed_category_set, pixel_eval_config)
    tally = evaluation.instance[7]
    assert (tally.tp, tally.fp, tally.fn) == (3, 0, 1)
    report, _ = summarize([evaluation], mixed_category_set, pixel_eval_config)
    car = report.categories[1]
    assert car.f_object == pytest.approx(3 / 3.5)
    assert car.f_edge == 1.0


def test_score_filter_drops_predictions(four_squares, mixed_category_set):
    scene = road_scene(four_squares)
    preds = [copy_prediction(gt, score=0.2) for gt in four_squares]
    config = EvalConfig(tolerance=2.0, score_min=0.5)
    evaluation = evaluate_scene("a", scene, scene.semantic, preds, mixed_category_set, config)
    tally = evaluation.instance[7]
    assert (tally.tp, tally.fp, tally.fn) == (0, 0, 4)


def test_ignored_road_edges_do_not_contribute(four_squares, mixed_category_set, pixel_eval_config):
    scene = road_scene(four_squares)
    ignore = np.zeros((64, 64), dtype=bool)
    ignore[60, :] = True
    evaluation = evaluate_scene("a", scene, scene.semantic, [], mixed_category_set, pixel_eval_config, ignore)
    assert 0 not in evaluation.stuff


def test_summary_is_order_independent(four_squares, mixed_category_set, pixel_eval_config):
    scene = road_scene(four_squares)
    shifted = np.roll(scene.semantic.values, 3, axis=2)
    evaluations = [
        evaluate_scene("a", scene, scene.semantic, [copy_prediction(four_squares[0])],
                       mixed_category_set, pixel_eval_config),
        evaluate_scene("b", scene, ProbMap(values=shifted), [copy_prediction(gt) for gt in four_squares],
                       mixed_category_set, pixel_eval_config),
    ]
    forward, _ = summarize(evaluations, mixed_category_set, pixel_eval_config)
    backward, _ = summarize(evaluations[::-1], mixed_category_set, pixel_eval_config)
    assert forward == backward


def test_predictions_of_stuff_categories_are_reported(four_squares, mixed_category_set, pixel_eval_config, caplog):
    scene = road_scene(four_squares)
    stray = box_prediction(four_squares[0].box, four_squares[0].edges.bits, category=0)
    with caplog.at_level(logging.WARNING, logger="app.services.evaluation"):
        evaluation = evaluate_scene("a", scene, scene.semantic, [stray], mixed_category_set, pixel_eval_config)
    assert evaluation.instance[7].fn == 4
    assert "non-instance categories [0]" in caplog.text


def test_pr_curves_cover_the_grid(four_squares, mixed_category_set, pixel_eval_config):
    scene = road_scene(four_squares)
    evaluation = evaluate_scene("a", scene, scene.semantic, [], mixed_category_set, pixel_eval_config)
    _, accumulators = summarize([evaluation], mixed_category_set, pixel_eval_config)
    curves = pr_curves(accumulators)
    assert list(curves[0].columns) == ["threshold", "precision", "recall", "f"]
    assert len(curves[0]) == pixel_eval_config.thresholds


@settings(max_examples=25, deadline=None)
@given(
    gt=arrays(np.bool_, (3, 16, 16), elements=st.booleans()),
    pred=arrays(np.float32, (3, 16, 16), elements=st.floats(0, 1, width=32)),
    order=st.permutations([0, 1, 2]),
)
def test_category_order_does_not_change_scores(gt, pred, order):
    """Listing the categories (and their channels) in another order yields the same per-category scores."""
    assume(gt.any())
    base = [Category(id=i, name=f"c{i}", kind=CategoryKind.STUFF) for i in range(3)]
    config = EvalConfig(tolerance=1.5, thresholds=9)
    scores = []
    for permutation in ([0, 1, 2], order):
        cats = CategorySet(categories=[base[k] for k in permutation])
        scene = GtScene(semantic=ProbMap(values=gt[permutation].astype(np.float32)))
        evaluation = evaluate_scene("a", scene, ProbMap(values=pred[permutation]), [], cats, config)
        report, _ = summarize([evaluation], cats, config)
        scores.append({s.category: (s.f_edge, s.f2, s.theta_star) for s in report.categories})
    assert scores[0] == scores[1]
