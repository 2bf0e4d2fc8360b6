import numpy as np
import pytest
import torch

from pixda.metrics import (
    ClassPartition,
    accumulate,
    evaluate,
    load_report_dict,
    new_confusion,
    plot_per_class_iou,
    prediction_from_logits,
    report,
    save_report,
)

import oracles


def test_perfect_prediction_is_diagonal():
    conf = new_confusion(3)
    truth = np.array([[0, 1], [2, 2]])
    accumulate(conf, truth.copy(), truth)
    assert conf[0, 0] == 1 and conf[1, 1] == 1 and conf[2, 2] == 2
    assert conf.sum() == np.trace(conf)


def test_all_ignored_leaves_confusion_unchanged():
    conf = new_confusion(2)
    truth = np.full((3, 3), 255)
    accumulate(conf, np.zeros((3, 3), dtype=int), truth)
    assert conf.sum() == 0


def test_hand_counted_two_by_two():
    conf = new_confusion(2)
    truth = np.array([[0, 0], [1, 1]])
    pred = np.array([[0, 1], [1, 1]])
    accumulate(conf, pred, truth)
    assert conf.tolist() == [[1, 1], [0, 2]]
    rep = report(conf)
    # class 0: tp=1, union = 1 + 1 = 2 -> 0.5; class 1: tp=2, union = 2 + 1 = 3
    assert rep.per_class_iou[0] == pytest.approx(0.5)
    assert rep.per_class_iou[1] == pytest.approx(2 / 3)


def test_prediction_with_ignore_sentinel_rejected():
    conf = new_confusion(2)
    with pytest.raises(ValueError, match="sentinel"):
        accumulate(conf, np.array([[255]]), np.array([[0]]))


def test_out_of_range_values_rejected():
    conf = new_confusion(2)
    with pytest.raises(ValueError, match="prediction"):
        accumulate(conf, np.array([[5]]), np.array([[0]]))
    with pytest.raises(ValueError, match="truth"):
        accumulate(conf, np.array([[1]]), np.array([[3]]))


def test_accumulation_is_order_independent_and_counts_pixels():
    rng = np.random.default_rng(0)
    images = [
        (rng.integers(0, 4, (5, 5)), rng.integers(0, 4, (5, 5)))
        for _ in range(6)
    ]
    conf_a = new_confusion(4)
    for pred, true in images:
        accumulate(conf_a, pred, true)
    conf_b = new_confusion(4)
    for pred, true in reversed(images):
        accumulate(conf_b, pred, true)
    assert np.array_equal(conf_a, conf_b)
    assert conf_a.sum() == 6 * 25


def test_identity_confusion_gives_perfect_scores():
    conf = np.eye(4, dtype=np.int64) * 7
    rep = report(conf, ClassPartition(well=(0, 1), under=(2, 3)))
    assert rep.per_class_iou == (1.0, 1.0, 1.0, 1.0)
    assert rep.miou == 1.0
    assert rep.miou_well == 1.0
    assert rep.miou_under == 1.0


def test_zero_union_class_excluded_by_default():
    conf = new_confusion(3)
    conf[0, 0] = 10
    conf[1, 1] = 5
    conf[1, 0] = 5
    rep = report(conf)
    assert rep.per_class_iou[2] is None
    assert rep.miou == pytest.approx((10 / 15 + 5 / 10) / 2)


def test_zero_union_mode_zero_scores_absent_classes():
    conf = new_confusion(3)
    conf[0, 0] = 10
    rep = report(conf, zero_union_mode="zero")
    assert rep.per_class_iou == (1.0, 0.0, 0.0)
    assert rep.miou == pytest.approx(1 / 3)


def test_empty_partition_groups_reported_absent():
    conf = np.eye(2, dtype=np.int64)
    rep = report(conf, ClassPartition(well=(0, 1), under=()))
    assert rep.miou_under is None
    assert rep.miou_well == 1.0


def test_partition_validation():
    with pytest.raises(ValueError, match="overlap"):
        ClassPartition(well=(0, 1), under=(1, 2))
    with pytest.raises(ValueError, match="class ids"):
        report(np.eye(2, dtype=np.int64), ClassPartition(well=(5,)))


def test_random_confusions_match_rational_oracle_exactly():
    rng = np.random.default_rng(42)
    for _ in range(50):
        c = int(rng.integers(2, 7))
        conf = rng.integers(0, 40, size=(c, c)).astype(np.int64)
        # randomly blank out some classes entirely to exercise zero unions
        for k in range(c):
            if rng.random() < 0.2:
                conf[k, :] = 0
                conf[:, k] = 0
        rep = report(conf)
        want_per_class, want_miou = oracles.iou_report_oracle(conf.tolist())
        assert list(rep.per_class_iou) == want_per_class  # exact float equality
        assert rep.miou == want_miou


def test_split_means_match_manual_aggregation():
    rng = np.random.default_rng(7)
    conf = rng.integers(1, 30, size=(5, 5)).astype(np.int64)
    part = ClassPartition(well=(0, 1, 2), under=(3, 4))
    rep = report(conf, part)
    per, _ = oracles.iou_report_oracle(conf.tolist())
    assert rep.miou_well == sum(per[c] for c in (0, 1, 2)) / 3
    assert rep.miou_under == sum(per[c] for c in (3, 4)) / 2


def test_prediction_from_logits_upsamples_nearest():
    logits = torch.zeros(2, 2, 2)
    logits[1, 0, 0] = 5.0  # top-left predicts class 1
    pred = prediction_from_logits(logits, (4, 4))
    assert pred.shape == (4, 4)
    assert pred[0, 0] == 1 and pred[1, 1] == 1 and pred[0, 1] == 1
    assert pred[2, 2] == 0
    same = prediction_from_logits(logits, (2, 2))
    assert same.shape == (2, 2)


def _toy_items(n=4, seed=3):
    from pixda.data import ToySceneSpec, generate_toy_pair

    spec = ToySceneSpec(
        class_count=3,
        class_frequency_targets=(0.7, 0.2, 0.1),
        rare_object_classes=frozenset({2}),
        image_size=(32, 32),
        seed=seed,
    )
    src, _ = generate_toy_pair(spec, n_source=n, n_target=2)
    return src


def test_evaluate_constant_predictor_matches_hand_confusion():
    from pixda.models import Segmenter, SegmenterConfig

    items = _toy_items()
    model = Segmenter(SegmenterConfig(class_count=3, base_channels=4, depth=2, output_stride=2))
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
        model.head.bias[1] = 5.0  # force every pixel to predict class 1
    rep = evaluate(model, items)
    expected = new_confusion(3)
    for item in items:
        for c in range(3):
            expected[c, 1] += int((item.labels == c).sum())
    assert np.array_equal(rep.confusion, expected)
    assert rep.confusion.sum() == len(items) * 32 * 32


def test_evaluate_on_untrained_model_is_bounded_and_total_preserving():
    from pixda.models import Segmenter, SegmenterConfig

    items = _toy_items()
    torch.manual_seed(0)
    model = Segmenter(SegmenterConfig(class_count=3, base_channels=4, depth=2, output_stride=1))
    rep = evaluate(model, items)
    assert rep.confusion.sum() == len(items) * 32 * 32
    assert rep.miou is not None and 0.0 <= rep.miou <= 1.0


def test_evaluate_rejects_empty_dataset():
    from pixda.models import Segmenter, SegmenterConfig

    model = Segmenter(SegmenterConfig(class_count=3, base_channels=4, depth=2))
    with pytest.raises(ValueError, match="empty"):
        evaluate(model, [])


def test_report_serialization_round_trip(tmp_path):
    conf = np.array([[5, 1], [2, 8]], dtype=np.int64)
    rep = report(conf, ClassPartition(well=(0,), under=(1,)))
    path = tmp_path / "report.json"
    save_report(rep, path)
    loaded = load_report_dict(path)
    assert loaded["confusion"] == [[5, 1], [2, 8]]
    assert loaded["miou"] == rep.miou
    assert loaded["per_class_iou"] == list(rep.per_class_iou)
    assert loaded["class_partition"] == {"well": [0], "under": [1]}


def test_plot_smoke(tmp_path):
    conf = np.array([[5, 1, 0], [2, 8, 0], [0, 0, 0]], dtype=np.int64)
    rep = report(conf)
    out = tmp_path / "iou.png"
    plot_per_class_iou(rep, out)
    assert out.exists() and out.stat().st_size > 0
