"""Metric counting against brute-force oracles and hand values."""

import numpy as np
import pytest

from gmbinet.metrics import (aggregate_reports, classification_metrics,
                             segmentation_metrics)
from gmbinet.tensor import ShapeError, Tensor


class TestSegmentationMetrics:
    def test_hand_counted_example(self):
        pred = np.array([[0.9, 0.2], [0.8, 0.1]]).reshape(1, 1, 2, 2)
        gt = np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(1, 1, 2, 2)
        r = segmentation_metrics(pred, gt)
        assert (r.tp, r.fp, r.fn, r.tn) == (1, 1, 1, 1)
        assert r.iou == pytest.approx(1 / 3)
        assert r.precision == pytest.approx(0.5)
        assert r.recall == pytest.approx(0.5)
        assert r.f_measure == pytest.approx(0.5)
        assert r.mae == pytest.approx((0.1 + 0.2 + 0.8 + 0.9) / 4)

    def test_brute_force_oracle(self, rng):
        pred = rng.random((1, 1, 16, 16))
        gt = (rng.random((1, 1, 16, 16)) > 0.6).astype(np.float64)
        r = segmentation_metrics(Tensor(pred), Tensor(gt), threshold=0.4)
        tp = fp = fn = tn = 0
        for p, g in zip(pred.reshape(-1), gt.reshape(-1)):
            if p > 0.4 and g > 0.5:
                tp += 1
            elif p > 0.4:
                fp += 1
            elif g > 0.5:
                fn += 1
            else:
                tn += 1
        assert (r.tp, r.fp, r.fn, r.tn) == (tp, fp, fn, tn)
        assert r.iou == pytest.approx(tp / (tp + fp + fn))

    def test_perfect_prediction(self):
        gt = np.eye(4).reshape(1, 1, 4, 4)
        r = segmentation_metrics(gt, gt)
        assert r.iou == 1.0 and r.mae == 0.0 and r.f_measure == 1.0
        assert r.or_ratio == r.iou

    def test_empty_prediction_conventions(self):
        pred = np.zeros((1, 1, 4, 4))
        gt = np.ones((1, 1, 4, 4))
        r = segmentation_metrics(pred, gt)
        assert r.precision == 0.0 and r.recall == 0.0 and r.iou == 0.0

    def test_empty_union_is_perfect(self):
        zeros = np.zeros((1, 1, 4, 4))
        r = segmentation_metrics(zeros, zeros)
        assert r.iou == 1.0

    def test_or_over_gt_alternative(self):
        pred = np.ones((1, 1, 2, 2))
        gt = np.array([[1, 1], [0, 0]], dtype=float).reshape(1, 1, 2, 2)
        r = segmentation_metrics(pred, gt)
        assert r.or_over_gt == 1.0  # all ground-truth defect found
        assert r.or_ratio == pytest.approx(0.5)

    def test_validation(self, rng):
        with pytest.raises(ShapeError):
            segmentation_metrics(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))
        with pytest.raises(ValueError):
            segmentation_metrics(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)),
                                 threshold=1.5)


class TestClassificationMetrics:
    def test_hand_values(self):
        logits = np.array([
            [2.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [0.0, 2.0, 0.0],
            [0.0, 0.0, 2.0],
        ])
        labels = [0, 1, 2, 2]
        r = classification_metrics(logits, labels)
        assert r.accuracy == pytest.approx(0.75)
        # class 0: p=1, r=1; class 1: p=0.5, r=1; class 2: p=1, r=0.5
        assert r.precision == pytest.approx((1 + 0.5 + 1) / 3)
        assert r.recall == pytest.approx((1 + 1 + 0.5) / 3)

    def test_tie_breaks_to_lowest_index(self):
        logits = np.array([[1.0, 1.0, 1.0]])
        r = classification_metrics(logits, [0])
        assert r.accuracy == 1.0

    def test_label_out_of_range(self):
        with pytest.raises(ShapeError):
            classification_metrics(np.zeros((2, 3)), [0, 5])

    def test_rank4_logits_accepted(self, rng):
        logits = Tensor(rng.standard_normal((4, 3, 1, 1)))
        r = classification_metrics(logits, [0, 1, 2, 0])
        assert 0.0 <= r.accuracy <= 1.0


class TestAggregation:
    def test_means_and_summed_counts(self):
        gt = np.ones((1, 1, 2, 2))
        a = segmentation_metrics(np.ones((1, 1, 2, 2)), gt)
        b = segmentation_metrics(np.zeros((1, 1, 2, 2)), gt)
        agg = aggregate_reports([a, b])
        assert agg.iou == pytest.approx(0.5)
        assert agg.tp == 4 and agg.fn == 4

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_reports([])

    def test_report_serialization(self):
        r = segmentation_metrics(np.ones((1, 1, 2, 2)), np.ones((1, 1, 2, 2)))
        d = r.to_dict()
        assert d["iou"] == 1.0
        assert "iou=1.0" in r.to_text()
