import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxyforge.metrics import (
    ConfusionMatrix,
    confusion_update,
    format_iou_table,
    miou,
    proxy_report,
)
from proxyforge.tensors import LabelMap, TensorError


def lm(a):
    return LabelMap(np.asarray(a, dtype=np.uint8))


class TestConfusionUpdate:
    def test_perfect_prediction_is_diagonal(self):
        rng = np.random.default_rng(0)
        labels = lm(rng.integers(0, 4, size=(8, 8)))
        cm = ConfusionMatrix(4)
        confusion_update(cm, labels, labels)
        assert cm.counts.sum() == 64
        assert np.all(cm.counts == np.diag(np.diag(cm.counts)))

    def test_all_ignored_gt_changes_nothing(self):
        cm = ConfusionMatrix(3)
        confusion_update(cm, lm(np.full((4, 4), 255)), lm(np.zeros((4, 4))))
        assert cm.total == 0

    def test_matches_tally_oracle(self):
        rng = np.random.default_rng(1)
        gt = rng.integers(0, 4, size=(16, 16)).astype(np.uint8)
        gt[rng.random((16, 16)) < 0.1] = 255
        pred = rng.integers(0, 4, size=(16, 16)).astype(np.uint8)
        cm = ConfusionMatrix(4)
        confusion_update(cm, lm(gt), lm(pred))
        expected = np.zeros((4, 4), dtype=np.uint64)
        for y in range(16):
            for x in range(16):
                if gt[y, x] != 255:
                    expected[gt[y, x], pred[y, x]] += 1
        assert np.array_equal(cm.counts, expected)

    def test_shape_mismatch(self):
        with pytest.raises(TensorError):
            confusion_update(ConfusionMatrix(2), lm(np.zeros((2, 2))), lm(np.zeros((3, 2))))

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_additive_merge(self, seed):
        rng = np.random.default_rng(seed)
        pairs = [
            (
                lm(rng.integers(0, 3, size=(5, 5))),
                lm(rng.integers(0, 3, size=(5, 5))),
            )
            for _ in range(2)
        ]
        joint = ConfusionMatrix(3)
        parts = []
        for gt, pred in pairs:
            confusion_update(joint, gt, pred)
            cm = ConfusionMatrix(3)
            confusion_update(cm, gt, pred)
            parts.append(cm)
        assert np.array_equal(joint.counts, parts[0].merge(parts[1]).counts)


class TestMiou:
    def test_perfect(self):
        cm = ConfusionMatrix(3, np.diag([5, 2, 9]).astype(np.uint64))
        iou, mean = miou(cm)
        assert np.allclose(iou, 1.0) and mean == 1.0

    def test_hand_computed_example(self):
        cm = ConfusionMatrix(2, np.array([[50, 10], [20, 20]], dtype=np.uint64))
        iou, mean = miou(cm)
        assert iou[0] == pytest.approx(0.625)
        assert iou[1] == pytest.approx(0.4)
        assert mean == pytest.approx(0.5125)

    def test_absent_class_excluded(self):
        cm = ConfusionMatrix(3, np.diag([5, 0, 9]).astype(np.uint64))
        iou, mean = miou(cm)
        assert np.isnan(iou[1]) and mean == 1.0

    def test_all_empty_rejected(self):
        with pytest.raises(ValueError):
            miou(ConfusionMatrix(3))

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_permutation_equivariant(self, seed):
        rng = np.random.default_rng(seed)
        counts = rng.integers(0, 30, size=(4, 4)).astype(np.uint64)
        counts += np.diag(rng.integers(1, 10, size=4)).astype(np.uint64)
        perm = rng.permutation(4)
        iou, mean = miou(ConfusionMatrix(4, counts))
        iou_p, mean_p = miou(ConfusionMatrix(4, counts[np.ix_(perm, perm)]))
        assert np.allclose(iou[perm], iou_p, equal_nan=True)
        assert mean == pytest.approx(mean_p)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), cls=st.integers(0, 3), extra=st.integers(1, 50))
    def test_correct_pixels_never_hurt(self, seed, cls, extra):
        rng = np.random.default_rng(seed)
        counts = rng.integers(0, 30, size=(4, 4)).astype(np.uint64)
        counts += np.diag(rng.integers(1, 10, size=4)).astype(np.uint64)
        iou_before, _ = miou(ConfusionMatrix(4, counts.copy()))
        counts[cls, cls] += extra
        iou_after, _ = miou(ConfusionMatrix(4, counts))
        assert np.all(iou_after >= iou_before - 1e-12)


class TestProxyReport:
    def test_all_ignored_proxy(self):
        rep = proxy_report(lm(np.zeros((4, 4))), lm(np.full((4, 4), 255)), 3)
        assert rep["coverage"] == 0.0
        assert np.isnan(rep["precision"])

    def test_half_correct(self):
        gt = np.zeros((2, 4), dtype=np.uint8)
        proxy = np.full((2, 4), 255, dtype=np.uint8)
        proxy[0] = 0
        rep = proxy_report(lm(gt), lm(proxy), 2)
        assert rep["coverage"] == 0.5
        assert rep["precision"] == 1.0

    def test_matches_tally_oracle(self):
        rng = np.random.default_rng(2)
        gt = rng.integers(0, 3, size=(8, 8)).astype(np.uint8)
        gt[rng.random((8, 8)) < 0.1] = 255
        proxy = rng.integers(0, 3, size=(8, 8)).astype(np.uint8)
        proxy[rng.random((8, 8)) < 0.4] = 255
        rep = proxy_report(lm(gt), lm(proxy), 3)
        n_lab = n_both = n_hit = 0
        for y in range(8):
            for x in range(8):
                if proxy[y, x] != 255:
                    n_lab += 1
                    if gt[y, x] != 255:
                        n_both += 1
                        n_hit += proxy[y, x] == gt[y, x]
        assert rep["coverage"] == n_lab / 64
        assert rep["precision"] == pytest.approx(n_hit / n_both)


def test_format_iou_table():
    text = format_iou_table(np.array([1.0, np.nan, 0.5]), 0.75)
    assert "mIoU" in text and "-" in text
