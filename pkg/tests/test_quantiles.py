import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxyforge.quantiles import (
    ClassPools,
    HISTOGRAM_BINS,
    Histogram,
    MIN_CLASS_THRESHOLD,
    class_thresholds,
    fuse_adversarial,
    minmax_normalize,
    pool_accumulate,
    top_fraction_threshold,
)
from proxyforge.tensors import ConfidenceMap, LabelMap, TensorError

from oracles import sort_threshold


class TestMinmaxNormalize:
    def test_affine_map(self):
        out = minmax_normalize(np.array([[0.2, 0.5, 0.8]]))
        assert np.allclose(out.values, [[0.0, 0.5, 1.0]])

    def test_constant_map_is_half(self):
        out = minmax_normalize(np.full((3, 3), 0.42))
        assert np.all(out.values == np.float32(0.5))

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(0)
        src = rng.normal(size=(8, 8))
        lo, hi = src.min(), src.max()
        expected = ((src - lo) / (hi - lo)).astype(np.float32)
        assert np.array_equal(minmax_normalize(src).values, expected)


class TestFuse:
    def test_equal_maps(self):
        d = ConfidenceMap(np.random.default_rng(0).random((4, 4)).astype(np.float32))
        assert np.array_equal(fuse_adversarial(d, d).values, d.values)

    def test_zero_and_one(self):
        z = ConfidenceMap(np.zeros((2, 2), dtype=np.float32))
        o = ConfidenceMap(np.ones((2, 2), dtype=np.float32))
        assert np.all(fuse_adversarial(z, o).values == np.float32(0.5))

    def test_elementwise_oracle_and_bounds(self):
        rng = np.random.default_rng(1)
        d1 = ConfidenceMap(rng.random((5, 5)).astype(np.float32))
        d2 = ConfidenceMap(rng.random((5, 5)).astype(np.float32))
        out = fuse_adversarial(d1, d2).values
        expected = ((d1.values.astype(np.float64) + d2.values) / 2).astype(np.float32)
        assert np.array_equal(out, expected)
        assert np.all(out >= np.minimum(d1.values, d2.values) - 1e-7)
        assert np.all(out <= np.maximum(d1.values, d2.values) + 1e-7)

    def test_shape_mismatch(self):
        with pytest.raises(TensorError):
            fuse_adversarial(
                ConfidenceMap(np.zeros((2, 2), dtype=np.float32)),
                ConfidenceMap(np.zeros((3, 2), dtype=np.float32)),
            )


class TestTopFractionThreshold:
    def test_decile_example(self):
        values = [0.1 * i for i in range(1, 11)]
        t = top_fraction_threshold(values, 0.3)
        assert t == pytest.approx(0.7)
        assert sum(1 for v in values if v > t) == 3

    def test_p_one_sentinel(self):
        assert top_fraction_threshold([0.3, 0.9], 1.0) == -np.inf

    def test_histogram_close_to_exact(self):
        rng = np.random.default_rng(2)
        values = rng.random(10_000)
        h = Histogram()
        h.add(values)
        exact = top_fraction_threshold(values, 0.6)
        approx = top_fraction_threshold(h, 0.6)
        assert abs(exact - approx) <= 2.0**-16

    def test_empty_with_p_below_one(self):
        with pytest.raises(ValueError):
            top_fraction_threshold([], 0.5)

    @settings(max_examples=100, deadline=None)
    @given(
        values=st.lists(st.floats(0, 1, width=32), min_size=1, max_size=200),
        p_lo=st.floats(0, 1),
        p_hi=st.floats(0, 1),
    )
    def test_monotone_in_p(self, values, p_lo, p_hi):
        if p_lo > p_hi:
            p_lo, p_hi = p_hi, p_lo
        assert top_fraction_threshold(values, p_hi) <= top_fraction_threshold(
            values, p_lo
        )

    @settings(max_examples=100, deadline=None)
    @given(
        seed=st.integers(0, 2**32 - 1),
        n=st.integers(1, 300),
        p=st.floats(0, 1),
    )
    def test_exact_count_for_distinct_values(self, seed, n, p):
        rng = np.random.default_rng(seed)
        values = rng.permutation(n) / max(n, 1) * 0.999 + 0.0005
        t = top_fraction_threshold(values, p)
        assert int(np.sum(values > t)) == int(np.floor(p * n))


class TestHistogram:
    def test_merge_totals(self):
        rng = np.random.default_rng(3)
        h1, h2 = Histogram(), Histogram()
        h1.add(rng.random(100))
        h2.add(rng.random(50))
        m = h1.merge(h2)
        assert m.total == 150
        assert m.counts.sum() == 150

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_merge_associative_commutative(self, seed):
        rng = np.random.default_rng(seed)
        hs = []
        for _ in range(3):
            h = Histogram()
            h.add(rng.random(rng.integers(0, 40)))
            hs.append(h)
        a, b, c = hs
        left = a.merge(b).merge(c)
        right = a.merge(c.merge(b))
        assert np.array_equal(left.counts, right.counts)
        assert left.total == right.total
        assert left.min_value == right.min_value
        assert left.max_value == right.max_value

    def test_serialization_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        h = Histogram()
        h.add(rng.random(1000))
        h.save(tmp_path / "h.ten")
        back = Histogram.load(tmp_path / "h.ten")
        assert np.array_equal(back.counts, h.counts)
        assert back.total == h.total
        assert back.min_value == h.min_value
        assert back.max_value == h.max_value

    def test_rejects_out_of_domain(self):
        with pytest.raises(TensorError):
            Histogram().add(np.array([1.5]))


def _pools_instance(rng, h=8, w=8, classes=3):
    mc = ConfidenceMap(rng.random((h, w)).astype(np.float32))
    pc = LabelMap(rng.integers(0, classes, size=(h, w)).astype(np.uint8))
    a = ConfidenceMap(rng.random((h, w)).astype(np.float32))
    return mc, pc, a


class TestPoolAccumulate:
    def test_all_pass(self):
        rng = np.random.default_rng(5)
        mc, pc, a = _pools_instance(rng)
        pools = ClassPools(3)
        pool_accumulate(pools, mc, pc, a, -np.inf)
        assert sum(pools.pool_sizes()) == 64

    def test_none_pass(self):
        rng = np.random.default_rng(6)
        mc, pc, a = _pools_instance(rng)
        pools = ClassPools(3)
        pool_accumulate(pools, mc, pc, a, np.inf)
        assert sum(pools.pool_sizes()) == 0

    def test_matches_filter_oracle(self):
        rng = np.random.default_rng(7)
        mc, pc, a = _pools_instance(rng)
        t1 = 0.5
        pools = ClassPools(3)
        pool_accumulate(pools, mc, pc, a, t1)
        for l in range(3):
            expected = sorted(
                float(mc.values[y, x])
                for y in range(8)
                for x in range(8)
                if pc.values[y, x] == l and a.values[y, x] > t1
            )
            assert sorted(pools.values[l]) == expected

    def test_rejects_ignore_in_predictions(self):
        rng = np.random.default_rng(8)
        mc, _, a = _pools_instance(rng)
        pc = LabelMap(np.full((8, 8), 255, dtype=np.uint8))
        with pytest.raises(TensorError):
            pool_accumulate(ClassPools(3), mc, pc, a, -np.inf)


class TestClassThresholds:
    def test_sorted_pool_example(self):
        pools = ClassPools(1)
        pools.add(0, np.array([0.2, 0.4, 0.6, 0.8, 1.0]))
        t2 = class_thresholds(pools, 0.4)
        assert t2[0] == pytest.approx(0.6)

    def test_empty_pool_sentinel(self):
        pools = ClassPools(2)
        pools.add(0, np.array([0.5]))
        t2 = class_thresholds(pools, 0.5)
        assert np.isinf(t2[1])

    def test_p2_one_passes_everything(self):
        pools = ClassPools(1)
        pools.add(0, np.array([0.3, 0.9]))
        t2 = class_thresholds(pools, 1.0)
        assert 0 < t2[0] < 0.3
        assert t2[0] == pytest.approx(0.3, rel=1e-5)

    def test_clamped_positive(self):
        pools = ClassPools(1)
        pools.add(0, np.array([1e-9, 2e-9, 3e-9]))
        t2 = class_thresholds(pools, 1.0)
        assert t2[0] >= MIN_CLASS_THRESHOLD

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(9)
        values = rng.random(137)
        pools = ClassPools(1)
        pools.add(0, values)
        for p2 in (0.1, 0.37, 0.8):
            assert class_thresholds(pools, p2)[0] == pytest.approx(
                max(sort_threshold(values, p2), MIN_CLASS_THRESHOLD)
            )
