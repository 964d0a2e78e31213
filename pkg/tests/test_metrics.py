import time

import numpy as np
import pytest

from csilink import metrics as mt


class TestBer:
    def test_identical_streams(self):
        bits = np.ones((3, 8), dtype=np.uint8)
        assert mt.ber(bits, bits) == 0.0

    def test_complemented_streams(self):
        bits = np.zeros((2, 16), dtype=np.uint8)
        assert mt.ber(bits, 1 - bits) == 1.0

    def test_counting_reference(self):
        tx = np.zeros((3, 4), dtype=np.uint8)
        rx = tx.copy()
        rx[1, 0] = 1
        rx[2, :2] = 1
        assert mt.ber(tx, rx) == pytest.approx(3 / 12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mt.ber(np.zeros((2, 4)), np.zeros((2, 5)))

    def test_random_guess_band(self):
        rng = np.random.default_rng(0)
        tx = rng.integers(0, 2, size=200_000)
        rx = rng.integers(0, 2, size=200_000)
        assert 0.48 <= mt.ber(tx, rx) <= 0.52


class TestBler:
    def test_all_pass(self):
        assert mt.bler([True, True, True]) == 0.0

    def test_all_fail(self):
        assert mt.bler([False, False]) == 1.0

    def test_mixed_flags(self):
        assert mt.bler([True, False, False, True]) == 0.5

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mt.bler([])


class TestErrorCounts:
    def test_merge_identity(self):
        a = mt.ErrorCounts(3, 10, 1, 2)
        assert mt.merge(a, mt.ErrorCounts()) == a

    def test_merge_commutative(self):
        a = mt.ErrorCounts(3, 10, 1, 2)
        b = mt.ErrorCounts(5, 20, 0, 4)
        assert mt.merge(a, b) == mt.merge(b, a)

    def test_fold_over_partitions_matches_single_pass(self):
        rng = np.random.default_rng(1)
        parts = []
        for _ in range(50):
            bits_total = int(rng.integers(1, 1000))
            blocks_total = int(rng.integers(1, 20))
            parts.append(
                mt.ErrorCounts(
                    int(rng.integers(0, bits_total + 1)),
                    bits_total,
                    int(rng.integers(0, blocks_total + 1)),
                    blocks_total,
                )
            )
        folded = mt.ErrorCounts()
        for p in parts:
            folded = mt.merge(folded, p)
        assert folded.bit_errors == sum(p.bit_errors for p in parts)
        assert folded.bits_total == sum(p.bits_total for p in parts)
        assert folded.block_errors == sum(p.block_errors for p in parts)
        assert folded.blocks_total == sum(p.blocks_total for p in parts)
        # merge-then-compute equals totals-weighted average of the parts.
        weighted = sum(p.ber * p.bits_total for p in parts) / folded.bits_total
        assert folded.ber == pytest.approx(weighted)

    def test_rates_in_unit_interval(self):
        c = mt.ErrorCounts(5, 10, 1, 4)
        assert 0.0 <= c.ber <= 1.0 and 0.0 <= c.bler <= 1.0

    def test_invalid_counts_rejected(self):
        with pytest.raises(ValueError):
            mt.ErrorCounts(11, 10, 0, 0)

    def test_stderr_formula(self):
        c = mt.ErrorCounts(25, 100, 0, 1)
        assert c.ber_stderr == pytest.approx((0.25 * 0.75 / 100) ** 0.5)


class TestStopwatch:
    def test_normalized_values_in_unit_interval(self):
        sw = mt.Stopwatch()
        sw.add("a", 0.5)
        sw.add("b", 2.0)
        sw.add("c", 1.0)
        norm = mt.normalize_runtimes(sw.totals)
        assert all(0.0 < v <= 1.0 for v in norm.values())

    def test_max_normalizes_to_one(self):
        norm = mt.normalize_runtimes({"x": 1.0, "y": 4.0})
        assert norm["y"] == 1.0
        assert norm["x"] == 0.25

    def test_nested_sections_bounded_by_parent(self):
        sw = mt.Stopwatch()
        with sw.section("parent"):
            with sw.section("child_a"):
                time.sleep(0.01)
            with sw.section("child_b"):
                time.sleep(0.01)
        assert sw.get("child_a") + sw.get("child_b") <= sw.get("parent")

    def test_accumulates_across_entries(self):
        sw = mt.Stopwatch()
        for _ in range(3):
            with sw.section("loop"):
                pass
        assert sw.get("loop") >= 0.0
