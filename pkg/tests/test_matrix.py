import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rt3.errors import DimensionMismatch, InvalidConfig, NonDivisible, NotBlockRegular
from rt3.matrix import (
    INDEX_BYTES,
    apply_mask,
    as_weight_matrix,
    block_l2_norms,
    encode_block_sparse,
    encode_coo,
    index_bytes,
    is_block_regular,
    mask_from_dict,
    mask_to_dict,
    masked_matmul,
    matrix_from_dict,
    matrix_to_dict,
    partition,
    partition_line_norms,
    sparsity,
    total_bytes,
)


def random_block_regular_mask(rng, part, p_keep=0.6):
    mask = np.zeros(part.shape, dtype=bool)
    for _, _, rs, cs in part.blocks():
        keep_r = rng.random(part.block_height) < p_keep
        keep_c = rng.random(part.block_width) < p_keep
        mask[rs, cs] = np.outer(keep_r, keep_c)
    return mask


class TestWeightMatrix:
    def test_rejects_non_finite(self):
        with pytest.raises(InvalidConfig):
            as_weight_matrix([[1.0, np.nan]])
        with pytest.raises(InvalidConfig):
            as_weight_matrix([[np.inf, 0.0]])

    def test_flat_data_reshaped(self):
        m = as_weight_matrix([1, 2, 3, 4, 5, 6], rows=2, cols=3)
        assert m.shape == (2, 3)
        assert m[1, 0] == 4

    def test_flat_data_wrong_length(self):
        with pytest.raises((InvalidConfig, DimensionMismatch)):
            as_weight_matrix([1, 2, 3], rows=2, cols=2)

    def test_json_round_trip(self):
        m = np.random.default_rng(0).normal(size=(3, 5))
        d = json.loads(json.dumps(matrix_to_dict(m)))
        assert d["rows"] == 3 and d["cols"] == 5 and len(d["data"]) == 15
        assert np.array_equal(matrix_from_dict(d), m)


class TestPartition:
    def test_two_row_blocks(self):
        part = partition(np.zeros((4, 4)), 2, 1)
        assert part.n_blocks == 2
        assert (part.block_height, part.block_width) == (2, 4)

    def test_identity_partition(self):
        part = partition(np.zeros((4, 4)), 1, 1)
        assert part.n_blocks == 1
        assert (part.block_height, part.block_width) == (4, 4)

    def test_fine_grid(self):
        part = partition(np.zeros((100, 100)), 25, 25)
        assert part.n_blocks == 625
        assert (part.block_height, part.block_width) == (4, 4)

    @pytest.mark.parametrize("k,k_col", [(3, 1), (1, 3), (5, 5)])
    def test_non_divisible_rejected(self, k, k_col):
        with pytest.raises(NonDivisible):
            partition(np.zeros((4, 4)), k, k_col)

    def test_bad_divisions(self):
        with pytest.raises(InvalidConfig):
            partition(np.zeros((4, 4)), 0, 1)

    def test_blocks_cover_each_element_once(self):
        part = partition(np.zeros((6, 8)), 3, 2)
        seen = np.zeros((6, 8), dtype=int)
        for _, _, rs, cs in part.blocks():
            seen[rs, cs] += 1
        assert np.all(seen == 1)


class TestMask:
    def test_all_ones_is_identity(self):
        m = np.arange(12.0).reshape(3, 4)
        assert np.array_equal(apply_mask(m, np.ones((3, 4), bool)), m)

    def test_all_zeros(self):
        m = np.arange(12.0).reshape(3, 4) + 1
        assert not apply_mask(m, np.zeros((3, 4), bool)).any()

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            apply_mask(np.zeros((3, 4)), np.ones((4, 3), bool))

    def test_sparsity(self):
        mask = np.array([[1, 0], [0, 0]], dtype=bool)
        assert sparsity(mask) == 0.75

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_idempotent_and_monotone(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.normal(size=(5, 6))
        a = rng.random((5, 6)) < 0.5
        b = rng.random((5, 6)) < 0.5
        once = apply_mask(m, a)
        assert np.array_equal(apply_mask(once, a), once)
        # zeros never reappear under a further mask
        assert not apply_mask(once, b)[~a].any()
        assert 0.0 <= sparsity(a) <= 1.0

    def test_rle_round_trip(self):
        rng = np.random.default_rng(3)
        for shape in [(1, 1), (4, 4), (7, 3)]:
            mask = rng.random(shape) < 0.5
            d = json.loads(json.dumps(mask_to_dict(mask)))
            assert np.array_equal(mask_from_dict(d), mask)

    def test_rle_runs(self):
        mask = np.array([[1, 1, 0], [0, 0, 1]], dtype=bool)
        assert mask_to_dict(mask) == {"rows": 2, "cols": 3, "start": 1, "runs": [2, 3, 1]}

    def test_rle_length_checked(self):
        with pytest.raises(DimensionMismatch):
            mask_from_dict({"rows": 2, "cols": 2, "start": 1, "runs": [3]})

    def test_masked_matmul(self):
        rng = np.random.default_rng(1)
        x, w = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
        mask = rng.random((2, 4)) < 0.5
        assert np.allclose(masked_matmul(x, w, mask), x @ (w * mask).T)


class TestNorms:
    def test_three_four_five(self):
        assert block_l2_norms(np.array([[3.0], [4.0]]), "column")[0] == 5.0

    def test_zero_column(self):
        assert block_l2_norms(np.zeros((3, 2)), "column").tolist() == [0.0, 0.0]

    def test_row_axis(self):
        assert block_l2_norms(np.array([[3.0, 4.0]]), "row").tolist() == [5.0]

    def test_both_rejected(self):
        with pytest.raises(InvalidConfig):
            block_l2_norms(np.zeros((2, 2)), "both")

    def test_matches_double_loop(self):
        blk = np.random.default_rng(7).normal(size=(5, 5))
        for axis in ("column", "row"):
            got = block_l2_norms(blk, axis)
            for j in range(5):
                acc = 0.0
                for i in range(5):
                    v = blk[i, j] if axis == "column" else blk[j, i]
                    acc += v * v
                assert abs(got[j] - np.sqrt(acc)) <= 1e-12

    def test_partition_norms_match_blockwise(self):
        m = np.random.default_rng(2).normal(size=(6, 8))
        part = partition(m, 3, 2)
        for axis in ("column", "row"):
            all_norms = partition_line_norms(m, part, axis)
            for br, bc, rs, cs in part.blocks():
                assert np.allclose(all_norms[br, bc], block_l2_norms(m[rs, cs], axis), rtol=0, atol=1e-12)


class TestEncodings:
    def test_coo_example(self):
        coo = encode_coo(np.array([[1.0, 0.0], [0.0, 2.0]]))
        assert coo.row.tolist() == [0, 1]
        assert coo.col.tolist() == [0, 1]
        assert coo.data.tolist() == [1.0, 2.0]

    def test_single_kept_column(self):
        m = np.arange(1.0, 17.0).reshape(4, 4)
        mask = np.zeros((4, 4), dtype=bool)
        mask[:, 2] = True
        idx = encode_block_sparse(m, partition(m, 1, 1), mask)
        assert idx.n_indices == 1
        assert idx.n_values == 4
        assert index_bytes(idx) == INDEX_BYTES
        assert np.array_equal(idx.decode(), m * mask)

    def test_irregular_mask_rejected(self):
        m = np.ones((2, 2))
        mask = np.array([[1, 0], [0, 1]], dtype=bool)
        with pytest.raises(NotBlockRegular):
            encode_block_sparse(m, partition(m, 1, 1), mask)

    def test_block_regularity_check(self):
        part = partition(np.zeros((4, 4)), 2, 2)
        mask = random_block_regular_mask(np.random.default_rng(0), part)
        assert is_block_regular(mask, part)
        bad = np.ones((4, 4), bool)
        bad[0, 0] = False
        assert not is_block_regular(bad, part)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_round_trips(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.normal(size=(10, 10))
        part = partition(m, 5, 2)
        mask = random_block_regular_mask(rng, part)
        assert np.array_equal(encode_coo(m).decode(), m)
        assert np.array_equal(encode_block_sparse(m, part, mask).decode(), apply_mask(m, mask))

    @given(st.integers(0, 2**32 - 1), st.sampled_from([(2, 2), (5, 1), (1, 5), (5, 5), (2, 5)]))
    @settings(max_examples=100, deadline=None)
    def test_block_index_never_larger_than_coo(self, seed, grid):
        rng = np.random.default_rng(seed)
        m = rng.normal(size=(10, 10)) + 5.0  # no accidental zeros
        part = partition(m, *grid)
        mask = random_block_regular_mask(rng, part, p_keep=rng.uniform(0.3, 1.0))
        bs = encode_block_sparse(m, part, mask)
        coo = encode_coo(apply_mask(m, mask))
        # condition: in every non-empty block, kept elements exceed kept lines
        cond = True
        for _, _, rs, cs in part.blocks():
            blk = mask[rs, cs]
            kept = int(blk.sum())
            lines = int(blk.any(axis=1).sum() + blk.any(axis=0).sum())
            if kept and kept <= lines:
                cond = False
        if cond:
            assert index_bytes(bs) <= index_bytes(coo)
        assert total_bytes(bs) == index_bytes(bs) + 4 * int(mask.sum())
