import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bp_mask
from rt3.errors import InvalidConfig, NonDivisible
from rt3.matrix import is_block_regular, partition, sparsity
from rt3.model import ToyModel, init_toy_model
from rt3.pruning import BpConfig, bp_prune, bp_prune_model, sparsity_report

W = np.array([[1, 0, 0, 2], [0, 0, 0, 2], [0, 3, 0, 0], [0, 3, 0, 0]], dtype=float)


class TestBpConfig:
    def test_exactly_one_criterion(self):
        with pytest.raises(InvalidConfig):
            BpConfig()
        with pytest.raises(InvalidConfig):
            BpConfig(threshold=1.0, percentile=0.5)

    @pytest.mark.parametrize("kw", [{"threshold": -0.1}, {"percentile": -0.01}, {"percentile": 1.5}])
    def test_out_of_range(self, kw):
        with pytest.raises(InvalidConfig):
            BpConfig(**kw)

    def test_axis_aliases(self):
        assert BpConfig(axis="col", threshold=0.0).axis == "column"
        assert BpConfig(axis="rows", threshold=0.0).axis == "row"
        with pytest.raises(InvalidConfig):
            BpConfig(axis="diagonal", threshold=0.0)


class TestBpPrune:
    def test_worked_example(self):
        res = bp_prune(W, partition(W, 2, 1), BpConfig("column", threshold=1.0))
        assert res.kept_cols[(0, 0)] == [0, 3]  # block A prunes {1, 2}
        assert res.kept_cols[(1, 0)] == [1]  # block B prunes {0, 2, 3}
        expected = np.array([[1, 0, 0, 1], [1, 0, 0, 1], [0, 1, 0, 0], [0, 1, 0, 0]], dtype=bool)
        assert np.array_equal(res.mask, expected)
        assert res.achieved_sparsity == 10 / 16

    def test_zero_threshold_prunes_nothing(self):
        res = bp_prune(W, partition(W, 2, 1), BpConfig("column", threshold=0.0))
        assert res.mask.all()

    @pytest.mark.parametrize("axis", ["row", "column", "both"])
    def test_full_percentile_prunes_everything(self, axis):
        res = bp_prune(W, partition(W, 2, 2), BpConfig(axis, percentile=1.0))
        assert not res.mask.any()
        assert res.achieved_sparsity == 1.0

    def test_percentile_ties_prune_lower_index(self):
        m = np.ones((2, 4))
        res = bp_prune(m, partition(m, 1, 1), BpConfig("column", percentile=0.5))
        assert res.kept_cols[(0, 0)] == [2, 3]

    def test_both_axes_prune_columns_first(self):
        # column norms (4.12, 3.04) drop column 1; the remaining rows score (1, 4)
        m = np.array([[1.0, 3.0], [4.0, 0.5]])
        res = bp_prune(m, partition(m, 1, 1), BpConfig("both", percentile=0.5))
        assert res.kept_cols[(0, 0)] == [0]
        assert res.kept_rows[(0, 0)] == [1]

    def test_partition_must_match(self):
        with pytest.raises(InvalidConfig):
            bp_prune(np.zeros((4, 4)), partition(np.zeros((2, 2)), 1, 1), BpConfig(threshold=0.0))

    def test_deterministic(self):
        m = np.random.default_rng(0).normal(size=(8, 8))
        part = partition(m, 2, 2)
        a = bp_prune(m, part, BpConfig("both", percentile=0.4))
        b = bp_prune(m.copy(), part, BpConfig("both", percentile=0.4))
        assert np.array_equal(a.mask, b.mask)

    @given(
        st.integers(0, 2**32 - 1),
        st.sampled_from([(1, 1), (2, 1), (2, 2), (4, 2), (4, 4)]),
        st.sampled_from(["row", "column", "both"]),
        st.floats(0.0, 1.0),
    )
    @settings(max_examples=150, deadline=None)
    def test_block_regular_and_matches_oracle(self, seed, grid, axis, rho):
        rng = np.random.default_rng(seed)
        m = rng.normal(size=(8, 8))
        part = partition(m, *grid)
        res = bp_prune(m, part, BpConfig(axis, percentile=rho))
        assert is_block_regular(res.mask, part)
        assert res.achieved_sparsity == sparsity(res.mask)
        assert res.mask.tolist() == bp_mask(m.tolist(), *grid, axis, percentile=rho)

    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.sampled_from(["row", "column", "both"]))
    @settings(max_examples=100, deadline=None)
    def test_threshold_monotone(self, seed, t1, t2, axis):
        t1, t2 = sorted((t1, t2))
        m = np.random.default_rng(seed).normal(size=(6, 6))
        part = partition(m, 3, 2)
        lo = bp_prune(m, part, BpConfig(axis, threshold=t1)).mask
        hi = bp_prune(m, part, BpConfig(axis, threshold=t2)).mask
        assert np.all(lo >= hi)


class TestBpPruneModel:
    def make_model(self):
        return init_toy_model([8, 8, 4], seed=3)

    def test_half_percentile_sparsity(self):
        model = self.make_model()
        backbone, results = bp_prune_model(model, BpConfig("column", k=2, k_col=1, percentile=0.5))
        for name, res in results.items():
            part = res.partition
            # one line of slack per block
            slack = part.n_blocks * part.block_height / res.mask.size
            assert abs(res.achieved_sparsity - 0.5) <= slack
            assert np.array_equal(backbone.layer(name).mask, res.mask)

    def test_zero_percentile_is_identity(self):
        model = self.make_model()
        backbone, _ = bp_prune_model(model, BpConfig("row", k=2, percentile=0.0))
        x = np.random.default_rng(1).normal(size=(20, 8))
        assert np.array_equal(backbone.forward(x)[0], model.forward(x)[0])

    def test_original_untouched(self):
        model = self.make_model()
        before = model.weight_checksum()
        bp_prune_model(model, BpConfig("column", k=2, percentile=0.5))
        assert model.weight_checksum() == before

    def test_masks_survive_serialization(self):
        backbone, _ = bp_prune_model(self.make_model(), BpConfig("both", k=2, k_col=2, percentile=0.25))
        restored = ToyModel.from_dict(json.loads(json.dumps(backbone.to_dict())))
        x = np.random.default_rng(2).normal(size=(10, 8))
        assert np.array_equal(restored.forward(x)[0], backbone.forward(x)[0])
        assert restored.weight_checksum() == backbone.weight_checksum()

    def test_per_layer_config(self):
        backbone, results = bp_prune_model(self.make_model(), {"fc1": BpConfig("column", k=2, percentile=0.5)})
        assert set(results) == {"fc1"}
        assert backbone.layer("fc2").mask.all()

    def test_non_divisible_propagates(self):
        with pytest.raises(NonDivisible):
            bp_prune_model(self.make_model(), BpConfig("column", k=3, percentile=0.5))

    def test_report(self):
        _, results = bp_prune_model(self.make_model(), BpConfig("column", k=2, percentile=0.5))
        rows = sparsity_report(results)
        assert [r["layer"] for r in rows] == ["fc1", "fc2"]
        assert all(r["blocks"] == 2 for r in rows)
        assert all(math.isclose(r["sparsity"], 0.5) for r in rows)
