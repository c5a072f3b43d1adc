import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import best_pattern, line_norm
from rt3 import kernels

BACKENDS = kernels.available_backends()


def test_cython_backend_built():
    # the compiled extension is part of the package; a silent fallback would hide a broken build
    assert "cython" in BACKENDS
    assert kernels.BACKEND in BACKENDS


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


@pytest.mark.parametrize("name", BACKENDS)
class TestBackend:
    @given(st.integers(0, 2**32 - 1), st.sampled_from([(1, 1), (2, 3), (4, 2)]), st.booleans())
    @settings(max_examples=40, deadline=None)
    def test_line_norms(self, name, seed, grid, by_column):
        impl = kernels.get_backend(name)
        w = np.random.default_rng(seed).normal(size=(8, 12))
        bh, bw = 8 // grid[0], 12 // grid[1]
        out = impl.block_line_norms(w, bh, bw, by_column)
        for br in range(grid[0]):
            for bc in range(grid[1]):
                block = w[br * bh : (br + 1) * bh, bc * bw : (bc + 1) * bw].tolist()
                for t in range(bw if by_column else bh):
                    assert out[br, bc, t] == pytest.approx(line_norm(block, t, by_column), rel=1e-12)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 5))
    @settings(max_examples=40, deadline=None)
    def test_assign_patterns(self, name, seed, m):
        # small integer weights make ties common and exact in both backends
        rng = np.random.default_rng(seed)
        w = rng.integers(-2, 3, size=(8, 12)).astype(np.float64)
        pats = rng.integers(0, 2, size=(m, 4, 4)).astype(np.uint8)
        out = kernels.get_backend(name).assign_block_patterns(w, pats)
        for br in range(2):
            for bc in range(3):
                block = w[br * 4 : br * 4 + 4, bc * 4 : bc * 4 + 4].tolist()
                assert out[br, bc] == best_pattern(block, pats.tolist())

    def test_unequal_pattern_sizes(self, name):
        # a 2-cell pattern and a 3-cell superset: the superset always retains at least as much
        w = np.array([[1.0, 2.0], [3.0, 4.0]])
        two = np.array([[1, 0], [0, 1]], np.uint8)
        three = np.array([[1, 1], [0, 1]], np.uint8)
        assert kernels.get_backend(name).assign_block_patterns(w, np.stack([two, three]))[0, 0] == 1

    def test_drain(self, name):
        impl = kernels.get_backend(name)
        assert impl.drain(3.0, 1.0, 3.0, 0.0, 2**62) == (3, 0.0)
        # stops right after the run that crosses 50%
        assert impl.drain(6.0, 1.0, 6.0, 0.5, 2**62) == (4, 2.0)
        assert impl.drain(6.0, 1.0, 6.0, 0.0, 2) == (2, 4.0)
        assert impl.drain(0.5, 1.0, 6.0, 0.0, 2**62) == (0, 0.5)


def test_backends_agree_on_drain():
    if len(BACKENDS) < 2:
        pytest.skip("only one backend available")
    py, cy = kernels.get_backend("python"), kernels.get_backend("cython")
    rng = np.random.default_rng(0)
    for _ in range(50):
        cap = float(rng.uniform(10, 1000))
        e = float(rng.uniform(0.1, 3))
        stop = float(rng.uniform(0, 0.9))
        assert py.drain(cap, e, cap, stop, 2**62) == cy.drain(cap, e, cap, stop, 2**62)
