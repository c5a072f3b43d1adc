"""Pure numpy/Python kernels. Reference semantics for ``_core.pyx``."""

import numpy as np


def block_line_norms(w, bh, bw, by_column):
    """Per-block l2 norms of every column (``by_column``) or row.

    Returns an array of shape ``(rows // bh, cols // bw, lines)``.
    """
    rows, cols = w.shape
    blocks = w.reshape(rows // bh, bh, cols // bw, bw).transpose(0, 2, 1, 3)
    sq = blocks * blocks
    return np.sqrt(sq.sum(axis=2) if by_column else sq.sum(axis=3))


def assign_block_patterns(w, patterns):
    """Index of the pattern retaining the largest squared mass per block."""
    m, p, _ = patterns.shape
    rows, cols = w.shape
    blocks = w.reshape(rows // p, p, cols // p, p).transpose(0, 2, 1, 3)
    sq = (blocks * blocks).reshape(rows // p, cols // p, p * p)
    scores = sq @ patterns.reshape(m, p * p).T.astype(np.float64)
    # argmax returns the first maximum, i.e. the lowest pattern index on ties
    return np.argmax(scores, axis=-1).astype(np.int64)


def drain(remaining, energy, capacity, stop_fraction, max_runs):
    count = 0
    while count < max_runs and remaining >= energy:
        remaining -= energy
        count += 1
        if remaining / capacity < stop_fraction:
            break
    return count, remaining
