"""Hot-loop kernels with a compiled backend and a pure-Python fallback.

The compiled extension ``rt3.kernels._core`` is used when it imports; set
``RT3_PURE_PYTHON=1`` to force the fallback.  Both expose the same three
functions:

``block_line_norms(w, bh, bw, by_column)``
    l2 norm of every row/column inside every ``bh x bw`` block.
``assign_block_patterns(w, patterns)``
    per ``p x p`` block, the pattern index maximizing ``||B * q||``.
``drain(remaining, energy, capacity, stop_fraction, max_runs)``
    repeated battery deduction until exhaustion or a threshold crossing.
"""

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("RT3_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback


def get_backend(name=None):
    """Return the kernel module for ``name`` ('cython', 'python' or active)."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _core

        return _core
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        from . import _core  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names


def block_line_norms(w, bh, bw, by_column):
    w = np.ascontiguousarray(w, dtype=np.float64)
    return _impl.block_line_norms(w, int(bh), int(bw), bool(by_column))


def assign_block_patterns(w, patterns):
    w = np.ascontiguousarray(w, dtype=np.float64)
    patterns = np.ascontiguousarray(patterns, dtype=np.uint8)
    return _impl.assign_block_patterns(w, patterns)


def drain(remaining, energy, capacity, stop_fraction=0.0, max_runs=2**62):
    count, rem = _impl.drain(float(remaining), float(energy), float(capacity), float(stop_fraction), int(max_runs))
    return int(count), float(rem)
