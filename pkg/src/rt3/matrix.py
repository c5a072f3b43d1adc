"""Dense weight matrices, block partitions, binary masks and sparse encodings.

Matrices are plain ``float64`` numpy arrays in row-major (C) order and masks
are ``bool`` arrays of the same shape.  Nothing here mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import kernels
from .errors import DimensionMismatch, InvalidConfig, NonDivisible, NotBlockRegular

#: storage model for :func:`index_bytes`; only used for relative comparisons
INDEX_BYTES = 4
VALUE_BYTES = 4

_ROW_AXES = ("row", "rows")
_COL_AXES = ("col", "cols", "column", "columns")


def normalize_axis(axis: str) -> str:
    if axis in _ROW_AXES:
        return "row"
    if axis in _COL_AXES:
        return "column"
    if axis == "both":
        return "both"
    raise InvalidConfig(f"unknown axis {axis!r}")


def as_weight_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate ``data`` as a finite 2-D matrix (optionally reshaping a flat list)."""
    arr = np.array(data, dtype=np.float64, order="C")
    if rows is not None and cols is not None:
        if arr.size != rows * cols:
            raise DimensionMismatch(f"data length {arr.size} != {rows}x{cols}")
        arr = arr.reshape(rows, cols)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidConfig("weight matrix contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class BlockPartition:
    """``k`` row divisions by ``k_col`` column divisions of a ``rows x cols`` matrix."""

    rows: int
    cols: int
    k: int = 1
    k_col: int = 1

    @property
    def block_height(self) -> int:
        return self.rows // self.k

    @property
    def block_width(self) -> int:
        return self.cols // self.k_col

    @property
    def n_blocks(self) -> int:
        return self.k * self.k_col

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def slices(self, br: int, bc: int) -> tuple[slice, slice]:
        h, w = self.block_height, self.block_width
        return slice(br * h, (br + 1) * h), slice(bc * w, (bc + 1) * w)

    def blocks(self) -> Iterator[tuple[int, int, slice, slice]]:
        """Yield ``(br, bc, row_slice, col_slice)`` in row-major block order."""
        for br in range(self.k):
            for bc in range(self.k_col):
                yield (br, bc, *self.slices(br, bc))


def partition(matrix: np.ndarray, k: int, k_col: int = 1) -> BlockPartition:
    """Split ``matrix`` into ``k`` row-wise by ``k_col`` column-wise blocks.

    Sizes that do not divide evenly are rejected rather than padded.
    """
    if k < 1 or k_col < 1:
        raise InvalidConfig(f"block divisions must be >= 1 (got k={k}, k_col={k_col})")
    rows, cols = np.shape(matrix)
    if rows % k or cols % k_col:
        raise NonDivisible(f"{rows}x{cols} matrix cannot be split into {k}x{k_col} blocks")
    return BlockPartition(rows, cols, k, k_col)


def square_partition(matrix: np.ndarray, p_size: int) -> BlockPartition:
    """Partition into ``p_size x p_size`` tiles."""
    rows, cols = np.shape(matrix)
    if p_size < 1 or rows % p_size or cols % p_size:
        raise NonDivisible(f"{rows}x{cols} matrix is not tileable by {p_size}x{p_size}")
    return BlockPartition(rows, cols, rows // p_size, cols // p_size)


def _check_same_shape(a, b) -> None:
    if np.shape(a) != np.shape(b):
        raise DimensionMismatch(f"shape {np.shape(a)} does not match {np.shape(b)}")


def apply_mask(matrix: np.ndarray, mask: np.ndarray) -> np.ndarray:
    _check_same_shape(matrix, mask)
    return np.where(np.asarray(mask, dtype=bool), matrix, 0.0)


def sparsity(mask: np.ndarray) -> float:
    """Fraction of zero (pruned) entries."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return 0.0
    return float(mask.size - np.count_nonzero(mask)) / mask.size


def block_l2_norms(block: np.ndarray, axis: str = "column") -> np.ndarray:
    """l2 norm of each column (``axis='column'``) or row of a block."""
    block = np.asarray(block, dtype=np.float64)
    axis = normalize_axis(axis)
    if axis == "both":
        raise InvalidConfig("block_l2_norms needs a single axis")
    return np.sqrt((block * block).sum(axis=0 if axis == "column" else 1))


def partition_line_norms(matrix: np.ndarray, part: BlockPartition, axis: str) -> np.ndarray:
    """``block_l2_norms`` for every block at once, shape ``(k, k_col, lines)``."""
    axis = normalize_axis(axis)
    _check_same_shape(matrix, np.empty(part.shape))
    return kernels.block_line_norms(matrix, part.block_height, part.block_width, axis == "column")


def is_block_regular(mask: np.ndarray, part: BlockPartition) -> bool:
    """True when every block's mask is an outer product of row/column keep vectors."""
    mask = np.asarray(mask, dtype=bool)
    for _, _, rs, cs in part.blocks():
        blk = mask[rs, cs]
        keep_r = blk.any(axis=1)
        keep_c = blk.any(axis=0)
        if not np.array_equal(blk, np.outer(keep_r, keep_c)):
            return False
    return True


def masked_matmul(x: np.ndarray, w: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Reference ``x @ (w * mask).T`` (dense layer convention, ``w`` is out x in)."""
    return x @ apply_mask(w, mask).T


# ---------------------------------------------------------------------------
# sparse encodings


@dataclass(frozen=True)
class CooIndex:
    rows: int
    cols: int
    row: np.ndarray
    col: np.ndarray
    data: np.ndarray

    def decode(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        out[self.row, self.col] = self.data
        return out

    @property
    def n_indices(self) -> int:
        return len(self.row) + len(self.col)


def encode_coo(matrix: np.ndarray) -> CooIndex:
    matrix = np.asarray(matrix, dtype=np.float64)
    row, col = np.nonzero(matrix)
    return CooIndex(matrix.shape[0], matrix.shape[1], row, col, matrix[row, col].copy())


@dataclass(frozen=True)
class BlockEntry:
    """Kept lines of one block. ``None`` means every line on that axis is kept."""

    kept_rows: np.ndarray | None
    kept_cols: np.ndarray | None
    values: np.ndarray  # (len(kept_rows), len(kept_cols)) packed, row-major


@dataclass(frozen=True)
class BlockSparseIndex:
    partition: BlockPartition
    blocks: list[BlockEntry] = field(default_factory=list)

    def decode(self) -> np.ndarray:
        part = self.partition
        out = np.zeros(part.shape)
        for entry, (_, _, rs, cs) in zip(self.blocks, part.blocks()):
            r = np.arange(part.block_height) if entry.kept_rows is None else entry.kept_rows
            c = np.arange(part.block_width) if entry.kept_cols is None else entry.kept_cols
            out[rs, cs][np.ix_(r, c)] = entry.values
        return out

    @property
    def n_indices(self) -> int:
        n = 0
        for e in self.blocks:
            n += 0 if e.kept_rows is None else len(e.kept_rows)
            n += 0 if e.kept_cols is None else len(e.kept_cols)
        return n

    @property
    def n_values(self) -> int:
        return sum(e.values.size for e in self.blocks)


def encode_block_sparse(matrix: np.ndarray, part: BlockPartition, mask: np.ndarray) -> BlockSparseIndex:
    """Store the masked matrix as per-block kept row/column lists plus values.

    An axis on which a block prunes nothing stores no indices at all.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    _check_same_shape(matrix, mask)
    _check_same_shape(matrix, np.empty(part.shape))
    if not is_block_regular(mask, part):
        raise NotBlockRegular("mask keeps partial rows/columns inside a block")
    entries = []
    for _, _, rs, cs in part.blocks():
        blk = mask[rs, cs]
        keep_r = np.flatnonzero(blk.any(axis=1))
        keep_c = np.flatnonzero(blk.any(axis=0))
        if len(keep_r) == 0 or len(keep_c) == 0:
            keep_r = keep_c = np.empty(0, dtype=np.int64)
        vals = matrix[rs, cs][np.ix_(keep_r, keep_c)].copy()
        entries.append(
            BlockEntry(
                None if len(keep_r) == part.block_height else keep_r,
                None if len(keep_c) == part.block_width else keep_c,
                vals,
            )
        )
    return BlockSparseIndex(part, entries)


def index_bytes(index: CooIndex | BlockSparseIndex) -> int:
    """Bytes spent on indices (``INDEX_BYTES`` each); values are not counted."""
    return INDEX_BYTES * index.n_indices


def total_bytes(index: CooIndex | BlockSparseIndex) -> int:
    n_values = len(index.data) if isinstance(index, CooIndex) else index.n_values
    return index_bytes(index) + VALUE_BYTES * n_values


# ---------------------------------------------------------------------------
# serialization


def matrix_to_dict(matrix: np.ndarray) -> dict:
    matrix = np.asarray(matrix, dtype=np.float64)
    return {"rows": int(matrix.shape[0]), "cols": int(matrix.shape[1]), "data": matrix.ravel().tolist()}


def matrix_from_dict(d: dict) -> np.ndarray:
    return as_weight_matrix(d["data"], int(d["rows"]), int(d["cols"]))


def mask_to_dict(mask: np.ndarray) -> dict:
    """Run-length encode a mask: first bit, then alternating run lengths."""
    mask = np.asarray(mask, dtype=bool)
    flat = mask.ravel()
    if flat.size == 0:
        return {"rows": int(mask.shape[0]), "cols": int(mask.shape[1]), "start": 1, "runs": []}
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    return {
        "rows": int(mask.shape[0]),
        "cols": int(mask.shape[1]),
        "start": int(flat[0]),
        "runs": np.diff(bounds).tolist(),
    }


def mask_from_dict(d: dict) -> np.ndarray:
    rows, cols = int(d["rows"]), int(d["cols"])
    bit = bool(d["start"])
    parts = []
    for run in d["runs"]:
        parts.append(np.full(int(run), bit))
        bit = not bit
    flat = np.concatenate(parts) if parts else np.zeros(0, dtype=bool)
    if flat.size != rows * cols:
        raise DimensionMismatch(f"RLE covers {flat.size} bits, expected {rows * cols}")
    return flat.reshape(rows, cols)
