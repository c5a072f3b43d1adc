"""Block-structured pruning: drop whole rows/columns inside each block by l2 norm."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig
from .matrix import BlockPartition, normalize_axis, partition, partition_line_norms, sparsity
from .model import ToyModel


@dataclass(frozen=True)
class BpConfig:
    """Pruning criterion. Set exactly one of ``threshold`` / ``percentile``.

    ``k`` and ``k_col`` are the row and column block divisions used by
    :func:`bp_prune_model`; :func:`bp_prune` takes an explicit partition.
    """

    axis: str = "column"
    k: int = 1
    k_col: int = 1
    threshold: float | None = None
    percentile: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "axis", normalize_axis(self.axis))
        if (self.threshold is None) == (self.percentile is None):
            raise InvalidConfig("exactly one of threshold / percentile must be set")
        if self.threshold is not None and not self.threshold >= 0:
            raise InvalidConfig(f"threshold must be >= 0, got {self.threshold}")
        if self.percentile is not None and not 0.0 <= self.percentile <= 1.0:
            raise InvalidConfig(f"percentile must lie in [0, 1], got {self.percentile}")
        if self.k < 1 or self.k_col < 1:
            raise InvalidConfig("block divisions must be >= 1")


@dataclass
class BpResult:
    mask: np.ndarray
    achieved_sparsity: float
    partition: BlockPartition
    # (br, bc) -> kept line indices inside that block
    kept_cols: dict[tuple[int, int], list[int]] = field(default_factory=dict)
    kept_rows: dict[tuple[int, int], list[int]] = field(default_factory=dict)


def _prune_flags(norms: np.ndarray, config: BpConfig) -> np.ndarray:
    """Boolean ``pruned`` flags for the trailing line axis of ``norms``."""
    if config.threshold is not None:
        return norms < config.threshold
    n_lines = norms.shape[-1]
    n_prune = min(n_lines, int(math.floor(config.percentile * n_lines + 1e-9)))
    flags = np.zeros(norms.shape, dtype=bool)
    if n_prune == 0:
        return flags
    # stable sort: equal norms keep index order, so lower indices go first
    order = np.argsort(norms, axis=-1, kind="stable")[..., :n_prune]
    np.put_along_axis(flags, order, True, axis=-1)
    return flags


def _prune_axis(matrix, mask, part, axis, config):
    norms = partition_line_norms(np.where(mask, matrix, 0.0), part, axis)
    flags = _prune_flags(norms, config)
    mask = mask.copy()
    h, w = part.block_height, part.block_width
    for br, bc, rs, cs in part.blocks():
        for line in np.flatnonzero(flags[br, bc]):
            if axis == "column":
                mask[rs, bc * w + line] = False
            else:
                mask[br * h + line, cs] = False
    return mask


def bp_prune(matrix: np.ndarray, part: BlockPartition, config: BpConfig) -> BpResult:
    """One-shot block pruning of ``matrix`` over ``part``.

    For ``axis='both'`` columns are pruned first, then rows are scored on the
    column-pruned matrix.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != part.shape:
        raise InvalidConfig(f"partition {part.shape} does not match matrix {matrix.shape}")
    mask = np.ones(matrix.shape, dtype=bool)
    if config.axis in ("column", "both"):
        mask = _prune_axis(matrix, mask, part, "column", config)
    if config.axis in ("row", "both"):
        mask = _prune_axis(matrix, mask, part, "row", config)

    result = BpResult(mask, sparsity(mask), part)
    for br, bc, rs, cs in part.blocks():
        blk = mask[rs, cs]
        result.kept_cols[(br, bc)] = np.flatnonzero(blk.any(axis=0)).tolist()
        result.kept_rows[(br, bc)] = np.flatnonzero(blk.any(axis=1)).tolist()
    return result


def bp_prune_model(model: ToyModel, config: BpConfig | dict[str, BpConfig]) -> tuple[ToyModel, dict[str, BpResult]]:
    """Prune every prunable layer; returns a new backbone model and per-layer results.

    ``config`` is either one config for all layers or a mapping by layer name
    (layers missing from the mapping are left dense).
    """
    backbone = model.copy()
    results = {}
    for layer in backbone.layers:
        if not layer.prunable:
            continue
        cfg = config.get(layer.name) if isinstance(config, dict) else config
        if cfg is None:
            continue
        part = partition(layer.weight, cfg.k, cfg.k_col)
        res = bp_prune(layer.weight, part, cfg)
        layer.mask = layer.mask & res.mask
        results[layer.name] = res
    return backbone, results


def sparsity_report(results: dict[str, BpResult]) -> list[dict]:
    return [
        {"layer": name, "blocks": r.partition.n_blocks, "sparsity": r.achieved_sparsity}
        for name, r in results.items()
    ]
