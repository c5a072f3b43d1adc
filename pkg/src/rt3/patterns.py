"""Pattern search space: sparsity ladder and importance-guided pattern sets.

A pattern is a ``p x p`` keep/prune bitmap tiled over a weight matrix, one
pattern per tile.  Patterns are built from an importance map obtained by
summing the magnitudes of half of the backbone's tiles; the least important
positions are zeroed.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import Infeasible, InvalidConfig, PatternSpaceError, TooSmall
from .matrix import square_partition
from .model import ToyModel
from .perf import DvfsTable, PerfModel

_HEADER = struct.Struct("<4sHHd")  # magic, p_size, m, sparsity
_MAGIC = b"RTPS"


def n_zeros_for(s: float, p_size: int) -> int:
    """Zero count for sparsity ``s`` on a ``p x p`` pattern (round half up)."""
    return int(math.floor(s * p_size * p_size + 0.5))


@dataclass(frozen=True, eq=False)
class Pattern:
    bits: np.ndarray  # (p, p) bool, True = kept
    sparsity: float

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
            raise InvalidConfig(f"pattern must be square, got {bits.shape}")
        object.__setattr__(self, "bits", bits)
        want = n_zeros_for(self.sparsity, bits.shape[0])
        if int(bits.size - np.count_nonzero(bits)) != want:
            raise InvalidConfig(f"sparsity {self.sparsity} needs {want} zeros on a {bits.shape[0]}x{bits.shape[0]} pattern")

    @property
    def p_size(self) -> int:
        return self.bits.shape[0]

    @property
    def n_zeros(self) -> int:
        return int(self.bits.size - np.count_nonzero(self.bits))

    def __eq__(self, other):
        return isinstance(other, Pattern) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(np.packbits(self.bits).tobytes())

    def bitstring(self) -> str:
        return "".join("1" if b else "0" for b in self.bits.ravel())

    @classmethod
    def from_bitstring(cls, text: str, p_size: int, sparsity: float) -> "Pattern":
        if len(text) != p_size * p_size:
            raise InvalidConfig(f"bit-string of length {len(text)} does not fit {p_size}x{p_size}")
        bits = np.array([c == "1" for c in text], dtype=bool).reshape(p_size, p_size)
        return cls(bits, sparsity)


@dataclass(frozen=True)
class PatternSet:
    sparsity: float
    patterns: tuple[Pattern, ...]

    def __post_init__(self):
        pats = tuple(self.patterns)
        object.__setattr__(self, "patterns", pats)
        if not pats:
            raise InvalidConfig("pattern set is empty")
        if len({p.p_size for p in pats}) != 1:
            raise InvalidConfig("patterns in a set must share p_size")
        if any(p.sparsity != self.sparsity for p in pats):
            raise InvalidConfig("patterns in a set must share its sparsity")
        if len(set(pats)) != len(pats):
            raise InvalidConfig("patterns in a set must be pairwise distinct")

    def __len__(self):
        return len(self.patterns)

    @property
    def p_size(self) -> int:
        return self.patterns[0].p_size

    def as_array(self) -> np.ndarray:
        return np.stack([p.bits for p in self.patterns]).astype(np.uint8)

    def subset(self, indices: Sequence[int]) -> "PatternSet":
        return PatternSet(self.sparsity, tuple(self.patterns[i] for i in sorted(set(indices))))

    def to_dict(self) -> dict:
        return {"sparsity": self.sparsity, "p_size": self.p_size, "patterns": [p.bitstring() for p in self.patterns]}

    @classmethod
    def from_dict(cls, d: dict) -> "PatternSet":
        s, p = float(d["sparsity"]), int(d["p_size"])
        return cls(s, tuple(Pattern.from_bitstring(b, p, s) for b in d["patterns"]))

    def to_bytes(self) -> bytes:
        """Binary image moved on a switch: header plus packed bitmaps."""
        head = _HEADER.pack(_MAGIC, self.p_size, len(self), self.sparsity)
        return head + b"".join(np.packbits(p.bits.ravel()).tobytes() for p in self.patterns)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PatternSet":
        magic, p, m, s = _HEADER.unpack_from(blob)
        if magic != _MAGIC:
            raise InvalidConfig("not a serialized pattern set")
        per = (p * p + 7) // 8
        pats = []
        for i in range(m):
            chunk = np.frombuffer(blob, np.uint8, per, _HEADER.size + i * per)
            pats.append(Pattern(np.unpackbits(chunk)[: p * p].reshape(p, p).astype(bool), s))
        return cls(s, tuple(pats))


@dataclass(frozen=True)
class ModelPatternSet:
    """One pattern set per prunable layer, all at the same sparsity.

    Pattern index ``j`` of the model-level set means pattern ``j`` in every
    layer's set.
    """

    sparsity: float
    sets: dict[str, PatternSet]

    @property
    def p_size(self) -> int:
        return next(iter(self.sets.values())).p_size

    @property
    def n_patterns(self) -> int:
        return min(len(s) for s in self.sets.values())

    def subset(self, indices: Sequence[int]) -> "ModelPatternSet":
        return ModelPatternSet(self.sparsity, {k: v.subset(indices) for k, v in self.sets.items()})

    def to_dict(self) -> dict:
        return {
            "sparsity": self.sparsity,
            "p_size": self.p_size,
            "layers": {k: v.to_dict() for k, v in self.sets.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelPatternSet":
        return cls(float(d["sparsity"]), {k: PatternSet.from_dict(v) for k, v in d["layers"].items()})

    def to_bytes(self) -> bytes:
        return b"".join(s.to_bytes() for s in self.sets.values())

    @property
    def nbytes(self) -> int:
        return len(self.to_bytes())


@dataclass(frozen=True)
class SparsityLadder:
    ratios: tuple[float, ...]

    def __post_init__(self):
        r = tuple(float(x) for x in self.ratios)
        object.__setattr__(self, "ratios", r)
        if any(not 0.0 <= x < 1.0 for x in r):
            raise InvalidConfig(f"ladder ratios must lie in [0, 1): {r}")
        if any(not a > b for a, b in zip(r, r[1:])):
            raise InvalidConfig(f"ladder must be strictly decreasing: {r}")

    def __len__(self):
        return len(self.ratios)

    def __iter__(self):
        return iter(self.ratios)


def _quantize_up(s: float, quantum: int | None) -> float:
    if not quantum:
        return s
    return math.ceil(s * quantum - 1e-9) / quantum


def build_ladder(
    table: DvfsTable,
    timing: float,
    perf: PerfModel,
    theta: int = 1,
    step: float = 0.05,
    s_max: float = 0.95,
    quantum: int | None = None,
) -> SparsityLadder:
    """Candidate sparsities from the deadline ``timing`` (seconds).

    Per level: the minimal sparsity meeting ``timing``, plus ``theta - 1``
    more obtained by shrinking the latency budget by ``step`` each time.
    ``quantum`` (usually ``p_size**2``) rounds ratios up to realizable
    pattern sparsities so the deadline still holds after rounding.
    """
    if theta < 1:
        raise InvalidConfig("theta must be >= 1")
    if not 0.0 < step < 1.0:
        raise InvalidConfig("step must lie in (0, 1)")
    if perf.min_sparsity(timing, table.highest) > s_max:
        raise Infeasible(f"sparsity {s_max} cannot meet {timing * 1e3:.3f} ms even at {table.highest.name}")
    ratios = set()
    for level in table:
        s0 = _quantize_up(perf.min_sparsity(timing, level), quantum)
        if s0 > s_max:
            raise Infeasible(f"level {level.name} cannot meet {timing * 1e3:.3f} ms below sparsity {s_max}")
        ratios.add(s0)
        for j in range(1, theta):
            s = _quantize_up(perf.min_sparsity(timing * (1.0 - step) ** j, level), quantum)
            if s <= s_max:
                ratios.add(s)
    ratios = sorted({round(r, 12) for r in ratios}, reverse=True)
    return SparsityLadder(tuple(r for r in ratios if r < 1.0))


def _tiles(matrix: np.ndarray, p_size: int) -> np.ndarray:
    part = square_partition(matrix, p_size)
    return matrix.reshape(part.k, p_size, part.k_col, p_size).transpose(0, 2, 1, 3).reshape(-1, p_size, p_size)


def importance_map(matrix: np.ndarray, mask: np.ndarray | None, p_size: int, seed=None, sample: Sequence[int] | None = None) -> np.ndarray:
    """Sum of ``|tile|`` over ``n // 2`` tiles drawn without replacement.

    ``sample`` overrides the random draw with explicit tile indices
    (row-major tile order).
    """
    w = np.asarray(matrix, dtype=np.float64)
    if mask is not None:
        w = np.where(mask, w, 0.0)
    tiles = _tiles(w, p_size)
    n = tiles.shape[0]
    if n < 2:
        raise TooSmall(f"need at least 2 tiles of {p_size}x{p_size}, matrix has {n}")
    if sample is None:
        rng = np.random.default_rng(seed)
        sample = np.sort(rng.choice(n, size=n // 2, replace=False))
    return np.abs(tiles[np.asarray(sample)]).sum(axis=0)


def build_pattern(imap: np.ndarray, s: float) -> Pattern:
    """Zero the ``round(s * p^2)`` least important positions.

    Ties go to the lower (row, col) position first.
    """
    imap = np.asarray(imap, dtype=np.float64)
    p = imap.shape[0]
    if not 0.0 <= s <= 1.0:
        raise InvalidConfig(f"sparsity must lie in [0, 1], got {s}")
    n_zero = n_zeros_for(s, p)
    order = np.argsort(imap.ravel(), kind="stable")
    bits = np.ones(p * p, dtype=bool)
    bits[order[:n_zero]] = False
    return Pattern(bits.reshape(p, p), s)


def build_pattern_set(
    matrix: np.ndarray,
    mask: np.ndarray | None,
    s: float,
    m: int,
    p_size: int,
    seed=None,
    max_tries: int | None = None,
) -> PatternSet:
    """``m`` distinct patterns at sparsity ``s`` from distinct tile samples.

    At ``s`` of 0 or 1 only one pattern exists, so the set has size 1.
    """
    if m < 1:
        raise InvalidConfig("m must be >= 1")
    n_zero = n_zeros_for(s, p_size)
    if n_zero in (0, p_size * p_size):
        return PatternSet(s, (build_pattern(np.zeros((p_size, p_size)), s),))
    w = np.asarray(matrix, dtype=np.float64)
    if mask is not None:
        w = np.where(mask, w, 0.0)
    n = _tiles(w, p_size).shape[0]
    if n < 2:
        raise TooSmall(f"need at least 2 tiles of {p_size}x{p_size}, matrix has {n}")
    rng = np.random.default_rng(seed)
    seen_samples: set[tuple[int, ...]] = set()
    patterns: list[Pattern] = []
    tries = max_tries or 50 * m
    for _ in range(tries):
        if len(patterns) == m:
            break
        sample = tuple(np.sort(rng.choice(n, size=n // 2, replace=False)).tolist())
        if sample in seen_samples:
            continue
        seen_samples.add(sample)
        pat = build_pattern(importance_map(w, None, p_size, sample=sample), s)
        if pat not in patterns:
            patterns.append(pat)
    if len(patterns) < m:
        raise PatternSpaceError(f"only {len(patterns)} distinct patterns of {m} found at sparsity {s} after {tries} draws")
    return PatternSet(s, tuple(patterns))


def patternable_layers(model: ToyModel, p_size: int) -> list[str]:
    names = []
    for layer in model.layers:
        r, c = layer.weight.shape
        if layer.prunable and r % p_size == 0 and c % p_size == 0 and (r // p_size) * (c // p_size) >= 2:
            names.append(layer.name)
    return names


def build_model_pattern_set(model: ToyModel, s: float, m: int, p_size: int, seed: int = 0) -> ModelPatternSet:
    """Per-layer importance maps, one pattern set per patternable layer."""
    names = patternable_layers(model, p_size)
    if not names:
        raise TooSmall(f"no layer is tileable by {p_size}x{p_size}")
    sets = {}
    for idx, name in enumerate(names):
        layer = model.layer(name)
        ss = np.random.SeedSequence([seed, idx, int(round(s * 1e9))])
        sets[name] = build_pattern_set(layer.weight, layer.mask, s, m, p_size, seed=ss)
    return ModelPatternSet(s, sets)


def build_candidate_sets(model: ToyModel, ladder: SparsityLadder, m: int, p_size: int, seed: int = 0) -> list[ModelPatternSet]:
    return [build_model_pattern_set(model, s, m, p_size, seed) for s in ladder]


def pattern_masks(model: ToyModel, mps: ModelPatternSet, assignment: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Tile each layer's assigned patterns into a full-size mask."""
    out = {}
    for name, pset in mps.sets.items():
        rows, cols = model.layer(name).weight.shape
        p = pset.p_size
        chosen = pset.as_array().astype(bool)[assignment[name]]  # (br, bc, p, p)
        out[name] = chosen.transpose(0, 2, 1, 3).reshape(rows, cols)
    return out
