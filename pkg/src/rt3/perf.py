"""DVFS latency/energy model, battery run counts and the search reward.

Model used throughout::

    cycles  = C0 * (1 - s_eff) * (1 + beta * touched_tiles / total_tiles)
    latency = cycles / f
    energy  = kappa * V^2 * cycles

where ``s_eff`` is the realized zero fraction of the combined (block pruning
and pattern) masks over all weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegenerateRange, Infeasible, InvalidConfig, InvalidSchedule
from .model import ToyModel


@dataclass(frozen=True)
class VFLevel:
    name: str
    freq_mhz: float
    voltage_mv: float

    @property
    def freq_hz(self) -> float:
        return self.freq_mhz * 1e6

    @property
    def voltage_v(self) -> float:
        return self.voltage_mv / 1e3


@dataclass(frozen=True)
class DvfsTable:
    """Operating points ordered by ascending frequency."""

    levels: tuple[VFLevel, ...]

    def __post_init__(self):
        levels = tuple(self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise InvalidConfig("DVFS table is empty")
        for a, b in zip(levels, levels[1:]):
            if not b.freq_mhz > a.freq_mhz:
                raise InvalidConfig("DVFS frequencies must be strictly increasing")
            if b.voltage_mv < a.voltage_mv:
                raise InvalidConfig("DVFS voltages must be non-decreasing")
        if len({l.name for l in levels}) != len(levels):
            raise InvalidConfig("duplicate level names")

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def __getitem__(self, key) -> VFLevel:
        if isinstance(key, str):
            for level in self.levels:
                if level.name == key:
                    return level
            raise KeyError(key)
        return self.levels[key]

    @property
    def highest(self) -> VFLevel:
        return self.levels[-1]

    def subset(self, names: Sequence[str]) -> "DvfsTable":
        wanted = set(names)
        missing = wanted - {l.name for l in self.levels}
        if missing:
            raise ConfigError(f"unknown V/F levels: {sorted(missing)}")
        return DvfsTable(tuple(l for l in self.levels if l.name in wanted))

    def to_dict(self) -> dict:
        return {"levels": [{"name": l.name, "freq_mhz": l.freq_mhz, "voltage_mv": l.voltage_mv} for l in self.levels]}

    @classmethod
    def from_dict(cls, d: dict) -> "DvfsTable":
        try:
            rows = d["levels"]
            levels = [VFLevel(str(r["name"]), float(r["freq_mhz"]), float(r["voltage_mv"])) for r in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed DVFS table: {exc}") from exc
        return cls(tuple(sorted(levels, key=lambda l: l.freq_mhz)))


def load_dvfs(path: str | Path | None = None) -> DvfsTable:
    """Load a DVFS table; ``None`` gives the bundled Cortex-A7 table."""
    if path is None:
        text = resources.files("rt3").joinpath("data/dvfs_cortex_a7.json").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read DVFS table {path}: {exc}") from exc
    try:
        return DvfsTable.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"DVFS table {path} is not valid JSON: {exc}") from exc


@dataclass(frozen=True)
class PerfModel:
    base_cycles: float = 1.6e8
    overhead: float = 0.05
    energy_coeff: float = 1e-9
    tile: int = 4

    def __post_init__(self):
        if not self.base_cycles > 0:
            raise InvalidConfig("base_cycles must be > 0")
        if self.overhead < 0:
            raise InvalidConfig("overhead must be >= 0")
        if not self.energy_coeff > 0:
            raise InvalidConfig("energy_coeff must be > 0")

    def cycles_at(self, s: float, touched_fraction: float = 1.0) -> float:
        return self.base_cycles * (1.0 - s) * (1.0 + self.overhead * touched_fraction)

    def latency_at(self, s: float, level: VFLevel, touched_fraction: float = 1.0) -> float:
        return latency(self.cycles_at(s, touched_fraction), level)

    def min_sparsity(self, budget_s: float, level: VFLevel) -> float:
        """Smallest sparsity whose worst-case latency (every tile touched) fits ``budget_s``."""
        s = 1.0 - budget_s * level.freq_hz / (self.base_cycles * (1.0 + self.overhead))
        return max(0.0, s)


def effective_sparsity(masks: Sequence[np.ndarray]) -> float:
    total = sum(m.size for m in masks)
    kept = sum(int(np.count_nonzero(m)) for m in masks)
    return (total - kept) / total


def touched_fraction(masks: Sequence[np.ndarray], tile: int) -> float:
    """Fraction of ``tile x tile`` tiles holding at least one kept weight.

    Matrices whose shape is not a multiple of ``tile`` count as one tile each
    per started tile (ceil division).
    """
    touched = total = 0
    for m in masks:
        r, c = m.shape
        pr, pc = -r % tile, -c % tile
        padded = np.pad(m, ((0, pr), (0, pc)))
        tiles = padded.reshape((r + pr) // tile, tile, (c + pc) // tile, tile).any(axis=(1, 3))
        touched += int(tiles.sum())
        total += tiles.size
    return touched / total if total else 0.0


def predict_cycles(perf: PerfModel, model: ToyModel, extra_masks: dict[str, np.ndarray] | None = None, tile: int | None = None) -> float:
    """Cycle estimate of ``model`` under its pruning masks and optional pattern masks."""
    masks = model.combined_masks(extra_masks)
    s_eff = effective_sparsity(masks)
    frac = touched_fraction(masks, tile or perf.tile)
    return perf.cycles_at(s_eff, frac)


def latency(cycles: float, level: VFLevel) -> float:
    """Seconds per inference."""
    return cycles / level.freq_hz


def energy_per_run(cycles: float, level: VFLevel, perf: PerfModel) -> float:
    return perf.energy_coeff * level.voltage_v**2 * cycles


def num_runs(budget: float, energies: Sequence[float], fractions: Sequence[float]) -> tuple[int, list[int]]:
    """Inferences affordable when mode ``i`` gets ``fractions[i]`` of ``budget``.

    Returns the total and the per-mode counts.
    """
    if len(energies) != len(fractions) or not energies:
        raise InvalidSchedule("energies and fractions must be non-empty and equally long")
    if any(f < 0 for f in fractions) or abs(math.fsum(fractions) - 1.0) > 1e-9:
        raise InvalidSchedule(f"budget fractions must be >= 0 and sum to 1, got {list(fractions)}")
    if any(not e > 0 for e in energies):
        raise InvalidSchedule("energy per run must be > 0")
    if budget < 0:
        raise InvalidSchedule("budget must be >= 0")
    per_mode = [int(math.floor(f * budget / e)) for e, f in zip(energies, fractions)]
    return sum(per_mode), per_mode


def reference_runs(budget: float, perf: PerfModel, table: DvfsTable, headroom: float = 8.0) -> float:
    """Normalizer for run counts: dense model at the top level, times ``headroom``."""
    e = energy_per_run(perf.base_cycles, table.highest, perf)
    return math.floor(budget / e) * headroom


def normalize_runs(runs: float, reference: float) -> float:
    if not reference > 0:
        raise InvalidSchedule("reference run count must be > 0")
    return min(1.0, max(0.0, runs / reference))


@dataclass(frozen=True)
class RewardInputs:
    a_w: float | None
    a_o: float
    a_m: float
    cond: bool
    pen: float
    r_runs: float
    latencies: tuple[float, ...]
    timing: float


def reward(inp: RewardInputs) -> float:
    """Three-case reward: deadline miss, ordered accuracies, or penalized."""
    if inp.a_o == inp.a_m:
        raise DegenerateRange("A_o equals A_m")
    if any(lat > inp.timing for lat in inp.latencies):
        return -1.0 + inp.r_runs
    if inp.a_w is None:
        raise InvalidConfig("weighted accuracy required when every latency meets the deadline")
    value = (inp.a_w - inp.a_m) / (inp.a_o - inp.a_m) + inp.r_runs
    return value if inp.cond else value - inp.pen


def check_cond(accs: Sequence[float]) -> bool:
    """True iff accuracies strictly decrease along the list."""
    if len(accs) < 2:
        raise InvalidConfig("cond needs at least two accuracies")
    return all(a > b for a, b in zip(accs, accs[1:]))


def infeasible_check(perf: PerfModel, table: DvfsTable, timing: float, s_max: float) -> None:
    if perf.latency_at(s_max, table.highest) > timing:
        raise Infeasible(
            f"even sparsity {s_max} misses the {timing * 1e3:.3f} ms deadline at {table.highest.name}"
        )
