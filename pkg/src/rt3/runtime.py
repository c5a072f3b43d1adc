"""Battery-driven run-time reconfiguration simulator.

The battery drains by the energy of each inference.  When the remaining
charge falls below a threshold the governor lowers the V/F level (hardware
reconfiguration) and the level's pattern set is swapped in (software
reconfiguration).  The backbone weights are never touched; only the small
pattern bitmaps move, so switch cost depends on pattern-set size alone.
Per-level tile assignments are kept resident next to the backbone.

Switches happen only between inferences.  :class:`RuntimeState` is a
single-threaded state machine and must not be stepped concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, Exhausted, InvalidConfig
from .model import ToyModel
from .patterns import ModelPatternSet, pattern_masks
from .perf import DvfsTable, PerfModel, VFLevel, energy_per_run, latency, predict_cycles
from .trainer import Assignment, assign_patterns

#: simulated off-chip bandwidth for pattern swaps, bytes per second
DEFAULT_BANDWIDTH = 10_000.0


@dataclass
class LevelDeployment:
    level: VFLevel
    set_id: str
    pattern_set: ModelPatternSet | None
    assignment: Assignment
    cycles: float
    latency: float
    energy: float


@dataclass
class Deployment:
    backbone: ToyModel
    perf: PerfModel
    levels: dict[str, LevelDeployment]
    budget: float
    timing: float

    @property
    def table(self) -> DvfsTable:
        return DvfsTable(tuple(sorted((d.level for d in self.levels.values()), key=lambda l: l.freq_mhz)))

    def restrict(self, mapping: dict[str, str]) -> "Deployment":
        """New deployment where level ``k`` runs the configuration of level ``mapping[k]``."""
        out = {}
        for name, src in mapping.items():
            base = self.levels[src]
            level = self.levels[name].level
            out[name] = make_level(self.backbone, self.perf, level, base.pattern_set, base.set_id, base.assignment)
        return Deployment(self.backbone, self.perf, out, self.budget, self.timing)


def make_level(backbone: ToyModel, perf: PerfModel, level: VFLevel, mps: ModelPatternSet | None, set_id: str, assignment: Assignment | None = None) -> LevelDeployment:
    if mps is not None and assignment is None:
        assignment = assign_patterns(backbone, mps)
    extra = pattern_masks(backbone, mps, assignment) if mps is not None else None
    cycles = predict_cycles(perf, backbone, extra, tile=mps.p_size if mps else None)
    return LevelDeployment(level, set_id, mps, assignment or {}, cycles, latency(cycles, level), energy_per_run(cycles, level, perf))


def make_deployment(backbone: ToyModel, perf: PerfModel, table: DvfsTable, sets: Sequence[ModelPatternSet | None], set_ids: Sequence[str], budget: float, timing: float) -> Deployment:
    if len(sets) != len(table):
        raise InvalidConfig(f"{len(sets)} pattern sets for {len(table)} levels")
    levels = {lvl.name: make_level(backbone, perf, lvl, s, sid) for lvl, s, sid in zip(table, sets, set_ids)}
    return Deployment(backbone, perf, levels, budget, timing)


def switch_cost(mps: ModelPatternSet | None, bandwidth: float = DEFAULT_BANDWIDTH) -> tuple[int, float]:
    """Bytes moved and simulated seconds to swap ``mps`` in."""
    if mps is None:
        return 0, 0.0
    n = mps.nbytes
    return n, n / bandwidth


@dataclass
class BatteryState:
    capacity: float
    remaining: float
    thresholds: list[tuple[float, str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.capacity > 0:
            raise InvalidConfig("battery capacity must be > 0")
        if not 0 <= self.remaining <= self.capacity:
            raise InvalidConfig("remaining energy must lie in [0, capacity]")
        fr = [f for f, _ in self.thresholds]
        if any(not 0 < f <= 1 for f in fr):
            raise InvalidConfig("threshold fractions must lie in (0, 1]")
        if any(not a > b for a, b in zip(fr, fr[1:])):
            raise InvalidConfig("threshold fractions must be strictly descending")

    @property
    def fraction(self) -> float:
        return self.remaining / self.capacity


@dataclass
class SwitchEvent:
    at_inference: int
    from_level: str
    to_level: str
    from_set: str
    to_set: str
    bytes_moved: int
    duration_s: float


@dataclass
class InferenceRecord:
    index: int
    level: str
    latency: float
    energy: float


class RuntimeState:
    """Active configuration plus counters for one discharge cycle."""

    def __init__(self, deployment: Deployment, battery: BatteryState, start_level: str | None = None, bandwidth: float = DEFAULT_BANDWIDTH):
        self.deployment = deployment
        self.battery = battery
        self.bandwidth = bandwidth
        for _, name in battery.thresholds:
            if name not in deployment.levels:
                raise ConfigError(f"threshold level {name!r} has no deployed configuration")
        self.active = start_level or deployment.table.highest.name
        if self.active not in deployment.levels:
            raise ConfigError(f"start level {self.active!r} has no deployed configuration")
        self.counter = 0
        self.events: list[SwitchEvent] = []
        self.runs_per_level: dict[str, int] = {k: 0 for k in deployment.levels}
        self.max_latency = 0.0
        self.energy_used = 0.0
        self._next_threshold = 0
        self._checksum = deployment.backbone.weight_checksum()
        self._cross()

    @property
    def active_config(self) -> LevelDeployment:
        return self.deployment.levels[self.active]

    def _cross(self) -> None:
        """Apply every threshold the battery is currently below."""
        th = self.battery.thresholds
        target = None
        while self._next_threshold < len(th) and self.battery.fraction < th[self._next_threshold][0]:
            target = th[self._next_threshold][1]
            self._next_threshold += 1
        if target is None or target == self.active:
            return
        old, new = self.active_config, self.deployment.levels[target]
        if old.set_id == new.set_id:
            nbytes, secs = 0, 0.0
        else:
            nbytes, secs = switch_cost(new.pattern_set, self.bandwidth)
        self.events.append(SwitchEvent(self.counter, self.active, target, old.set_id, new.set_id, nbytes, secs))
        self.active = target

    def _stop_fraction(self) -> float:
        th = self.battery.thresholds
        return th[self._next_threshold][0] if self._next_threshold < len(th) else 0.0

    def step(self) -> InferenceRecord:
        """Run one inference at the active level, then apply any threshold crossing."""
        cfg = self.active_config
        if self.battery.remaining < cfg.energy:
            raise Exhausted(f"{self.battery.remaining!r} left, next run needs {cfg.energy!r}")
        self.battery.remaining -= cfg.energy
        self.counter += 1
        self.runs_per_level[self.active] += 1
        self.energy_used += cfg.energy
        self.max_latency = max(self.max_latency, cfg.latency)
        rec = InferenceRecord(self.counter, self.active, cfg.latency, cfg.energy)
        self._cross()
        return rec

    def run_to_empty(self) -> None:
        """Drain the battery; same arithmetic as repeated :meth:`step`, via the drain kernel."""
        while True:
            cfg = self.active_config
            count, rem = kernels.drain(self.battery.remaining, cfg.energy, self.battery.capacity, self._stop_fraction())
            self.battery.remaining = rem
            if count:
                self.counter += count
                self.runs_per_level[self.active] += count
                self.energy_used += count * cfg.energy
                self.max_latency = max(self.max_latency, cfg.latency)
            before = self._next_threshold
            self._cross()
            if self._next_threshold == before:
                return

    def backbone_unchanged(self) -> bool:
        return self.deployment.backbone.weight_checksum() == self._checksum


@dataclass
class SimulationReport:
    total_runs: int
    runs_per_level: dict[str, int]
    events: list[SwitchEvent]
    max_latency: float
    latencies: dict[str, float]
    timing: float
    remaining: float
    energy_used: float
    capacity: float
    backbone_checksum: str

    @property
    def verdict(self) -> bool:
        """All latencies of levels that actually ran meet the deadline."""
        return self.max_latency <= self.timing

    def to_dict(self) -> dict:
        return {
            "total_runs": self.total_runs,
            "runs_per_level": self.runs_per_level,
            "max_latency_ms": self.max_latency * 1e3,
            "latency_ms": {k: v * 1e3 for k, v in self.latencies.items()},
            "timing_ms": self.timing * 1e3,
            "constraint_met": self.verdict,
            "switches": len(self.events),
            "switch_bytes": sum(e.bytes_moved for e in self.events),
            "switch_ms": sum(e.duration_s for e in self.events) * 1e3,
            "remaining": self.remaining,
            "energy_used": self.energy_used,
            "capacity": self.capacity,
            "backbone_checksum": self.backbone_checksum,
        }


def simulate(
    deployment: Deployment,
    battery: BatteryState,
    timing: float | None = None,
    start_level: str | None = None,
    bandwidth: float = DEFAULT_BANDWIDTH,
) -> SimulationReport:
    """Run one full discharge and summarize it."""
    state = RuntimeState(deployment, battery, start_level, bandwidth)
    state.run_to_empty()
    if not state.backbone_unchanged():
        raise RuntimeError("backbone weights changed during simulation")
    return SimulationReport(
        total_runs=state.counter,
        runs_per_level=dict(state.runs_per_level),
        events=list(state.events),
        max_latency=state.max_latency,
        latencies={k: v.latency for k, v in deployment.levels.items()},
        timing=deployment.timing if timing is None else timing,
        remaining=battery.remaining,
        energy_used=state.energy_used,
        capacity=battery.capacity,
        backbone_checksum=deployment.backbone.weight_checksum(),
    )


def parse_thresholds(text: str) -> list[tuple[float, str]]:
    """Parse ``"0.5:l4,0.2:l3"`` into ``[(0.5, 'l4'), (0.2, 'l3')]``."""
    out = []
    if not text:
        return out
    for part in text.split(","):
        try:
            frac, name = part.split(":")
            out.append((float(frac), name.strip()))
        except ValueError as exc:
            raise ConfigError(f"bad threshold {part!r}; expected FRACTION:LEVEL") from exc
    return sorted(out, key=lambda t: -t[0])


def reconfiguration_scenarios(deployment: Deployment, thresholds: list[tuple[float, str]]):
    """E1 (no reconfiguration), E2 (V/F only), E3 (V/F plus pattern sets).

    E1 runs the top level's configuration at the top level throughout; E2
    keeps that configuration but follows the governor; E3 is the full
    deployment.  Returns ``{name: (deployment, thresholds)}``.
    """
    top = deployment.table.highest.name
    e1 = deployment.restrict({top: top})
    e2 = deployment.restrict({name: top for name in deployment.levels})
    return {"E1": (e1, []), "E2": (e2, thresholds), "E3": (deployment, thresholds)}


def assignment_to_json(a: Assignment) -> dict:
    return {k: np.asarray(v).tolist() for k, v in a.items()}


def assignment_from_json(d: dict) -> Assignment:
    return {k: np.asarray(v, dtype=np.int64) for k, v in d.items()}
