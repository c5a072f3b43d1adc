"""Search for one pattern set per V/F level with a REINFORCE controller.

An action sequence has, for every level (ascending frequency), one choice
of candidate pattern set followed by ``K`` pattern picks inside it.  The
distinct picks form the deployed subset for that level.

Episodes are scored by :func:`rt3.perf.reward`.  Latency and run counts are
computed first; configurations that miss the deadline are never
fine-tuned.  Evaluations are cached per configuration, so repeated visits
cost nothing and the reward of a configuration is a pure function of it.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .controller import Controller, EmaBaseline
from .errors import InvalidConfig, NoFeasible
from .model import Dataset, ToyModel
from .patterns import ModelPatternSet, SparsityLadder, build_candidate_sets, build_ladder, pattern_masks
from .perf import (
    DvfsTable,
    PerfModel,
    RewardInputs,
    check_cond,
    energy_per_run,
    latency,
    normalize_runs,
    num_runs,
    predict_cycles,
    reference_runs,
    reward,
)
from .trainer import JointTrainConfig, assign_patterns, evaluate_accuracy, joint_train

log = logging.getLogger(__name__)

# per level: (candidate index, sorted distinct pattern indices)
Configuration = tuple[tuple[int, tuple[int, ...]], ...]


@dataclass(frozen=True)
class SearchConfig:
    timing: float = 0.115
    budget: float = 1.0e6
    K: int = 1
    m: int = 3
    theta: int = 2
    p_size: int = 4
    ladder_step: float = 0.05
    s_max: float = 0.95
    episodes: int = 500
    batch_size: int = 1
    lr: float = 0.05
    baseline_decay: float = 0.9
    hidden: int = 32
    seed: int = 0
    a_m: float = 0.25
    pen: float = 0.5
    alphas: tuple[float, ...] | None = None
    fractions: tuple[float, ...] | None = None
    headroom: float = 8.0
    finetune_epochs: int = 2
    finetune_lr: float = 0.05
    finetune_batch: int = 32
    finetune_seed: int = 0

    def __post_init__(self):
        if self.K < 1 or self.K > self.m:
            raise InvalidConfig(f"need 1 <= K <= m (K={self.K}, m={self.m})")
        if self.episodes < 1:
            raise InvalidConfig("episodes must be >= 1")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if not self.timing > 0:
            raise InvalidConfig("timing constraint must be > 0")


@dataclass
class SearchSpace:
    backbone: ToyModel
    data: Dataset
    table: DvfsTable  # the N levels searched over, ascending frequency
    perf: PerfModel
    ladder: SparsityLadder
    candidates: list[ModelPatternSet]
    K: int

    @property
    def n_levels(self) -> int:
        return len(self.table)

    def step_sizes(self) -> list[int]:
        max_m = max(c.n_patterns for c in self.candidates)
        return [len(self.candidates), *([max_m] * self.K)] * self.n_levels

    def valid_choices(self, t: int, actions: Sequence[int]) -> int:
        per = 1 + self.K
        if t % per == 0:
            return len(self.candidates)
        return self.candidates[actions[(t // per) * per]].n_patterns

    def decode(self, actions: Sequence[int]) -> Configuration:
        per = 1 + self.K
        out = []
        for i in range(self.n_levels):
            chunk = actions[i * per : (i + 1) * per]
            out.append((int(chunk[0]), tuple(sorted({int(a) for a in chunk[1:]}))))
        return tuple(out)

    def deployed_sets(self, config: Configuration) -> list[ModelPatternSet]:
        return [self.candidates[c].subset(pats) for c, pats in config]

    def n_action_sequences(self) -> int:
        per_level = sum(c.n_patterns**self.K for c in self.candidates)
        return per_level**self.n_levels


def build_space(backbone: ToyModel, data: Dataset, table: DvfsTable, perf: PerfModel, cfg: SearchConfig) -> SearchSpace:
    ladder = build_ladder(table, cfg.timing, perf, cfg.theta, cfg.ladder_step, cfg.s_max, quantum=cfg.p_size**2)
    candidates = build_candidate_sets(backbone, ladder, cfg.m, cfg.p_size, seed=cfg.seed)
    return SearchSpace(backbone, data, table, perf, ladder, candidates, cfg.K)


@dataclass
class Evaluation:
    config: Configuration
    sparsities: list[float]
    latencies: list[float]
    energies: list[float]
    runs: int
    runs_per_level: list[int]
    r_runs: float
    accuracies: list[float] | None
    a_w: float | None
    cond: bool | None
    reward: float
    a_o: float
    a_m: float
    pen: float
    timing: float

    @property
    def feasible(self) -> bool:
        return all(l <= self.timing for l in self.latencies)

    def reward_inputs(self) -> RewardInputs:
        return RewardInputs(self.a_w, self.a_o, self.a_m, bool(self.cond), self.pen, self.r_runs, tuple(self.latencies), self.timing)


class Evaluator:
    """Scores configurations of a :class:`SearchSpace`, with memoization."""

    def __init__(self, space: SearchSpace, cfg: SearchConfig):
        self.space = space
        self.cfg = cfg
        n = space.n_levels
        self.alphas = JointTrainConfig(alphas=cfg.alphas).resolved_alphas(n)
        self.fractions = tuple(cfg.fractions) if cfg.fractions is not None else tuple([1.0 / n] * n)
        self.reference = reference_runs(cfg.budget, space.perf, space.table, cfg.headroom)
        self.a_o = evaluate_accuracy(space.backbone, None, space.data.x_holdout, space.data.y_holdout)
        self.cache: dict[Configuration, Evaluation] = {}
        self.n_trained = 0

    def hardware(self, config: Configuration):
        """Per-level (sparsity, latency, energy) of a configuration on the backbone."""
        sp = self.space
        rows = []
        for level, mps in zip(sp.table, sp.deployed_sets(config)):
            assignment = assign_patterns(sp.backbone, mps)
            extra = pattern_masks(sp.backbone, mps, assignment)
            cycles = predict_cycles(sp.perf, sp.backbone, extra, tile=mps.p_size)
            rows.append((mps.sparsity, latency(cycles, level), energy_per_run(cycles, level, sp.perf)))
        return rows

    def __call__(self, config: Configuration) -> Evaluation:
        if config in self.cache:
            return self.cache[config]
        cfg, sp = self.cfg, self.space
        hw = self.hardware(config)
        sparsities = [h[0] for h in hw]
        lats = [h[1] for h in hw]
        energies = [h[2] for h in hw]
        total, per_level = num_runs(cfg.budget, energies, self.fractions)
        r_runs = normalize_runs(total, self.reference)
        accs = a_w = cond = None
        if all(l <= cfg.timing for l in lats):
            sets = sp.deployed_sets(config)
            res = joint_train(
                sp.backbone,
                sets,
                sp.data,
                JointTrainConfig(cfg.finetune_epochs, cfg.finetune_lr, cfg.finetune_batch, cfg.finetune_seed, self.alphas),
            )
            self.n_trained += 1
            accs = res.accuracies
            a_w = float(sum(a * x for a, x in zip(self.alphas, accs)))
            # fastest level first: faster modes should be the more accurate ones
            cond = check_cond(accs[::-1]) if len(accs) > 1 else True
        ev = Evaluation(config, sparsities, lats, energies, total, per_level, r_runs, accs, a_w, cond, 0.0, self.a_o, cfg.a_m, cfg.pen, cfg.timing)
        ev.reward = reward(ev.reward_inputs())
        self.cache[config] = ev
        return ev


@dataclass
class EpisodeResult:
    episode: int
    actions: list[int]
    evaluation: Evaluation
    log_prob: float

    @property
    def reward(self) -> float:
        return self.evaluation.reward


@dataclass
class SearchResult:
    best: EpisodeResult
    log: list[EpisodeResult]
    frontier: list[tuple[float, int]]
    controller: Controller
    evaluator: Evaluator
    baseline_history: list[float] = field(default_factory=list)


def make_controller(space: SearchSpace, cfg: SearchConfig) -> Controller:
    return Controller(space.step_sizes(), hidden=cfg.hidden, seed=cfg.seed, valid=space.valid_choices)


def run_episode(index: int, controller: Controller, evaluator: Evaluator, temperature: float = 1.0) -> EpisodeResult:
    sample = controller.sample(temperature)
    ev = evaluator(evaluator.space.decode(sample.actions))
    return EpisodeResult(index, sample.actions, ev, sample.log_prob)


def search(space: SearchSpace, cfg: SearchConfig, evaluator: Evaluator | None = None) -> SearchResult:
    """REINFORCE search; returns the best deadline-meeting episode and the full log.

    Episodes run serially, so a fixed seed reproduces the log exactly.
    """
    evaluator = evaluator or Evaluator(space, cfg)
    controller = make_controller(space, cfg)
    baseline = EmaBaseline(cfg.baseline_decay)
    episodes: list[EpisodeResult] = []
    history = []
    while len(episodes) < cfg.episodes:
        n = min(cfg.batch_size, cfg.episodes - len(episodes))
        batch = [run_episode(len(episodes) + i, controller, evaluator) for i in range(n)]
        episodes.extend(batch)
        rewards = [e.reward for e in batch]
        b = baseline.current(rewards)
        controller.update([(e.actions, e.reward) for e in batch], b, cfg.lr)
        baseline.observe(rewards)
        history.append(baseline.value)
    feasible = [e for e in episodes if e.evaluation.feasible]
    if not feasible:
        raise NoFeasible(f"all {len(episodes)} episodes missed the {cfg.timing * 1e3:.3f} ms deadline")
    best = max(feasible, key=lambda e: (e.reward, -e.episode))
    log.info("search done: best reward %.6f at episode %d, %d configs trained", best.reward, best.episode, evaluator.n_trained)
    return SearchResult(best, episodes, pareto(log_points(episodes)), controller, evaluator, history)


def enumerate_action_sequences(space: SearchSpace):
    """Every valid action sequence (the exhaustive oracle's domain)."""
    per_level = []
    for c, cand in enumerate(space.candidates):
        for picks in itertools.product(range(cand.n_patterns), repeat=space.K):
            per_level.append((c, *picks))
    for combo in itertools.product(per_level, repeat=space.n_levels):
        yield [a for chunk in combo for a in chunk]


def enumerate_best(space: SearchSpace, evaluator: Evaluator) -> Evaluation:
    best = None
    for actions in enumerate_action_sequences(space):
        ev = evaluator(space.decode(actions))
        if best is None or ev.reward > best.reward:
            best = ev
    return best


def heuristic_configuration(space: SearchSpace, timing: float) -> Configuration:
    """Per level, the least sparse candidate whose worst-case latency meets ``timing``."""
    out = []
    for level in space.table:
        ok = [i for i, c in enumerate(space.candidates) if space.perf.latency_at(c.sparsity, level) <= timing]
        if not ok:
            raise NoFeasible(f"no candidate meets the deadline at {level.name}")
        idx = min(ok, key=lambda i: space.candidates[i].sparsity)
        out.append((idx, tuple(range(min(space.K, space.candidates[idx].n_patterns)))))
    return tuple(out)


# ---------------------------------------------------------------------------
# Pareto frontier over (weighted accuracy, number of runs), both maximized


def log_points(episodes: Sequence[EpisodeResult]) -> list[tuple[float, int]]:
    return [(e.evaluation.a_w, e.evaluation.runs) for e in episodes if e.evaluation.a_w is not None]


def dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[0] >= b[0] and a[1] >= b[1] and (a[0] > b[0] or a[1] > b[1])


def pareto(points: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Non-dominated points, de-duplicated, sorted by accuracy ascending."""
    front = []
    best_runs = -np.inf
    for acc, runs in sorted(set(points), key=lambda p: (-p[0], -p[1])):
        if runs > best_runs:
            front.append((acc, runs))
            best_runs = runs
    return sorted(front)


def weakly_dominates_frontier(upper: Sequence[tuple[float, float]], lower: Sequence[tuple[float, float]]) -> bool:
    """Every point of ``lower`` is matched or beaten in both objectives by some point of ``upper``."""
    return all(any(u[0] >= l[0] and u[1] >= l[1] for u in upper) for l in lower)
