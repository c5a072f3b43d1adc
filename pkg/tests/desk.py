"""Shared desk-scale fixtures: a small trained backbone and a 144-sequence search space."""

from __future__ import annotations

import dataclasses
from functools import lru_cache

from rt3.model import DatasetSpec, init_toy_model, make_dataset
from rt3.perf import PerfModel, load_dvfs
from rt3.pruning import BpConfig, bp_prune_model
from rt3.search import Evaluator, SearchConfig, build_space
from rt3.trainer import JointTrainConfig, joint_train

LOOSE_T = 0.115
TIGHT_T = 0.105
SEARCH = SearchConfig(timing=LOOSE_T, K=1, m=4, theta=2, episodes=500, lr=0.05, batch_size=1)


@lru_cache(maxsize=None)
def backbone():
    spec = DatasetSpec(separation=1.0, seed=0)
    data = make_dataset(spec)
    model = init_toy_model([16, 32, 4], seed=0, dataset=spec)
    model = joint_train(model, [None], data, JointTrainConfig(epochs=30, lr=0.1)).model
    pruned, _ = bp_prune_model(model, BpConfig(axis="column", k=4, percentile=0.25))
    return joint_train(pruned, [None], data, JointTrainConfig(epochs=10, lr=0.05)).model, data


@lru_cache(maxsize=None)
def space():
    """Two levels (l4, l6) with the ladder of the loose deadline."""
    bb, data = backbone()
    return build_space(bb, data, load_dvfs().subset(["l4", "l6"]), PerfModel(base_cycles=2.8e8), SEARCH)


@lru_cache(maxsize=None)
def evaluator(timing=LOOSE_T):
    return Evaluator(space(), dataclasses.replace(SEARCH, timing=timing))
