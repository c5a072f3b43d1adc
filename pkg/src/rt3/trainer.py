"""Joint training of one shared backbone under several pattern sets.

Each batch is pushed through the backbone once per pattern set; the
sub-losses are combined with weights ``alpha_i`` and a single SGD step
updates the shared weights.  Pattern assignment (which pattern each tile
uses) is refreshed at the start of every epoch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DivergenceDetected, InvalidConfig, ShapeMismatch
from .model import Dataset, ToyModel, cross_entropy
from .patterns import ModelPatternSet, pattern_masks

log = logging.getLogger(__name__)

Assignment = dict[str, np.ndarray]


@dataclass(frozen=True)
class JointTrainConfig:
    epochs: int = 10
    lr: float = 0.1
    batch_size: int = 32
    seed: int = 0
    alphas: tuple[float, ...] | None = None  # None -> uniform

    def resolved_alphas(self, n: int) -> tuple[float, ...]:
        if self.alphas is None:
            return tuple([1.0 / n] * n)
        a = tuple(float(x) for x in self.alphas)
        if len(a) != n:
            raise InvalidConfig(f"{len(a)} loss weights for {n} pattern sets")
        if any(x < 0 for x in a) or abs(math.fsum(a) - 1.0) > 1e-9:
            raise InvalidConfig(f"loss weights must be >= 0 and sum to 1, got {a}")
        return a


@dataclass
class JointTrainResult:
    model: ToyModel
    accuracies: list[float]
    epoch_losses: list[float] = field(default_factory=list)
    assignments: list[Assignment] = field(default_factory=list)


def assign_patterns(model: ToyModel, mps: ModelPatternSet) -> Assignment:
    """Per tile, the pattern keeping the largest l2 norm of the pruned weights."""
    out = {}
    for name, pset in mps.sets.items():
        layer = model.layer(name)
        p = pset.p_size
        r, c = layer.weight.shape
        if r % p or c % p:
            raise ShapeMismatch(f"layer {name} ({r}x{c}) is not tileable by {p}x{p}")
        out[name] = kernels.assign_block_patterns(layer.masked_weight, pset.as_array())
    return out


def masks_for(model: ToyModel, mps: ModelPatternSet | None, assignment: Assignment | None = None) -> dict[str, np.ndarray] | None:
    if mps is None:
        return None
    if assignment is None:
        assignment = assign_patterns(model, mps)
    return pattern_masks(model, mps, assignment)


def forward_masked(model: ToyModel, assignment: Assignment | None, mps: ModelPatternSet | None, x: np.ndarray, y: np.ndarray | None = None):
    """Probabilities (and cross-entropy if ``y`` given) with pattern masks applied."""
    extra = masks_for(model, mps, assignment)
    probs, _ = model.forward(x, extra)
    loss = cross_entropy(probs, y) if y is not None else None
    return probs, loss


def weighted_loss_and_grads(model: ToyModel, masks: Sequence[dict | None], x, y, alphas: Sequence[float]):
    """Raw ``sum_i alpha_i * subloss_i`` and its gradients (no normalization)."""
    total = 0.0
    grads = None
    for extra, a in zip(masks, alphas):
        probs, cache = model.forward(x, extra)
        total += a * cross_entropy(probs, y)
        g = model.backward(y, cache)
        if grads is None:
            grads = [(a * gw, a * gb) for gw, gb in g]
        else:
            grads = [(GW + a * gw, GB + a * gb) for (GW, GB), (gw, gb) in zip(grads, g)]
    return total, grads


def evaluate_accuracy(model: ToyModel, mps: ModelPatternSet | None, x: np.ndarray, y: np.ndarray, assignment: Assignment | None = None) -> float:
    extra = masks_for(model, mps, assignment)
    return float(np.mean(model.predict(x, extra) == y))


def joint_train(
    model: ToyModel,
    pattern_sets: Sequence[ModelPatternSet | None],
    data: Dataset,
    config: JointTrainConfig,
    copy: bool = True,
) -> JointTrainResult:
    """Train one weight store under every pattern set; report hold-out accuracy per set.

    ``None`` in ``pattern_sets`` stands for the plain backbone (block
    pruning masks only).  With ``copy=False`` the given model is updated in
    place.
    """
    if not pattern_sets:
        raise InvalidConfig("joint training needs at least one pattern set")
    alphas = config.resolved_alphas(len(pattern_sets))
    net = model.copy() if copy else model
    rng = np.random.default_rng(config.seed)
    n = data.x_train.shape[0]
    epoch_losses = []
    for epoch in range(config.epochs):
        masks = [masks_for(net, s) for s in pattern_sets]
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = weighted_loss_and_grads(net, masks, data.x_train[idx], data.y_train[idx], alphas)
            if not math.isfinite(loss):
                raise DivergenceDetected(f"non-finite loss at epoch {epoch}")
            for layer, (gw, gb) in zip(net.layers, grads):
                layer.weight -= config.lr * gw
                layer.bias -= config.lr * gb
            batch_losses.append(loss * len(idx))
        epoch_losses.append(sum(batch_losses) / n)
        log.debug("epoch %d loss %.6f", epoch, epoch_losses[-1])
    assignments = [assign_patterns(net, s) if s is not None else {} for s in pattern_sets]
    accs = [
        evaluate_accuracy(net, s, data.x_holdout, data.y_holdout, a if s is not None else None)
        for s, a in zip(pattern_sets, assignments)
    ]
    return JointTrainResult(net, accs, epoch_losses, assignments)
