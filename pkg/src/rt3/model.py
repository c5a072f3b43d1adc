"""A small dense classifier with hand-written backprop, plus its synthetic data.

The network is ``input -> dense(relu) -> ... -> dense(softmax)``.  Every
layer owns a weight matrix (out x in), a bias and a block-structured pruning
mask.  Extra masks (e.g. tiled patterns) can be layered on per call; the
gradient returned for a weight is always multiplied by the combined mask so
pruned positions never move.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ShapeMismatch
from .matrix import as_weight_matrix, mask_from_dict, mask_to_dict, matrix_from_dict, matrix_to_dict


@dataclass
class Layer:
    name: str
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"
    mask: np.ndarray | None = None
    prunable: bool = True

    def __post_init__(self):
        self.weight = as_weight_matrix(self.weight)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeMismatch(f"layer {self.name}: bias {self.bias.shape} vs weight {self.weight.shape}")
        if self.mask is None:
            self.mask = np.ones(self.weight.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.weight.shape:
            raise ShapeMismatch(f"layer {self.name}: mask {self.mask.shape} vs weight {self.weight.shape}")
        if self.activation not in ("relu", "softmax"):
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def masked_weight(self) -> np.ndarray:
        return np.where(self.mask, self.weight, 0.0)


@dataclass(frozen=True)
class DatasetSpec:
    """Parameters of the Gaussian-cluster classification task."""

    n_features: int = 16
    n_classes: int = 4
    n_train: int = 512
    n_holdout: int = 256
    separation: float = 2.0
    spread: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_holdout: np.ndarray
    y_holdout: np.ndarray
    spec: DatasetSpec | None = None


def make_dataset(spec: DatasetSpec) -> Dataset:
    """Balanced Gaussian clusters; centres ~ N(0, separation^2), noise ~ N(0, spread^2)."""
    rng = np.random.default_rng(spec.seed)
    centres = rng.normal(0.0, spec.separation, size=(spec.n_classes, spec.n_features))

    def draw(n):
        y = np.arange(n) % spec.n_classes
        rng.shuffle(y)
        x = centres[y] + rng.normal(0.0, spec.spread, size=(n, spec.n_features))
        return x, y

    x_tr, y_tr = draw(spec.n_train)
    x_ho, y_ho = draw(spec.n_holdout)
    return Dataset(x_tr, y_tr, x_ho, y_ho, spec)


@dataclass
class ToyModel:
    layers: list[Layer]
    dataset: DatasetSpec | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise ShapeMismatch(f"layer {nxt.name} expects {nxt.weight.shape[1]} inputs, got {prev.weight.shape[0]}")
        if self.layers and self.layers[-1].activation != "softmax":
            raise ValueError("last layer must use softmax")

    def copy(self) -> "ToyModel":
        return copy.deepcopy(self)

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    @property
    def n_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def combined_masks(self, extra: dict[str, np.ndarray] | None = None) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            m = layer.mask
            if extra and layer.name in extra:
                m = m & extra[layer.name]
            out.append(m)
        return out

    # -- forward / backward --------------------------------------------------

    def forward(self, x: np.ndarray, extra_masks: dict[str, np.ndarray] | None = None):
        """Class probabilities and a cache for :meth:`backward`."""
        masks = self.combined_masks(extra_masks)
        acts = [np.asarray(x, dtype=np.float64)]
        pre = []
        h = acts[0]
        for layer, m in zip(self.layers, masks):
            z = h @ np.where(m, layer.weight, 0.0).T + layer.bias
            pre.append(z)
            h = softmax(z) if layer.activation == "softmax" else np.maximum(z, 0.0)
            acts.append(h)
        return h, (acts, pre, masks)

    def loss(self, x, y, extra_masks=None) -> float:
        probs, _ = self.forward(x, extra_masks)
        return cross_entropy(probs, y)

    def backward(self, y: np.ndarray, cache) -> list[tuple[np.ndarray, np.ndarray]]:
        """Gradients of mean cross-entropy w.r.t. each (weight, bias).

        Weight gradients are already multiplied by the combined mask.
        """
        acts, pre, masks = cache
        n = acts[0].shape[0]
        probs = acts[-1]
        delta = probs.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer, m = self.layers[i], masks[i]
            if layer.activation == "relu":
                delta = delta * (pre[i] > 0)
            gw = (delta.T @ acts[i]) * m
            gb = delta.sum(axis=0)
            grads[i] = (gw, gb)
            if i:
                delta = delta @ np.where(m, layer.weight, 0.0)
        return grads

    def predict(self, x, extra_masks=None) -> np.ndarray:
        probs, _ = self.forward(x, extra_masks)
        return np.argmax(probs, axis=1)

    # -- persistence -----------------------------------------------------------

    def weight_checksum(self) -> str:
        h = hashlib.sha256()
        for layer in self.layers:
            h.update(np.ascontiguousarray(layer.weight).tobytes())
            h.update(np.ascontiguousarray(layer.bias).tobytes())
            h.update(np.packbits(layer.mask).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "dataset": asdict(self.dataset) if self.dataset else None,
            "meta": self.meta,
            "layers": [
                {
                    "name": l.name,
                    "activation": l.activation,
                    "prunable": l.prunable,
                    "weight": matrix_to_dict(l.weight),
                    "bias": l.bias.tolist(),
                    "mask": mask_to_dict(l.mask),
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyModel":
        layers = [
            Layer(
                name=ld["name"],
                weight=matrix_from_dict(ld["weight"]),
                bias=np.asarray(ld["bias"], dtype=np.float64),
                activation=ld["activation"],
                mask=mask_from_dict(ld["mask"]) if ld.get("mask") else None,
                prunable=ld.get("prunable", True),
            )
            for ld in d["layers"]
        ]
        ds = DatasetSpec(**d["dataset"]) if d.get("dataset") else None
        return cls(layers, ds, dict(d.get("meta", {})))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs: np.ndarray, y: np.ndarray) -> float:
    n = probs.shape[0]
    p = probs[np.arange(n), y]
    return float(-np.mean(np.log(np.clip(p, 1e-300, None))))


def init_toy_model(sizes: list[int], seed: int = 0, dataset: DatasetSpec | None = None) -> ToyModel:
    """He-initialised MLP with layer widths ``sizes`` (input first)."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        last = i == len(sizes) - 2
        w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
        layers.append(Layer(f"fc{i + 1}", w, np.zeros(n_out), "softmax" if last else "relu"))
    return ToyModel(layers, dataset)
