"""Recurrent stochastic controller trained with REINFORCE.

A tanh RNN emits one categorical decision per step.  Each step has its own
output head and its own action embedding, which is fed back as the next
step's input.  The number of valid choices at a step may depend on earlier
actions (e.g. a chosen pattern set may hold fewer patterns than the head
width); invalid logits are simply dropped from the softmax.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

ValidFn = Callable[[int, Sequence[int]], int]


@dataclass
class Sample:
    actions: list[int]
    log_prob: float


class Controller:
    """Parameters are stored in ``self.params`` (a dict of arrays) so they
    can be perturbed wholesale in gradient checks."""

    def __init__(self, step_sizes: Sequence[int], hidden: int = 32, embed: int = 16, seed: int = 0, valid: ValidFn | None = None, init_scale: float = 0.1):
        self.step_sizes = [int(n) for n in step_sizes]
        if any(n < 1 for n in self.step_sizes):
            raise ValueError("every decision step needs at least one choice")
        self.hidden = hidden
        self.embed = embed
        self.valid = valid
        self.rng = np.random.default_rng(seed)
        init = np.random.default_rng([seed, 1])
        p = {
            "start": init.normal(0, init_scale, embed),
            "w_x": init.normal(0, init_scale, (hidden, embed)),
            "w_h": init.normal(0, init_scale, (hidden, hidden)),
            "b_h": np.zeros(hidden),
        }
        for t, n in enumerate(self.step_sizes):
            # zero heads -> uniform initial policy
            p[f"w_o{t}"] = np.zeros((n, hidden))
            p[f"b_o{t}"] = np.zeros(n)
            p[f"emb{t}"] = init.normal(0, init_scale, (n, embed))
        self.params = p

    @property
    def n_steps(self) -> int:
        return len(self.step_sizes)

    def _n_valid(self, t: int, actions: Sequence[int]) -> int:
        n = self.step_sizes[t]
        if self.valid is not None:
            n = max(1, min(n, int(self.valid(t, actions))))
        return n

    def _run(self, actions: Sequence[int] | None, temperature: float = 1.0):
        """Unroll the RNN. Samples when ``actions`` is None, else scores them."""
        p = self.params
        h = np.zeros(self.hidden)
        x = p["start"]
        chosen: list[int] = []
        cache = []
        log_prob = 0.0
        for t in range(self.n_steps):
            h_prev = h
            h = np.tanh(p["w_x"] @ x + p["w_h"] @ h_prev + p["b_h"])
            n = self._n_valid(t, chosen)
            logits = (p[f"w_o{t}"] @ h + p[f"b_o{t}"])[:n]
            probs = _softmax(logits)
            if actions is not None:
                a = int(actions[t])
                if not 0 <= a < n:
                    raise ValueError(f"action {a} invalid at step {t} ({n} choices)")
            elif temperature == 0:
                a = int(np.argmax(logits))
            else:
                a = int(self.rng.choice(n, p=probs if temperature == 1 else _softmax(logits / temperature)))
            log_prob += float(np.log(probs[a]))
            cache.append((x, h_prev, h, probs, a, n))
            chosen.append(a)
            x = p[f"emb{t}"][a]
        return chosen, log_prob, cache

    def sample(self, temperature: float = 1.0) -> Sample:
        """Draw one action sequence; ``temperature=0`` picks the argmax at every step."""
        actions, lp, _ = self._run(None, temperature)
        return Sample(actions, lp)

    def log_prob(self, actions: Sequence[int]) -> float:
        return self._run(actions)[1]

    def step_probs(self, actions: Sequence[int]) -> list[np.ndarray]:
        return [c[3] for c in self._run(actions)[2]]

    def grad_log_prob(self, actions: Sequence[int]) -> dict[str, np.ndarray]:
        """Gradient of ``log pi(actions)`` w.r.t. every parameter (BPTT)."""
        _, _, cache = self._run(actions)
        p = self.params
        g = {k: np.zeros_like(v) for k, v in p.items()}
        dh_next = np.zeros(self.hidden)
        for t in range(self.n_steps - 1, -1, -1):
            x, h_prev, h, probs, a, n = cache[t]
            dlogits = -probs
            dlogits[a] += 1.0
            g[f"w_o{t}"][:n] += np.outer(dlogits, h)
            g[f"b_o{t}"][:n] += dlogits
            dh = p[f"w_o{t}"][:n].T @ dlogits + dh_next
            da = dh * (1.0 - h * h)
            g["w_x"] += np.outer(da, x)
            g["w_h"] += np.outer(da, h_prev)
            g["b_h"] += da
            dh_next = p["w_h"].T @ da
            dx = p["w_x"].T @ da
            if t == 0:
                g["start"] += dx
            else:
                g[f"emb{t - 1}"][cache[t - 1][4]] += dx
        return g

    def update(self, batch: Sequence[tuple[Sequence[int], float]], baseline: float, lr: float) -> None:
        """REINFORCE ascent: ``theta += lr * mean((R - b) * grad log pi)``."""
        if not batch:
            raise ValueError("empty episode batch")
        total = {k: np.zeros_like(v) for k, v in self.params.items()}
        for actions, r in batch:
            adv = r - baseline
            if adv == 0.0:
                continue
            for k, v in self.grad_log_prob(actions).items():
                total[k] += adv * v
        scale = lr / len(batch)
        for k in self.params:
            self.params[k] += scale * total[k]

    def state_dict(self) -> dict:
        return {k: v.tolist() for k, v in self.params.items()}


class EmaBaseline:
    """Exponential moving average of rewards; starts at the first batch mean."""

    def __init__(self, decay: float = 0.9):
        self.decay = decay
        self.value: float | None = None

    def current(self, rewards: Sequence[float]) -> float:
        if self.value is None:
            return float(np.mean(rewards))
        return self.value

    def observe(self, rewards: Sequence[float]) -> None:
        m = float(np.mean(rewards))
        self.value = m if self.value is None else self.decay * self.value + (1 - self.decay) * m


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()
