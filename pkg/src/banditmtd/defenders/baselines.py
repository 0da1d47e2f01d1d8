"""Baseline defenders that learn from reward minus switching cost only."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from .base import BanditFeedback, Defender, DefenderView


class Uniform(Defender):
    name = "uniform"

    def select(self) -> int:
        self._chosen = uniform_step(self.view.num_configs, self.rng)
        return self._chosen

    def update(self, feedback: BanditFeedback) -> None:
        self.prev = self._chosen


def uniform_step(num_configs: int, rng: np.random.Generator) -> int:
    return int(rng.integers(0, num_configs))


class FixedMixed(Defender):
    """Replays an externally computed mixed strategy every round."""

    name = "fixed-mixed"

    def __init__(self, view: DefenderView, rng, probabilities):
        super().__init__(view, rng)
        p = np.asarray(probabilities, dtype=float)
        if p.shape != (view.num_configs,) or (p < 0).any() or abs(p.sum() - 1) > 1e-9:
            raise ValueError("fixed mixed strategy must be a distribution over configurations")
        self.cdf = np.cumsum(p)

    def select(self) -> int:
        self._chosen = int(min(np.searchsorted(self.cdf, self.rng.random(), side="right"), len(self.cdf) - 1))
        return self._chosen

    def update(self, feedback: BanditFeedback) -> None:
        self.prev = self._chosen


class SExp3(Defender):
    """Exp3 played in blocks: one draw per block of ``batch`` rounds, updated
    with the block's average modified reward.

    Weights live in log space. Rewards are non-positive and used directly as
    negative losses, so the update factor is exp(lr * g / p).
    """

    name = "s-exp3"

    def __init__(self, view: DefenderView, rng, batch: int | None = None, lr: float | None = None, mix: float = 0.0):
        super().__init__(view, rng)
        n = view.num_configs
        T = max(view.horizon, 1)
        self.batch = batch or math.ceil(T ** (1 / 3))
        if self.batch < 1:
            raise ValueError("batch size must be >= 1")
        num_batches = math.ceil(T / self.batch)
        if lr is None:
            lr = math.sqrt(math.log(n) / (n * num_batches)) if n > 1 else 0.0
        if not 0 <= mix <= 1:
            raise ValueError("mix must be in [0, 1]")
        self.lr = lr
        self.mix = mix
        self.log_w = np.zeros(n)
        self._arm = None
        self._p_arm = None
        self._acc = 0.0
        self._len = 0

    def probabilities(self) -> np.ndarray:
        w = np.exp(self.log_w - logsumexp(self.log_w))
        return (1 - self.mix) * w + self.mix / len(w)

    def select(self) -> int:
        if self._len == 0:
            p = self.probabilities()
            arm = int(min(np.searchsorted(np.cumsum(p), self.rng.random(), side="right"), len(p) - 1))
            self._arm, self._p_arm = arm, float(p[arm])
        return self._arm

    def update(self, feedback: BanditFeedback) -> None:
        self._acc += feedback.modified_reward
        self._len += 1
        if self._len == self.batch:
            sexp3_update(self.log_w, self._arm, self._acc / self.batch, self._p_arm, self.lr)
            self._acc = 0.0
            self._len = 0
        self.prev = self._arm

    def to_state(self) -> dict:
        return {
            "name": self.name, "prev": int(self.prev), "log_weights": self.log_w.tolist(),
            "batch": self.batch, "lr": self.lr, "mix": self.mix,
        }


def sexp3_update(log_w: np.ndarray, arm: int, gain: float, prob: float, lr: float) -> None:
    """Importance-weighted exponential-weights step, in place."""
    log_w[arm] += lr * gain / prob


class RobustRL(Defender):
    """Epsilon-greedy tabular Q-learning over configurations.

    Stand-in for the cited RobustRL method, which is not specified in enough
    detail to reproduce.
    """

    name = "robust-rl"

    def __init__(self, view: DefenderView, rng, alpha: float = 0.2, discount: float = 0.8, epsilon: float = 0.1):
        super().__init__(view, rng)
        if not 0 <= epsilon <= 1:
            raise ValueError("epsilon must be in [0, 1]")
        self.alpha = alpha
        self.discount = discount
        self.epsilon = epsilon
        self.q = np.zeros(view.num_configs)

    def select(self) -> int:
        if self.rng.random() < self.epsilon:
            self._chosen = int(self.rng.integers(0, len(self.q)))
        else:
            self._chosen = int(np.argmax(self.q))
        return self._chosen

    def update(self, feedback: BanditFeedback) -> None:
        q_update(self.q, self._chosen, feedback.modified_reward, self.alpha, self.discount)
        self.prev = self._chosen

    def to_state(self) -> dict:
        return {
            "name": self.name, "prev": int(self.prev), "q": self.q.tolist(),
            "alpha": self.alpha, "discount": self.discount, "epsilon": self.epsilon,
        }


def q_update(q: np.ndarray, action: int, reward: float, alpha: float, discount: float) -> None:
    q[action] = (1 - alpha) * q[action] + alpha * (reward + discount * q.max())


class BiasedASLR(Defender):
    """Samples configurations with probability proportional to 1 / (1 + times breached)."""

    name = "biased-aslr"

    def __init__(self, view: DefenderView, rng):
        super().__init__(view, rng)
        self.counts = np.zeros(view.num_configs, dtype=np.int64)

    def probabilities(self) -> np.ndarray:
        w = 1.0 / (1.0 + self.counts)
        return w / w.sum()

    def select(self) -> int:
        cdf = np.cumsum(self.probabilities())
        self._chosen = int(min(np.searchsorted(cdf, self.rng.random(), side="right"), len(cdf) - 1))
        return self._chosen

    def update(self, feedback: BanditFeedback) -> None:
        if feedback.exploited:
            self.counts[self._chosen] += 1
        self.prev = self._chosen

    def to_state(self) -> dict:
        return {"name": self.name, "prev": int(self.prev), "counts": self.counts.tolist()}
