"""Attacker models. One strategy object per attacker type per run.

An attacker sees its own reward table, its capability set and the history of
configurations deployed in earlier rounds. Nothing else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .resampling import geometric_resample, perturbed_leader


class DeployHistory:
    """Counts of configurations deployed so far; shared read-only by all attackers."""

    def __init__(self, num_configs: int):
        self.counts = np.zeros(num_configs, dtype=np.int64)
        self.t = 0

    def record(self, config: int) -> None:
        self.counts[config] += 1
        self.t += 1

    def empirical(self) -> np.ndarray:
        """Empirical distribution of past deployments; uniform before round 1."""
        if self.t == 0:
            return np.full(len(self.counts), 1.0 / len(self.counts))
        return self.counts / self.t


@dataclass
class AttackerView:
    type_id: int
    capabilities: np.ndarray  # sorted vulnerability ids
    reward: np.ndarray  # (V, C) this type's attacker reward
    vuln_mask: np.ndarray  # (C, V)
    history: DeployHistory

    def expected_rewards(self) -> np.ndarray:
        """Expected reward of each capable vulnerability vs. the empirical defender."""
        return self.reward[self.capabilities] @ self.history.empirical()

    def success_counts(self) -> np.ndarray:
        """Past rounds in which each capable vulnerability was present in the deployed config."""
        return self.history.counts @ self.vuln_mask[:, self.capabilities]


def _sample(rng: np.random.Generator, p: np.ndarray) -> int:
    return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), len(p) - 1))


def best_response_select(view: AttackerView) -> int:
    return int(view.capabilities[np.argmax(view.expected_rewards())])


def random_select(view: AttackerView, rng: np.random.Generator) -> int:
    return int(view.capabilities[rng.integers(0, len(view.capabilities))])


def qr_probabilities(utilities: np.ndarray, lam: float) -> np.ndarray:
    return softmax(lam * np.asarray(utilities, dtype=float))


def qr_select(view: AttackerView, lam: float, rng: np.random.Generator) -> int:
    return int(view.capabilities[_sample(rng, qr_probabilities(view.expected_rewards(), lam))])


def biased_stochastic_probabilities(success_counts: np.ndarray) -> np.ndarray:
    w = 1.0 + np.asarray(success_counts, dtype=float)
    return w / w.sum()


def biased_stochastic_select(view: AttackerView, rng: np.random.Generator) -> int:
    p = biased_stochastic_probabilities(view.success_counts())
    return int(view.capabilities[_sample(rng, p)])


class Attacker:
    name = "attacker"

    def __init__(self, view: AttackerView, rng: np.random.Generator):
        self.view = view
        self.rng = rng

    def select(self) -> int:
        raise NotImplementedError

    def update(self, reward: float) -> None:
        pass


class BestResponse(Attacker):
    name = "best-response"

    def select(self) -> int:
        return best_response_select(self.view)


class RandomAttacker(Attacker):
    name = "random"

    def select(self) -> int:
        return random_select(self.view, self.rng)


class QuantalResponse(Attacker):
    name = "qr"

    def __init__(self, view, rng, lam: float = 5.0):
        super().__init__(view, rng)
        if not (lam >= 0 and math.isfinite(lam)):
            raise ValueError("QR rationality must be finite and >= 0")
        self.lam = lam

    def select(self) -> int:
        return qr_select(self.view, self.lam, self.rng)


class BiasedStochastic(Attacker):
    name = "biased-stochastic"

    def select(self) -> int:
        return biased_stochastic_select(self.view, self.rng)


class FplUe(Attacker):
    """Follow the perturbed leader with uniform exploration over the capability set.

    Estimates are running averages of importance-weighted rewards; the weight
    1/Pr[choice] is replaced by a geometric-resampling count. The clock only
    advances in rounds where this type attacks.
    """

    name = "fpl-ue"

    def __init__(self, view, rng, gamma: float = 0.01, eta: float = 0.1, gr_cap: int | None = None,
                 horizon: int = 1000, gr_rng=None):
        super().__init__(view, rng)
        if not 0 <= gamma <= 1 or not eta > 0:
            raise ValueError("need 0 <= gamma <= 1 and eta > 0")
        self.gamma = gamma
        self.eta = eta
        m = len(view.capabilities)
        if gr_cap is None:
            gr_cap = math.ceil(m * max(horizon, 1) / gamma) if gamma > 0 else 1_000_000
        self.cap = int(gr_cap)
        self.gr_rng = gr_rng if gr_rng is not None else rng
        self.estimates = np.zeros(m)
        self.t = 0
        self._idx = None

    def _draw(self, k: int, rng) -> np.ndarray:
        return perturbed_leader(self.estimates, self.eta, self.gamma, rng, k)

    def select(self) -> int:
        self._idx = int(self._draw(1, self.rng)[0])
        return int(self.view.capabilities[self._idx])

    def update(self, reward: float) -> None:
        K = geometric_resample(lambda k: self._draw(k, self.gr_rng), self._idx, self.cap)
        self.t += 1
        t = self.t
        self.estimates *= (t - 1) / t
        self.estimates[self._idx] += K * reward / t


class FixedMixedAttacker(Attacker):
    """Replays a fixed distribution over this type's capability set."""

    name = "fixed-mixed"

    def __init__(self, view, rng, probabilities):
        super().__init__(view, rng)
        p = np.asarray(probabilities, dtype=float)
        if p.shape != (len(view.capabilities),) or (p < 0).any() or abs(p.sum() - 1) > 1e-9:
            raise ValueError("fixed mixed strategy must be a distribution over the capability set")
        self.p = p

    def select(self) -> int:
        return int(self.view.capabilities[_sample(self.rng, self.p)])


ATTACKERS = {
    cls.name: cls
    for cls in (BestResponse, FplUe, RandomAttacker, QuantalResponse, BiasedStochastic, FixedMixedAttacker)
}
