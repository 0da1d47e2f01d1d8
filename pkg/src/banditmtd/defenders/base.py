from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class FeedbackLevel(str, enum.Enum):
    BANDIT = "bandit"
    REVEALED = "revealed"


@dataclass(frozen=True)
class BanditFeedback:
    """What a reward-only defender learns at the end of round ``t``.

    ``switch_cost`` is the cost of the defender's own move this round and
    ``exploited`` whether the deployed configuration was breached; neither
    reveals anything about the attacker.
    """

    t: int
    reward: float
    switch_cost: float
    exploited: bool

    @property
    def modified_reward(self) -> float:
        return self.reward - self.switch_cost


@dataclass(frozen=True)
class RevealedFeedback(BanditFeedback):
    attacker_type: int = -1
    exploit: int = -1


@dataclass(frozen=True)
class DefenderView:
    """The parts of an instance a defender may know up front.

    Never carries reward tables. ``vuln_mask`` and ``type_distribution`` are
    only filled in for defenders that assume prior vulnerability knowledge.
    """

    num_configs: int
    switching_cost: np.ndarray
    horizon: int
    initial_config: int = 0
    vuln_mask: np.ndarray | None = None
    type_distribution: np.ndarray | None = None


class Defender:
    """Base class: ``select`` picks this round's configuration, ``update``
    consumes the feedback for it. One instance per run; not thread-safe."""

    name = "defender"
    feedback_level = FeedbackLevel.BANDIT

    def __init__(self, view: DefenderView, rng: np.random.Generator):
        self.view = view
        self.rng = rng
        self.prev = view.initial_config

    def select(self) -> int:
        raise NotImplementedError

    def update(self, feedback: BanditFeedback) -> None:
        raise NotImplementedError

    def to_state(self) -> dict:
        return {"name": self.name, "prev": int(self.prev)}
