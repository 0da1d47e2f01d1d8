"""FPL-MTD, FPL+GR and FPL-MaxMin defenders."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..resampling import geometric_resample, perturbed_leader
from .base import BanditFeedback, Defender, DefenderView, FeedbackLevel, RevealedFeedback

# Used only when gamma == 0, where the M >= |C| T / gamma rule gives no finite cap.
NO_EXPLORATION_CAP = 1_000_000


@dataclass(frozen=True)
class FplParams:
    eta: float = 0.1
    gamma: float = 0.007
    gr_cap: int | None = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.gr_cap is not None and self.gr_cap < 1:
            raise ValueError(f"gr_cap must be >= 1, got {self.gr_cap}")

    def cap_for(self, num_arms: int, horizon: int) -> int:
        if self.gr_cap is not None:
            return int(self.gr_cap)
        return default_gr_cap(num_arms, horizon, self.gamma)


def default_gr_cap(num_arms: int, horizon: int, gamma: float) -> int:
    """Smallest M with M >= |C| T / gamma (resampling then fails w.p. <= e^-T)."""
    if gamma <= 0:
        return NO_EXPLORATION_CAP
    return max(1, math.ceil(num_arms * max(horizon, 1) / gamma))


@dataclass
class ConfigEstimateTable:
    estimates: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, num_configs: int) -> "ConfigEstimateTable":
        return cls(np.zeros(num_configs))


def fpl_mtd_select(
    table: ConfigEstimateTable,
    prev: int,
    params: FplParams,
    rng: np.random.Generator,
    switching_cost: np.ndarray | None = None,
) -> int:
    """One FPL-MTD draw. Pass ``switching_cost=None`` for the FPL+GR rule."""
    offset = None if switching_cost is None else switching_cost[prev]
    return int(perturbed_leader(table.estimates, params.eta, params.gamma, rng, 1, offset)[0])


def gr_mtd(
    table: ConfigEstimateTable,
    prev: int,
    chosen: int,
    params: FplParams,
    rng: np.random.Generator,
    switching_cost: np.ndarray | None = None,
    cap: int | None = None,
) -> int:
    """Resampling count K estimating 1 / Pr[chosen] under the frozen selector state.

    Reads ``table`` but never modifies it.
    """
    if cap is None:
        cap = params.cap_for(len(table.estimates), 1)
    est = table.estimates
    offset = None if switching_cost is None else switching_cost[prev]

    def simulate(k):
        return perturbed_leader(est, params.eta, params.gamma, rng, k, offset)

    return geometric_resample(simulate, chosen, cap)


def fpl_mtd_update(table: ConfigEstimateTable, chosen: int, reward: float, K: int, t: int) -> ConfigEstimateTable:
    """In place: r_d <- ((t-1) r_d + K * reward * [d == chosen]) / t."""
    if t < 1:
        raise ValueError("round index must be >= 1")
    est = table.estimates
    est *= (t - 1) / t
    est[chosen] += K * reward / t
    table.t = t
    return table


class FplMtd(Defender):
    """Switching-cost-aware follow-the-perturbed-leader with geometric resampling."""

    name = "fpl-mtd"
    switch_aware = True

    def __init__(self, view: DefenderView, rng, params: FplParams | None = None, gr_rng=None):
        super().__init__(view, rng)
        self.params = params or FplParams()
        self.gr_rng = gr_rng if gr_rng is not None else rng
        self.table = ConfigEstimateTable.zeros(view.num_configs)
        self.cap = self.params.cap_for(view.num_configs, view.horizon)
        self.cap_hits = 0
        self._chosen: int | None = None

    @property
    def _costs(self):
        return self.view.switching_cost if self.switch_aware else None

    def select(self) -> int:
        self._chosen = fpl_mtd_select(self.table, self.prev, self.params, self.rng, self._costs)
        return self._chosen

    def _observed_reward(self, fb: BanditFeedback) -> float:
        return fb.reward

    def update(self, feedback: BanditFeedback) -> None:
        chosen = self._chosen
        K = gr_mtd(self.table, self.prev, chosen, self.params, self.gr_rng, self._costs, self.cap)
        if K == self.cap:
            self.cap_hits += 1
        fpl_mtd_update(self.table, chosen, self._observed_reward(feedback), K, feedback.t)
        self.prev = chosen

    def to_state(self) -> dict:
        return {
            "name": self.name,
            "prev": int(self.prev),
            "t": self.table.t,
            "estimates": self.table.estimates.tolist(),
            "params": {"eta": self.params.eta, "gamma": self.params.gamma, "gr_cap": self.cap},
        }

    def load_state(self, state: dict) -> None:
        self.prev = int(state["prev"])
        self.table = ConfigEstimateTable(np.array(state["estimates"], dtype=float), int(state["t"]))


class FplGr(FplMtd):
    """Plain FPL+GR: ignores switching costs when selecting, learns from
    reward minus switching cost."""

    name = "fpl-gr"
    switch_aware = False

    def _observed_reward(self, fb: BanditFeedback) -> float:
        return fb.modified_reward


# -- FPL-MaxMin -------------------------------------------------------------

@dataclass
class VulnEstimateTable:
    """Per (vulnerability, attacker type) estimates and the counts behind them.

    ``reward_sums[v, k]`` is the total raw reward of rounds where type k
    exploited v. The importance weight of every past round for a pair is the
    pair's *current* empirical attack probability, so storing the sum is
    enough to recompute the estimate retroactively.
    """

    estimates: np.ndarray  # (V, tau)
    exposure: np.ndarray  # (V,) rounds in which v was in the deployed config
    attack_counts: np.ndarray  # (V, tau)
    type_counts: np.ndarray  # (tau,)
    reward_sums: np.ndarray  # (V, tau)
    t: int = 0

    @classmethod
    def zeros(cls, num_vulns: int, num_types: int) -> "VulnEstimateTable":
        return cls(
            estimates=np.zeros((num_vulns, num_types)),
            exposure=np.zeros(num_vulns, dtype=np.int64),
            attack_counts=np.zeros((num_vulns, num_types), dtype=np.int64),
            type_counts=np.zeros(num_types, dtype=np.int64),
            reward_sums=np.zeros((num_vulns, num_types)),
        )

    def attack_probabilities(self, type_distribution: np.ndarray) -> np.ndarray:
        """P_k * (attacks of k on v) / (rounds k attacked); 0 for unseen types."""
        seen = self.type_counts > 0
        freq = np.divide(
            self.attack_counts, self.type_counts[None, :],
            out=np.zeros(self.attack_counts.shape), where=seen[None, :],
        )
        return type_distribution[None, :] * freq


def maxmin_values(perturbed: np.ndarray, vuln_mask: np.ndarray, type_distribution: np.ndarray) -> np.ndarray:
    """u_c = sum_k P_k min_{v in V_c} perturbed[v, k] for every configuration."""
    if not vuln_mask.any(axis=1).all():
        raise ValueError("configuration with empty vulnerability set")
    masked = np.where(vuln_mask[:, :, None], perturbed[None, :, :], np.inf)
    return masked.min(axis=1) @ type_distribution


def fpl_maxmin_select(
    table: VulnEstimateTable,
    prev: int,
    vuln_mask: np.ndarray,
    type_distribution: np.ndarray,
    switching_cost: np.ndarray,
    params: FplParams,
    rng: np.random.Generator,
) -> int:
    n = vuln_mask.shape[0]
    if rng.random() < params.gamma:
        return int(rng.integers(0, n))
    z = rng.exponential(params.eta, size=table.estimates.shape)
    u = maxmin_values(table.estimates - z, vuln_mask, type_distribution)
    return int(np.argmax(u - switching_cost[prev]))


def fpl_maxmin_update(
    table: VulnEstimateTable,
    observed_type: int,
    observed_vuln: int,
    reward: float,
    deployed: int,
    vuln_mask: np.ndarray,
    type_distribution: np.ndarray,
    t: int,
) -> VulnEstimateTable:
    """In place: bump counters, then recompute every estimate from the current
    empirical attack probabilities."""
    if t < 1:
        raise ValueError("round index must be >= 1")
    table.exposure += vuln_mask[deployed]
    table.type_counts[observed_type] += 1
    table.attack_counts[observed_vuln, observed_type] += 1
    table.reward_sums[observed_vuln, observed_type] += reward
    table.t = t

    p = table.attack_probabilities(type_distribution)
    denom = table.exposure[:, None] * p
    table.estimates = np.divide(
        table.reward_sums, denom,
        out=np.zeros(table.reward_sums.shape), where=denom > 0,
    )
    return table


class FplMaxMin(Defender):
    name = "fpl-maxmin"
    feedback_level = FeedbackLevel.REVEALED

    def __init__(self, view: DefenderView, rng, params: FplParams | None = None, single_type: bool = False):
        super().__init__(view, rng)
        if view.vuln_mask is None or view.type_distribution is None:
            raise ValueError("fpl-maxmin needs vulnerability sets and the type distribution")
        self.params = params or FplParams(eta=0.03, gamma=0.006)
        self.single_type = single_type
        self.type_distribution = np.ones(1) if single_type else np.asarray(view.type_distribution, float)
        self.table = VulnEstimateTable.zeros(view.vuln_mask.shape[1], len(self.type_distribution))

    def select(self) -> int:
        self._chosen = fpl_maxmin_select(
            self.table, self.prev, self.view.vuln_mask, self.type_distribution,
            self.view.switching_cost, self.params, self.rng,
        )
        return self._chosen

    def update(self, feedback: RevealedFeedback) -> None:
        k = 0 if self.single_type else feedback.attacker_type
        fpl_maxmin_update(
            self.table, k, feedback.exploit, feedback.reward, self._chosen,
            self.view.vuln_mask, self.type_distribution, feedback.t,
        )
        self.prev = self._chosen

    def to_state(self) -> dict:
        tb = self.table
        return {
            "name": self.name,
            "prev": int(self.prev),
            "t": tb.t,
            "single_type": self.single_type,
            "params": {"eta": self.params.eta, "gamma": self.params.gamma},
            "type_distribution": self.type_distribution.tolist(),
            "estimates": tb.estimates.tolist(),
            "exposure": tb.exposure.tolist(),
            "attack_counts": tb.attack_counts.tolist(),
            "type_counts": tb.type_counts.tolist(),
            "reward_sums": tb.reward_sums.tolist(),
        }

    def load_state(self, state: dict) -> None:
        self.prev = int(state["prev"])
        self.table = VulnEstimateTable(
            estimates=np.array(state["estimates"], dtype=float),
            exposure=np.array(state["exposure"], dtype=np.int64),
            attack_counts=np.array(state["attack_counts"], dtype=np.int64),
            type_counts=np.array(state["type_counts"], dtype=np.int64),
            reward_sums=np.array(state["reward_sums"], dtype=float),
            t=int(state["t"]),
        )
