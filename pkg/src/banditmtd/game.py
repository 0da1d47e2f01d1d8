"""Repeated Bayesian MTD game: instances, round records, utility accounting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

PROB_TOL = 1e-9


class StructuralError(ValueError):
    """Ids or array shapes that do not fit the instance they are used with."""


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GameInstance:
    """One game between a defender switching among configurations and a
    population of attacker types.

    Reward tables are dense and indexed ``[type, vuln, config]``. When the
    instance was built from per-vulnerability scores those are kept in
    ``vuln_defender_reward`` / ``vuln_attacker_reward`` so it can be written
    back to the JSON file format.
    """

    vuln_mask: np.ndarray  # (C, V) bool, vuln_mask[c, v] <=> v in V_c
    capabilities: np.ndarray  # (tau, V) bool
    type_distribution: np.ndarray  # (tau,)
    defender_reward: np.ndarray  # (tau, V, C) in [-1, 0]
    attacker_reward: np.ndarray  # (tau, V, C) in [0, 1]
    switching_cost: np.ndarray  # (C, C) in [0, 1]
    initial_config: int = 0
    vuln_defender_reward: np.ndarray | None = None
    vuln_attacker_reward: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "vuln_mask", _frozen(self.vuln_mask, bool))
        set_(self, "capabilities", _frozen(self.capabilities, bool))
        set_(self, "type_distribution", _frozen(self.type_distribution, float))
        set_(self, "defender_reward", _frozen(self.defender_reward, float))
        set_(self, "attacker_reward", _frozen(self.attacker_reward, float))
        set_(self, "switching_cost", _frozen(self.switching_cost, float))
        set_(self, "initial_config", int(self.initial_config))
        if self.vuln_defender_reward is not None:
            set_(self, "vuln_defender_reward", _frozen(self.vuln_defender_reward, float))
        if self.vuln_attacker_reward is not None:
            set_(self, "vuln_attacker_reward", _frozen(self.vuln_attacker_reward, float))

        C, V = self.vuln_mask.shape
        tau = self.capabilities.shape[0]
        expected = {
            "capabilities": (self.capabilities.shape, (tau, V)),
            "type_distribution": (self.type_distribution.shape, (tau,)),
            "defender_reward": (self.defender_reward.shape, (tau, V, C)),
            "attacker_reward": (self.attacker_reward.shape, (tau, V, C)),
            "switching_cost": (self.switching_cost.shape, (C, C)),
        }
        for name, (got, want) in expected.items():
            if got != want:
                raise StructuralError(f"{name} has shape {got}, expected {want}")

    @property
    def num_configs(self) -> int:
        return self.vuln_mask.shape[0]

    @property
    def num_vulns(self) -> int:
        return self.vuln_mask.shape[1]

    @property
    def num_attacker_types(self) -> int:
        return self.capabilities.shape[0]

    @property
    def vuln_sets(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.vuln_mask]

    @property
    def capability_sets(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.capabilities]

    @property
    def success_mask(self) -> np.ndarray:
        """(tau, V, C) bool: the exploit succeeds."""
        return self.capabilities[:, :, None] & self.vuln_mask.T[None, :, :]

    @classmethod
    def from_vuln_rewards(
        cls,
        vuln_sets: Sequence[Iterable[int]],
        capabilities: Sequence[Iterable[int]],
        type_distribution: Sequence[float],
        vuln_defender_reward: Sequence[float],
        vuln_attacker_reward: Sequence[float],
        switching_cost,
        initial_config: int = 0,
        num_vulns: int | None = None,
        meta: dict | None = None,
    ) -> "GameInstance":
        """Expand per-vulnerability rewards into dense (type, vuln, config) tables."""
        d_scalar = np.asarray(vuln_defender_reward, dtype=float)
        a_scalar = np.asarray(vuln_attacker_reward, dtype=float)
        V = len(d_scalar) if num_vulns is None else int(num_vulns)
        if len(d_scalar) != V or len(a_scalar) != V:
            raise StructuralError("per-vulnerability reward arrays must have num_vulns entries")
        mask = np.zeros((len(vuln_sets), V), dtype=bool)
        for c, vs in enumerate(vuln_sets):
            mask[c, _checked_ids(vs, V, "vulnerability")] = True
        caps = np.zeros((len(capabilities), V), dtype=bool)
        for k, vs in enumerate(capabilities):
            caps[k, _checked_ids(vs, V, "vulnerability")] = True
        success = caps[:, :, None] & mask.T[None, :, :]
        d_dense = np.where(success, d_scalar[None, :, None], 0.0)
        a_dense = np.where(success, a_scalar[None, :, None], 0.0)
        return cls(
            vuln_mask=mask,
            capabilities=caps,
            type_distribution=type_distribution,
            defender_reward=d_dense,
            attacker_reward=a_dense,
            switching_cost=switching_cost,
            initial_config=initial_config,
            vuln_defender_reward=d_scalar,
            vuln_attacker_reward=a_scalar,
            meta=dict(meta or {}),
        )


def _checked_ids(ids, bound: int, what: str) -> np.ndarray:
    arr = np.asarray(list(ids), dtype=int)
    if arr.size and (arr.min() < 0 or arr.max() >= bound):
        raise StructuralError(f"{what} id out of range [0, {bound})")
    return arr


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_instance(instance: GameInstance) -> ValidationReport:
    """Check every instance invariant and list each violation with its location."""
    out: list[str] = []
    inst = instance
    for c in np.flatnonzero(~inst.vuln_mask.any(axis=1)):
        out.append(f"empty vulnerability set for config {c}")
    for k in np.flatnonzero(~inst.capabilities.any(axis=1)):
        out.append(f"empty capability set for attacker type {k}")

    def _range(name, arr, lo, hi):
        bad = np.argwhere((arr < lo) | (arr > hi) | ~np.isfinite(arr))
        for idx in bad[:20]:
            out.append(f"{name} out of [{lo:g},{hi:g}] at {tuple(int(i) for i in idx)}")
        if len(bad) > 20:
            out.append(f"{name}: {len(bad) - 20} more out-of-range entries")

    _range("defender reward", inst.defender_reward, -1.0, 0.0)
    _range("attacker reward", inst.attacker_reward, 0.0, 1.0)
    _range("switching cost", inst.switching_cost, 0.0, 1.0)
    for c in np.flatnonzero(np.diag(inst.switching_cost) != 0):
        out.append(f"switching cost diagonal nonzero at config {c}")

    P = inst.type_distribution
    for k in np.flatnonzero(P < 0):
        out.append(f"type distribution negative at type {k}")
    if abs(P.sum() - 1.0) > PROB_TOL:
        out.append(f"type distribution sums to {P.sum()!r}, not 1")

    fail = ~inst.success_mask
    for idx in np.argwhere(fail & (inst.defender_reward != 0))[:20]:
        out.append(f"defender reward nonzero for failed exploit at {tuple(int(i) for i in idx)}")
    for idx in np.argwhere(fail & (inst.attacker_reward != 0))[:20]:
        out.append(f"attacker reward nonzero for failed exploit at {tuple(int(i) for i in idx)}")

    if not 0 <= inst.initial_config < inst.num_configs:
        out.append(f"initial config {inst.initial_config} out of range")
    return ValidationReport(tuple(out))


def round_reward(instance: GameInstance, attacker_type: int, vuln: int, config: int) -> float:
    """Defender reward for one round; 0 iff the exploit fails."""
    _check_id(attacker_type, instance.num_attacker_types, "attacker type")
    _check_id(vuln, instance.num_vulns, "vulnerability")
    _check_id(config, instance.num_configs, "configuration")
    return float(instance.defender_reward[attacker_type, vuln, config])


def _check_id(i, bound, what):
    if not 0 <= int(i) < bound:
        raise StructuralError(f"{what} id {i} out of range [0, {bound})")


@dataclass(frozen=True)
class RoundRecord:
    t: int
    deployed: int
    attacker_type: int
    exploit: int
    reward: float
    switch_cost_paid: float


@dataclass
class Trace:
    instance: GameInstance
    rounds: list[RoundRecord] = field(default_factory=list)
    initial_config: int = 0
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.rounds)

    @property
    def deployed(self) -> np.ndarray:
        return np.array([r.deployed for r in self.rounds], dtype=int)

    @property
    def final_config(self) -> int:
        return self.rounds[-1].deployed if self.rounds else self.initial_config


def total_utility(trace: Trace) -> float:
    """Sum over rounds of reward minus the cost of switching into the deployed config."""
    inst = trace.instance
    C = inst.num_configs
    _check_id(trace.initial_config, C, "initial configuration")
    prev = trace.initial_config
    total = 0.0
    for i, rec in enumerate(trace.rounds, start=1):
        if rec.t != i:
            raise StructuralError(f"round index {rec.t} at position {i}; rounds must be 1..T")
        _check_id(rec.deployed, C, "configuration")
        _check_id(rec.attacker_type, inst.num_attacker_types, "attacker type")
        _check_id(rec.exploit, inst.num_vulns, "vulnerability")
        total += rec.reward - float(inst.switching_cost[prev, rec.deployed])
        prev = rec.deployed
    return total


def performance(algo_total_utility: float, uniform_total_utility: float) -> float:
    return algo_total_utility - uniform_total_utility


def fix_vulnerabilities(instance: GameInstance, fixed: Iterable[int], attacker_side: bool = False) -> GameInstance:
    """New instance in which the fixed vulnerabilities cost the defender nothing.

    By default only the defender's reward for a fixed vulnerability becomes 0;
    the attacker's payoff table is left as is. With ``attacker_side=True`` the
    attacker's reward is zeroed too, i.e. the exploit fails outright.
    Vulnerability sets are never changed.
    """
    S = _checked_ids(fixed, instance.num_vulns, "vulnerability")
    d = np.array(instance.defender_reward)
    a = np.array(instance.attacker_reward)
    d[:, S, :] = 0.0
    if attacker_side:
        a[:, S, :] = 0.0
    d_scalar = a_scalar = None
    if instance.vuln_defender_reward is not None:
        d_scalar = np.array(instance.vuln_defender_reward)
        d_scalar[S] = 0.0
    if instance.vuln_attacker_reward is not None:
        a_scalar = np.array(instance.vuln_attacker_reward)
        if attacker_side:
            a_scalar[S] = 0.0
    meta = dict(instance.meta)
    meta["fixed_vulns"] = sorted(set(meta.get("fixed_vulns", [])) | {int(v) for v in S})
    return GameInstance(
        vuln_mask=instance.vuln_mask,
        capabilities=instance.capabilities,
        type_distribution=instance.type_distribution,
        defender_reward=d,
        attacker_reward=a,
        switching_cost=instance.switching_cost,
        initial_config=instance.initial_config,
        vuln_defender_reward=d_scalar,
        vuln_attacker_reward=a_scalar,
        meta=meta,
    )


# -- JSON file format ------------------------------------------------------

def instance_to_dict(instance: GameInstance) -> dict[str, Any]:
    if instance.vuln_defender_reward is None or instance.vuln_attacker_reward is None:
        raise StructuralError("instance has no per-vulnerability rewards; cannot serialize")
    return {
        "num_configs": instance.num_configs,
        "num_vulns": instance.num_vulns,
        "num_attacker_types": instance.num_attacker_types,
        "vuln_sets": [s.tolist() for s in instance.vuln_sets],
        "capabilities": [s.tolist() for s in instance.capability_sets],
        "type_distribution": instance.type_distribution.tolist(),
        "vuln_defender_reward": instance.vuln_defender_reward.tolist(),
        "vuln_attacker_reward": instance.vuln_attacker_reward.tolist(),
        "switching_cost": instance.switching_cost.tolist(),
        "initial_config": instance.initial_config,
        "meta": instance.meta,
    }


def instance_from_dict(doc: dict[str, Any]) -> GameInstance:
    required = (
        "num_configs", "num_vulns", "num_attacker_types", "vuln_sets", "capabilities",
        "type_distribution", "vuln_defender_reward", "vuln_attacker_reward", "switching_cost",
    )
    missing = [k for k in required if k not in doc]
    if missing:
        raise StructuralError(f"instance document missing fields: {', '.join(missing)}")
    if len(doc["vuln_sets"]) != doc["num_configs"]:
        raise StructuralError("len(vuln_sets) != num_configs")
    if len(doc["capabilities"]) != doc["num_attacker_types"]:
        raise StructuralError("len(capabilities) != num_attacker_types")
    return GameInstance.from_vuln_rewards(
        vuln_sets=doc["vuln_sets"],
        capabilities=doc["capabilities"],
        type_distribution=doc["type_distribution"],
        vuln_defender_reward=doc["vuln_defender_reward"],
        vuln_attacker_reward=doc["vuln_attacker_reward"],
        switching_cost=doc["switching_cost"],
        initial_config=doc.get("initial_config", 0),
        num_vulns=doc["num_vulns"],
        meta=doc.get("meta", {}),
    )


def save_instance(instance: GameInstance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance), sort_keys=True) + "\n")


def load_instance(path) -> GameInstance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))
