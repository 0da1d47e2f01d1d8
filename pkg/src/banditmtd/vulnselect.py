"""Choosing which vulnerabilities to patch under a budget, from learned
(vulnerability, attacker type) reward estimates."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PRICE_TOL = 1e-12
BRUTE_FORCE_LIMIT = 25


@dataclass(frozen=True, eq=False)
class PatchProblem:
    estimates: np.ndarray  # (V, tau), non-positive
    prices: np.ndarray  # (V,)
    budget: float
    vuln_mask: np.ndarray  # (C, V)
    type_distribution: np.ndarray  # (tau,)

    def __post_init__(self):
        set_ = object.__setattr__
        est = np.asarray(self.estimates, dtype=float)
        if est.ndim == 1:
            est = est[:, None]
        set_(self, "estimates", est)
        set_(self, "prices", np.asarray(self.prices, dtype=float))
        set_(self, "vuln_mask", np.asarray(self.vuln_mask, dtype=bool))
        set_(self, "type_distribution", np.asarray(self.type_distribution, dtype=float))
        V, tau = est.shape
        if self.prices.shape != (V,):
            raise ValueError(f"prices must have shape ({V},)")
        if self.vuln_mask.ndim != 2 or self.vuln_mask.shape[1] != V:
            raise ValueError(f"vuln_mask must have shape (C, {V})")
        if self.type_distribution.shape != (tau,):
            raise ValueError(f"type_distribution must have shape ({tau},)")
        if (self.prices < 0).any():
            raise ValueError("prices must be nonnegative")
        if self.budget < 0:
            raise ValueError("budget must be nonnegative")
        if (est > 0).any():
            raise ValueError("reward estimates must be non-positive")
        if not self.vuln_mask.any(axis=1).all():
            raise ValueError("configuration with empty vulnerability set")

    @property
    def num_vulns(self) -> int:
        return self.estimates.shape[0]

    @property
    def num_types(self) -> int:
        return self.estimates.shape[1]

    @classmethod
    def from_instance(cls, instance, estimates, prices=None, budget: float = 0.0) -> "PatchProblem":
        prices = np.ones(instance.num_vulns) if prices is None else prices
        return cls(estimates, prices, budget, instance.vuln_mask, instance.type_distribution)


@dataclass(frozen=True)
class FixSet:
    vulns: tuple[int, ...]
    total_price: float
    objective: float
    method: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {"vulns": list(self.vulns), "total_price": self.total_price, "objective": self.objective,
                "method": self.method, **self.extra}


def patched_estimates(r: np.ndarray, fixed) -> np.ndarray:
    out = np.array(r, dtype=float, copy=True)
    idx = np.asarray(list(fixed), dtype=int)
    out[idx] = 0.0
    return out


def config_values(r: np.ndarray, vuln_mask: np.ndarray, type_distribution: np.ndarray) -> np.ndarray:
    """sum_k P_k min_{v in V_c} r[v, k] for every configuration."""
    masked = np.where(vuln_mask[:, :, None], r[None, :, :], np.inf)
    return masked.min(axis=1) @ type_distribution


def choose_vul_objective(fixed, problem: PatchProblem) -> float:
    """Worst configuration's weighted worst-vulnerability estimate after patching."""
    rS = patched_estimates(problem.estimates, fixed)
    return float(config_values(rS, problem.vuln_mask, problem.type_distribution).min())


def max_max_min_objective(fixed, problem: PatchProblem) -> tuple[float, int]:
    """Best configuration's value after patching, and that configuration."""
    rS = patched_estimates(problem.estimates, fixed)
    vals = config_values(rS, problem.vuln_mask, problem.type_distribution)
    c = int(np.argmax(vals))
    return float(vals[c]), c


def _fixset(S, problem, method, **extra) -> FixSet:
    S = tuple(sorted(int(v) for v in S))
    return FixSet(S, float(problem.prices[list(S)].sum()) if S else 0.0,
                  choose_vul_objective(S, problem), method, extra)


def _fits(spent: float, price: float, budget: float) -> bool:
    return spent + price <= budget + PRICE_TOL


def greedy_one_attacker(problem: PatchProblem) -> FixSet:
    """Fix the worst-estimate vulnerability (cheapest on ties, then lowest id)
    until the next one does not fit the budget. Optimal for one attacker type."""
    if problem.num_types != 1:
        raise ValueError("greedy_one_attacker needs exactly one attacker type; use greedy_multi")
    r = problem.estimates[:, 0]
    candidates = np.flatnonzero(problem.vuln_mask.any(axis=0))
    order = candidates[np.lexsort((candidates, problem.prices[candidates], r[candidates]))]
    S, spent = [], 0.0
    for v in order:
        if not _fits(spent, problem.prices[v], problem.budget):
            break
        S.append(int(v))
        spent += problem.prices[v]
    return _fixset(S, problem, "greedy-one")


def _candidate_objectives(rS: np.ndarray, problem: PatchProblem) -> np.ndarray:
    """Objective after additionally fixing each single vulnerability, all at once.

    Fixing v only moves the (config, type) minima whose argmin is v; those
    drop to the second-smallest value (or 0, the fixed entry itself).
    """
    mask = problem.vuln_mask
    C, V = mask.shape
    masked = np.where(mask[:, :, None], rS[None, :, :], np.inf)  # (C, V, tau)
    arg1 = masked.argmin(axis=1)  # (C, tau)
    min1 = np.take_along_axis(masked, arg1[:, None, :], axis=1)[:, 0, :]
    np.put_along_axis(masked, arg1[:, None, :], np.inf, axis=1)
    min2 = np.minimum(masked.min(axis=1), 0.0)
    hit = arg1[:, :, None] == np.arange(V)[None, None, :]  # (C, tau, V)
    minima = np.where(hit, min2[:, :, None], min1[:, :, None])
    vals = np.einsum("ckv,k->cv", minima, problem.type_distribution)
    return vals.min(axis=0)


def greedy_multi(problem: PatchProblem) -> FixSet:
    """Repeatedly fix the single vulnerability that most improves the
    objective; stop when it does not fit.

    Ties (common when no single fix moves the worst configuration) go to the
    most damaging vulnerability by type-weighted estimate, then the cheapest,
    then the lowest id. With one attacker type this is greedy_one_attacker.
    """
    rS = np.array(problem.estimates)
    prices = problem.prices
    weighted = problem.estimates @ problem.type_distribution
    open_ = problem.vuln_mask.any(axis=0)
    S, spent = [], 0.0
    while open_.any():
        obj = _candidate_objectives(rS, problem)
        ids = np.flatnonzero(open_)
        best = ids[np.lexsort((ids, prices[ids], weighted[ids], -obj[ids]))[0]]
        if not _fits(spent, prices[best], problem.budget):
            break
        S.append(int(best))
        spent += prices[best]
        open_[best] = False
        rS[best] = 0.0
    return _fixset(S, problem, "greedy")


def brute_force(problem: PatchProblem, objective: str = "choose-vul", limit: int = BRUTE_FORCE_LIMIT) -> FixSet:
    """Exhaustive search over budget-feasible subsets.

    Among optima: least total price, then fewest vulnerabilities, then the
    lexicographically smallest id tuple.
    """
    V = problem.num_vulns
    if V > limit:
        raise ValueError(f"brute force refused: {V} vulnerabilities exceeds the limit of {limit}")
    if objective == "choose-vul":
        f = lambda S: choose_vul_objective(S, problem)  # noqa: E731
    elif objective == "max-max-min":
        f = lambda S: max_max_min_objective(S, problem)[0]  # noqa: E731
    else:
        raise ValueError(f"unknown objective {objective!r}")
    best_key, best_S = None, ()
    for size in range(V + 1):
        for S in itertools.combinations(range(V), size):
            price = float(problem.prices[list(S)].sum()) if S else 0.0
            if not _fits(0.0, price, problem.budget):
                continue
            key = (-f(S), price, size, S)
            if best_key is None or key < best_key:
                best_key, best_S = key, S
    fs = _fixset(best_S, problem, f"brute-{objective}")
    if objective == "max-max-min":
        value, config = max_max_min_objective(best_S, problem)
        fs = FixSet(fs.vulns, fs.total_price, fs.objective, fs.method,
                    {"max_max_min_value": value, "config": config})
    return fs


def brute_force_choose_vul(problem: PatchProblem) -> FixSet:
    return brute_force(problem, "choose-vul")


def random_fix(problem: PatchProblem, rng: np.random.Generator) -> FixSet:
    """Fix vulnerabilities in random order until the next pick does not fit."""
    S, spent = [], 0.0
    for v in rng.permutation(problem.num_vulns):
        if not _fits(spent, problem.prices[v], problem.budget):
            break
        S.append(int(v))
        spent += problem.prices[v]
    return _fixset(S, problem, "random")


METHODS = ("greedy", "greedy-one", "random", "brute")


def select_fixes(problem: PatchProblem, method: str, rng: np.random.Generator | None = None) -> FixSet:
    if method == "greedy":
        return greedy_multi(problem)
    if method == "greedy-one":
        return greedy_one_attacker(problem)
    if method == "brute":
        return brute_force_choose_vul(problem)
    if method == "random":
        return random_fix(problem, rng if rng is not None else np.random.default_rng())
    raise ValueError(f"unknown method {method!r}; valid: {', '.join(METHODS)}")


# -- patch-then-continue experiment ----------------------------------------

@dataclass
class ImprovementStats:
    budget: float
    repeats: int
    greedy: list[float]
    random: list[float]
    no_fix_utility: list[float]
    greedy_sets: list[tuple[int, ...]]
    random_sets: list[tuple[int, ...]]

    def _ms(self, xs: Sequence[float]):
        x = np.asarray(xs, dtype=float)
        se = float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else None
        return float(x.mean()), se

    def to_dict(self) -> dict:
        gm, gse = self._ms(self.greedy)
        rm, rse = self._ms(self.random)
        nm, _ = self._ms(self.no_fix_utility)
        return {
            "budget": self.budget, "repeats": self.repeats,
            "greedy_mean_improvement": gm, "greedy_se": gse,
            "random_mean_improvement": rm, "random_se": rse,
            "no_fix_mean_utility": nm,
            "greedy_improvements": self.greedy, "random_improvements": self.random,
            "greedy_sets": [list(s) for s in self.greedy_sets],
            "random_sets": [list(s) for s in self.random_sets],
        }


def improvement_experiment(
    instance,
    budget: float,
    T1: int = 1000,
    T2: int = 1000,
    repeats: int = 50,
    attacker: str = "best-response",
    prices=None,
    master_seed: int = 2022,
    defender_params: dict | None = None,
    attacker_params: dict | None = None,
    attacker_side: bool = False,
) -> ImprovementStats:
    """Train FPL-MaxMin for T1 rounds, then continue the same match for T2
    rounds in three branches: greedy fixes, random fixes, no fixes.

    Branches are deep copies, so they share every random stream. Improvement
    is a branch's T2-round utility minus the no-fix branch's.
    """
    from .engine import Match, RunSpec, derive_seed, substream
    from .game import fix_vulnerabilities

    prices = np.ones(instance.num_vulns) if prices is None else np.asarray(prices, dtype=float)
    out = ImprovementStats(budget, repeats, [], [], [], [], [])
    for r in range(repeats):
        seed = derive_seed(master_seed, r)
        spec = RunSpec(instance, defender="fpl-maxmin", attacker=attacker, T=T1, seed=seed,
                       defender_params=dict(defender_params or {}), attacker_params=dict(attacker_params or {}))
        trained = Match(spec).play(T1)
        problem = PatchProblem.from_instance(instance, trained.defender.table.estimates, prices, budget)
        g = greedy_multi(problem)
        rnd = random_fix(problem, substream(seed, "random-fix"))

        utils = {}
        for name, S in (("none", ()), ("greedy", g.vulns), ("random", rnd.vulns)):
            branch = trained.branch(fix_vulnerabilities(instance, S, attacker_side) if S else None)
            before = branch.total
            branch.play(T2)
            utils[name] = branch.total - before
        out.greedy.append(utils["greedy"] - utils["none"])
        out.random.append(utils["random"] - utils["none"])
        out.no_fix_utility.append(utils["none"])
        out.greedy_sets.append(g.vulns)
        out.random_sets.append(rnd.vulns)
    return out
