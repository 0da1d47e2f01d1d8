"""Run the repeated game and aggregate batches of runs."""

from __future__ import annotations

import copy
import logging
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .attackers import ATTACKERS, AttackerView, DeployHistory, FplUe
from .defenders import DEFENDERS, BanditFeedback, DefenderView, FeedbackLevel, RevealedFeedback
from .defenders.fpl import FplGr, FplMaxMin, FplMtd, FplParams
from .game import GameInstance, RoundRecord, Trace, total_utility

log = logging.getLogger(__name__)

DEFAULT_SEED = 2022


class ConfigError(ValueError):
    pass


# -- random streams ---------------------------------------------------------

def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named consumer of one run's seed.

    Keyed on a stable hash of ``name``, so adding a consumer leaves the
    others' draws unchanged.
    """
    key = zlib.crc32(name.encode())
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))


def derive_seed(master: int, *keys: int) -> int:
    """Child seed for (dataset, repeat, ...) coordinates of a batch."""
    ss = np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# -- run specs --------------------------------------------------------------

@dataclass
class RunSpec:
    instance: GameInstance
    defender: str = "fpl-mtd"
    attacker: str = "best-response"
    T: int = 1000
    seed: int = DEFAULT_SEED
    defender_params: dict[str, Any] = field(default_factory=dict)
    attacker_params: dict[str, Any] = field(default_factory=dict)
    feedback: FeedbackLevel | None = None
    dataset_id: str = "instance"
    record_series: bool = False

    def resolved_feedback(self) -> FeedbackLevel:
        cls = DEFENDERS.get(self.defender)
        if cls is None:
            raise ConfigError(f"unknown defender {self.defender!r}; valid: {', '.join(sorted(DEFENDERS))}")
        return self.feedback or cls.feedback_level


def validate_spec(spec: RunSpec) -> None:
    level = spec.resolved_feedback()
    if spec.attacker not in ATTACKERS:
        raise ConfigError(f"unknown attacker {spec.attacker!r}; valid: {', '.join(sorted(ATTACKERS))}")
    if spec.T < 0:
        raise ConfigError("horizon T must be >= 0")
    needs = DEFENDERS[spec.defender].feedback_level
    if needs is FeedbackLevel.REVEALED and level is not FeedbackLevel.REVEALED:
        raise ConfigError(f"{spec.defender} needs revealed feedback (attacker type and exploit)")


def defender_view(instance: GameInstance, T: int, prior_knowledge: bool) -> DefenderView:
    return DefenderView(
        num_configs=instance.num_configs,
        switching_cost=instance.switching_cost,
        horizon=T,
        initial_config=instance.initial_config,
        vuln_mask=instance.vuln_mask if prior_knowledge else None,
        type_distribution=instance.type_distribution if prior_knowledge else None,
    )


def make_defender(spec: RunSpec):
    params = dict(spec.defender_params)
    cls = DEFENDERS[spec.defender]
    rng = substream(spec.seed, "defender")
    view = defender_view(spec.instance, spec.T, prior_knowledge=cls is FplMaxMin)
    if cls in (FplMtd, FplGr):
        fp = FplParams(
            eta=params.pop("eta", 0.1), gamma=params.pop("gamma", 0.007), gr_cap=params.pop("gr_cap", None) or None
        )
        d = cls(view, rng, fp, gr_rng=substream(spec.seed, "defender-gr"))
    elif cls is FplMaxMin:
        fp = FplParams(eta=params.pop("eta", 0.03), gamma=params.pop("gamma", 0.006))
        d = cls(view, rng, fp, single_type=bool(params.pop("single_type", False)))
    else:
        d = cls(view, rng, **params)
        params = {}
    if params:
        raise ConfigError(f"unknown parameters for {spec.defender}: {', '.join(sorted(params))}")
    return d


def make_attackers(spec: RunSpec, history: DeployHistory) -> list:
    inst = spec.instance
    cls = ATTACKERS[spec.attacker]
    out = []
    for k in range(inst.num_attacker_types):
        view = AttackerView(
            type_id=k,
            capabilities=np.flatnonzero(inst.capabilities[k]),
            reward=np.ascontiguousarray(inst.attacker_reward[k]),
            vuln_mask=inst.vuln_mask,
            history=history,
        )
        rng = substream(spec.seed, f"attacker-{k}")
        params = dict(spec.attacker_params)
        if cls is FplUe:
            params.setdefault("horizon", spec.T)
            params["gr_rng"] = substream(spec.seed, f"attacker-{k}-gr")
        if "probabilities" in params:
            params["probabilities"] = params["probabilities"][k]
        try:
            out.append(cls(view, rng, **params))
        except TypeError as exc:
            raise ConfigError(f"bad parameters for attacker {spec.attacker}: {exc}") from None
    return out


@dataclass
class RunSummary:
    total_utility: float
    switches: int
    uniform_utility: float | None = None
    performance: float | None = None
    cumulative: list[float] | None = None
    cap_hits: int = 0
    wall_time: float = 0.0


_TYPE_BLOCK = 1024


class Match:
    """A game in progress: strategy states, deployment history and trace.

    ``play`` advances it; ``branch`` copies it (random streams included) onto
    a possibly different instance so that branches see identical randomness.
    """

    def __init__(self, spec: RunSpec):
        validate_spec(spec)
        self.spec = spec
        self.instance = spec.instance
        self.revealed = spec.resolved_feedback() is FeedbackLevel.REVEALED
        self.defender = make_defender(spec)
        self.history = DeployHistory(self.instance.num_configs)
        self.attackers = make_attackers(spec, self.history)
        self._type_rng = substream(spec.seed, "types")
        self._types = np.empty(0, dtype=int)
        self.trace = Trace(self.instance, [], self.instance.initial_config, spec.seed)
        self.prev = self.instance.initial_config
        self.t = 0
        self.switches = 0
        self.total = 0.0
        self.series: list[float] | None = [] if spec.record_series else None

    def _type_at(self, t: int) -> int:
        while len(self._types) < t:
            block = self._type_rng.choice(
                self.instance.num_attacker_types, size=_TYPE_BLOCK, p=self.instance.type_distribution
            )
            self._types = np.concatenate([self._types, block])
        return int(self._types[t - 1])

    def play(self, rounds: int) -> "Match":
        inst = self.instance
        d_rew, a_rew = inst.defender_reward, inst.attacker_reward
        success, cost = inst.success_mask, inst.switching_cost
        defender, attackers = self.defender, self.attackers
        records = self.trace.rounds
        prev, total, switches = self.prev, self.total, self.switches
        for t in range(self.t + 1, self.t + rounds + 1):
            k = self._type_at(t)
            d = defender.select()
            a = attackers[k].select()
            r = float(d_rew[k, a, d])
            sc = float(cost[prev, d])
            hit = bool(success[k, a, d])
            if self.revealed:
                fb = RevealedFeedback(t, r, sc, hit, attacker_type=k, exploit=a)
            else:
                fb = BanditFeedback(t, r, sc, hit)
            defender.update(fb)
            attackers[k].update(float(a_rew[k, a, d]))
            self.history.record(d)
            records.append(RoundRecord(t, d, k, a, r, sc))
            total += r - sc
            switches += d != prev
            prev = d
            if self.series is not None:
                self.series.append(total)
        self.t += rounds
        self.prev, self.total, self.switches = prev, total, int(switches)
        return self

    def branch(self, instance: GameInstance | None = None) -> "Match":
        """Deep copy, optionally onto an instance with the same shape (e.g. patched)."""
        new = copy.deepcopy(self)
        if instance is not None:
            if instance.vuln_mask.shape != self.instance.vuln_mask.shape:
                raise ConfigError("branch instance must have the same configurations and vulnerabilities")
            new.instance = instance
            new.trace = Trace(instance, list(new.trace.rounds), new.trace.initial_config, new.trace.seed)
            for k, att in enumerate(new.attackers):
                att.view.reward = np.ascontiguousarray(instance.attacker_reward[k])
        return new

    def summary(self, started: float | None = None) -> RunSummary:
        return RunSummary(
            total_utility=self.total,
            switches=self.switches,
            cumulative=self.series,
            cap_hits=getattr(self.defender, "cap_hits", 0),
            wall_time=0.0 if started is None else time.perf_counter() - started,
        )


def run(spec: RunSpec) -> tuple[Trace, RunSummary]:
    """Play ``spec.T`` rounds and return the trace with its summary."""
    started = time.perf_counter()
    match = Match(spec).play(spec.T)
    return match.trace, match.summary(started)


def run_paired(spec: RunSpec) -> tuple[Trace, RunSummary]:
    """Run ``spec`` and the uniform defender on the same seed; fill in performance."""
    trace, summary = run(spec)
    uni = RunSpec(**{**spec.__dict__, "defender": "uniform", "defender_params": {}, "feedback": None,
                     "record_series": False})
    _, usum = run(uni)
    summary.uniform_utility = usum.total_utility
    summary.performance = summary.total_utility - usum.total_utility
    return trace, summary


# -- batches ----------------------------------------------------------------

@dataclass(frozen=True)
class Job:
    dataset: int
    defender: str
    attacker: str
    repeat: int
    seed: int
    T: int
    defender_params: tuple = ()
    attacker_params: tuple = ()


_WORKER_INSTANCES: Sequence[GameInstance] = ()


def _init_worker(instances):
    global _WORKER_INSTANCES
    _WORKER_INSTANCES = instances


def _run_job(job: Job) -> dict:
    spec = RunSpec(
        instance=_WORKER_INSTANCES[job.dataset],
        defender=job.defender,
        attacker=job.attacker,
        T=job.T,
        seed=job.seed,
        defender_params=_thaw(job.defender_params),
        attacker_params=_thaw(job.attacker_params),
    )
    _, s = run(spec)
    return {"total_utility": s.total_utility, "switches": s.switches, "wall_time": s.wall_time,
            "cap_hits": s.cap_hits}


def _freeze(d: dict | None) -> tuple:
    return tuple(sorted((k, tuple(map(tuple, v)) if _is_nested(v) else v) for k, v in (d or {}).items()))


def _is_nested(v) -> bool:
    return isinstance(v, list) and v and isinstance(v[0], list)


def _thaw(t: tuple) -> dict:
    return {k: [list(x) for x in v] if isinstance(v, tuple) else v for k, v in t}


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_jobs(instances: Sequence[GameInstance], jobs: Sequence[Job], workers: int | None = None) -> list[dict]:
    """Results in job order regardless of worker count."""
    workers = workers or default_workers()
    if workers <= 1 or len(jobs) <= 1:
        _init_worker(instances)
        return [_run_job(j) for j in jobs]
    chunk = max(1, len(jobs) // (workers * 8))
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(tuple(instances),)) as pool:
        return list(pool.map(_run_job, jobs, chunksize=chunk))


@dataclass
class CellStats:
    dataset: str
    defender: str
    attacker: str
    n: int
    mean_performance: float
    se_performance: float | None
    mean_utility: float
    mean_switches: float


def mean_se(values) -> tuple[float, float | None]:
    x = np.asarray(values, dtype=float)
    if len(x) < 2:
        return float(x.mean()), None
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def evaluate(
    instances: Sequence[GameInstance],
    defenders: Sequence[str],
    attackers: Sequence[str],
    T: int = 1000,
    repeats: int = 10,
    master_seed: int = DEFAULT_SEED,
    dataset_ids: Sequence[str] | None = None,
    defender_params: dict[str, dict] | None = None,
    attacker_params: dict[str, dict] | None = None,
    workers: int | None = None,
) -> tuple[list[dict], list[CellStats]]:
    """Every defender against every attacker on every instance, ``repeats`` seeds each.

    Each (instance, repeat) pair has one seed shared by all defenders and by
    the uniform baseline, so performance differences are paired.
    """
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    dataset_ids = list(dataset_ids or [f"d{i}" for i in range(len(instances))])
    defender_params = defender_params or {}
    attacker_params = attacker_params or {}
    for name in defenders:
        validate_spec(RunSpec(instances[0], defender=name, attacker=attackers[0], T=T))
    for name in attackers:
        validate_spec(RunSpec(instances[0], defender="uniform", attacker=name, T=T))

    def job(i, dname, aname, r):
        return Job(i, dname, aname, r, derive_seed(master_seed, i, r), T,
                   _freeze(defender_params.get(dname)), _freeze(attacker_params.get(aname)))

    jobs = []
    for i in range(len(instances)):
        for aname in attackers:
            for r in range(repeats):
                jobs.append(job(i, "uniform", aname, r))
                jobs.extend(job(i, dname, aname, r) for dname in defenders if dname != "uniform")
    results = run_jobs(instances, jobs, workers)
    by_key = {(j.dataset, j.defender, j.attacker, j.repeat): (j, res) for j, res in zip(jobs, results)}

    rows = []
    for i in range(len(instances)):
        for dname in defenders:
            for aname in attackers:
                for r in range(repeats):
                    j, res = by_key[(i, dname, aname, r)]
                    uni = by_key[(i, "uniform", aname, r)][1]["total_utility"]
                    rows.append({
                        "dataset": dataset_ids[i],
                        "defender": dname,
                        "attacker": aname,
                        "seed": j.seed,
                        "T": T,
                        "total_utility": res["total_utility"],
                        "uniform_utility": uni,
                        "performance": res["total_utility"] - uni,
                        "switches": res["switches"],
                        "wall_time": res["wall_time"],
                    })
    return rows, aggregate(rows)


def aggregate(rows: Sequence[dict]) -> list[CellStats]:
    cells: dict[tuple, list[dict]] = {}
    for row in rows:
        cells.setdefault((row["dataset"], row["defender"], row["attacker"]), []).append(row)
    out = []
    for (ds, dname, aname), group in cells.items():
        mean, se = mean_se([g["performance"] for g in group])
        out.append(CellStats(
            ds, dname, aname, len(group), mean, se,
            float(np.mean([g["total_utility"] for g in group])),
            float(np.mean([g["switches"] for g in group])),
        ))
    return out


def pooled(rows: Sequence[dict], key=("defender", "attacker")) -> dict[tuple, tuple[float, float | None, int]]:
    """Mean and SE of performance pooled across datasets and repeats."""
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in key), []).append(row["performance"])
    return {k: (*mean_se(v), len(v)) for k, v in groups.items()}


SWEEP_GAMMAS = [round(0.001 * i, 3) for i in range(1, 21)]
SWEEP_ETAS = [round(0.01 * i, 2) for i in range(1, 11)]


def sweep(
    instances: Sequence[GameInstance],
    defender: str = "fpl-mtd",
    gammas: Sequence[float] = SWEEP_GAMMAS,
    etas: Sequence[float] = SWEEP_ETAS,
    attacker: str = "best-response",
    T: int = 500,
    repeats: int = 5,
    master_seed: int = DEFAULT_SEED,
    workers: int | None = None,
    attacker_params: dict | None = None,
) -> list[dict]:
    """Average total utility of each (gamma, eta) pair; best pair first."""
    if not gammas or not etas:
        raise ConfigError("sweep grid must be nonempty")
    validate_spec(RunSpec(instances[0], defender=defender, attacker=attacker, T=T))
    jobs = [
        Job(i, defender, attacker, r, derive_seed(master_seed, i, r), T,
            _freeze({"gamma": g, "eta": e}), _freeze(attacker_params))
        for g in gammas for e in etas
        for i in range(len(instances)) for r in range(repeats)
    ]
    results = run_jobs(instances, jobs, workers)
    cells: dict[tuple, list[float]] = {}
    for j, res in zip(jobs, results):
        p = dict(j.defender_params)
        cells.setdefault((p["gamma"], p["eta"]), []).append(res["total_utility"])
    table = []
    for (g, e), vals in cells.items():
        mean, se = mean_se(vals)
        table.append({"gamma": g, "eta": e, "mean_total_utility": mean, "se": se, "n": len(vals)})
    table.sort(key=lambda row: (-row["mean_total_utility"], row["gamma"], row["eta"]))
    for rank, row in enumerate(table, start=1):
        row["rank"] = rank
    return table


def analytic_round_reward(instance: GameInstance, config: int) -> float:
    """Expected per-round defender reward of always deploying ``config`` against
    attackers who pick uniformly from their capability sets."""
    caps = instance.capabilities
    per_type = (instance.defender_reward[:, :, config] * caps).sum(axis=1) / caps.sum(axis=1)
    return float(per_type @ instance.type_distribution)


__all__ = [
    "CellStats", "ConfigError", "Job", "Match", "RunSpec", "RunSummary", "aggregate", "analytic_round_reward",
    "derive_seed", "evaluate", "pooled", "run", "run_jobs", "run_paired", "substream", "sweep",
    "total_utility",
]
