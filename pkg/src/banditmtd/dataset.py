"""NVD feed ingestion and game-instance generators."""

from __future__ import annotations

import csv
import gzip
import json
import logging
import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import truncnorm

from .game import GameInstance

log = logging.getLogger(__name__)

POOL_FIELDS = ("cve_id", "year", "base_score", "impact_score")
MODES = ("nvd", "general", "zero")
DEFAULT_EXCLUSION = {"nvd": 0.01, "general": 0.05, "zero": 0.05}


class FeedParseError(ValueError):
    pass


class UnsupportedSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class CveRecord:
    cve_id: str
    base_score: float
    impact_score: float
    year: int | None = None

    def __post_init__(self):
        if not self.cve_id:
            raise ValueError("empty CVE id")
        for name in ("base_score", "impact_score"):
            v = getattr(self, name)
            if not 0 <= v <= 10:
                raise ValueError(f"{self.cve_id}: {name} {v} outside [0, 10]")


class ParsedFeed(list):
    """List of CveRecord; ``skipped`` counts entries without usable CVSS metrics."""

    def __init__(self, records=(), skipped: int = 0):
        super().__init__(records)
        self.skipped = skipped


_YEAR = re.compile(r"^CVE-(\d{4})-")


def _year(cve_id: str) -> int | None:
    m = _YEAR.match(cve_id)
    return int(m.group(1)) if m else None


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _scores_v11(item: dict) -> tuple[float, float] | None:
    impact = item.get("impact") or {}
    v3 = impact.get("baseMetricV3")
    if v3 and "cvssV3" in v3 and "impactScore" in v3:
        return float(v3["cvssV3"]["baseScore"]), float(v3["impactScore"])
    v2 = impact.get("baseMetricV2")
    if v2 and "cvssV2" in v2 and "impactScore" in v2:
        return float(v2["cvssV2"]["baseScore"]), float(v2["impactScore"])
    return None


def _scores_v20(cve: dict) -> tuple[float, float] | None:
    metrics = cve.get("metrics") or {}
    for key in ("cvssMetricV31", "cvssMetricV30", "cvssMetricV2"):
        entries = metrics.get(key) or []
        for m in entries:
            if "cvssData" in m and "impactScore" in m:
                return float(m["cvssData"]["baseScore"]), float(m["impactScore"])
    return None


def parse_nvd_feed(path) -> ParsedFeed:
    """Read an NVD JSON feed (1.1 yearly feeds or 2.0 API dumps, optionally
    gzipped) or a normalized pool CSV. Output keeps feed order.

    CVSS v3 scores are used when present, v2 otherwise; entries with neither
    are skipped and counted.
    """
    path = Path(path)
    if path.suffix == ".csv":
        return ParsedFeed(read_pool_csv(path))
    raw = _read_bytes(path)
    text = raw.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise FeedParseError(f"{path}: malformed JSON at byte {offset}: {exc.msg}") from None

    out = ParsedFeed()
    if isinstance(doc, dict) and "CVE_Items" in doc:
        version = str(doc.get("CVE_data_version", ""))
        if version != "4.0":
            raise UnsupportedSchemaError(f"{path}: unsupported CVE_data_version {version!r}")
        for item in doc["CVE_Items"]:
            cve_id = item.get("cve", {}).get("CVE_data_meta", {}).get("ID", "")
            scores = _scores_v11(item)
            if not cve_id or scores is None:
                out.skipped += 1
                continue
            out.append(CveRecord(cve_id, scores[0], scores[1], _year(cve_id)))
    elif isinstance(doc, dict) and "vulnerabilities" in doc:
        version = str(doc.get("version", ""))
        if not version.startswith("2."):
            raise UnsupportedSchemaError(f"{path}: unsupported NVD API version {version!r}")
        for item in doc["vulnerabilities"]:
            cve = item.get("cve", {})
            cve_id = cve.get("id", "")
            scores = _scores_v20(cve)
            if not cve_id or scores is None:
                out.skipped += 1
                continue
            out.append(CveRecord(cve_id, scores[0], scores[1], _year(cve_id)))
    else:
        raise UnsupportedSchemaError(f"{path}: not a recognised NVD feed")
    return out


def ingest_feeds(paths: Iterable) -> ParsedFeed:
    """Parse several feeds into one pool, keeping the first record per CVE id."""
    pool = ParsedFeed()
    seen = set()
    for p in paths:
        feed = parse_nvd_feed(p)
        pool.skipped += feed.skipped
        for rec in feed:
            if rec.cve_id not in seen:
                seen.add(rec.cve_id)
                pool.append(rec)
    return pool


def feed_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"feed directory {d} does not exist")
    pats = ("*.json", "*.json.gz", "*.csv")
    return sorted({p for pat in pats for p in d.glob(pat)})


def write_pool_csv(records: Sequence[CveRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POOL_FIELDS)
        for r in records:
            w.writerow([r.cve_id, "" if r.year is None else r.year, repr(r.base_score), repr(r.impact_score)])


def read_pool_csv(path) -> list[CveRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        CveRecord(r["cve_id"], float(r["base_score"]), float(r["impact_score"]),
                  int(r["year"]) if r.get("year") else None)
        for r in rows
    ]


def synthetic_pool(size: int, rng: np.random.Generator) -> list[CveRecord]:
    """CVSS-v3-shaped stand-in records (ids ``SYN-*``) for when no NVD feeds
    are available: impact in [0, 6], exploitability in [0.1, 3.9], base score
    = ceil1(min(impact + exploitability, 10)) and 0 when impact is 0."""
    impact = np.round(rng.uniform(0.0, 6.0, size), 1)
    exploit = np.round(rng.uniform(0.1, 3.9, size), 1)
    base = np.where(impact > 0, np.ceil(np.minimum(impact + exploit, 10.0) * 10 - 1e-9) / 10, 0.0)
    return [CveRecord(f"SYN-{i:06d}", float(b), float(s)) for i, (b, s) in enumerate(zip(base, impact))]


# -- generators ------------------------------------------------------------

@dataclass
class GeneratorParams:
    mode: str = "nvd"
    configs: tuple[int, int] = (10, 20)
    attackers: tuple[int, int] = (3, 6)
    vulns: tuple[int, int] = (500, 800)
    exclusion: float | None = None
    skill_mean: float = 0.5
    skill_sd: float = 0.25
    capability_sd: float = 0.1  # as a fraction of the vulnerability count
    switching: str = "uniform"
    seed: int = 2022

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("configs", "attackers", "vulns"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} range must satisfy 1 <= lo <= hi, got {(lo, hi)}")
            setattr(self, name, (int(lo), int(hi)))
        if self.exclusion is None:
            self.exclusion = DEFAULT_EXCLUSION[self.mode]
        if not 0 <= self.exclusion < 1:
            raise ValueError("exclusion probability must be in [0, 1)")


def _truncnorm(rng, mean, sd, lo, hi, size=None):
    if sd <= 0:
        return np.clip(np.full(size, mean, dtype=float) if size else mean, lo, hi)
    a, b = (lo - mean) / sd, (hi - mean) / sd
    return truncnorm.rvs(a, b, loc=mean, scale=sd, size=size, random_state=rng)


def _structure(params: GeneratorParams, num_vulns: int, rng: np.random.Generator):
    """Configuration vulnerability sets and attacker capability sets."""
    C = int(rng.integers(params.configs[0], params.configs[1] + 1))
    tau = int(rng.integers(params.attackers[0], params.attackers[1] + 1))
    V = num_vulns

    skills = np.atleast_1d(_truncnorm(rng, params.skill_mean, params.skill_sd, 0.0, 1.0, size=tau))
    caps = []
    for s in skills:
        count = _truncnorm(rng, s * V, params.capability_sd * V, 1.0, float(V))
        count = int(min(max(round(float(count)), 1), V))
        caps.append(np.sort(rng.choice(V, size=count, replace=False)))

    mask = rng.random((C, V)) >= params.exclusion
    for c in range(C):
        while not mask[c].any():
            mask[c] = rng.random(V) >= params.exclusion
    return mask, caps, skills


def switching_cost_gen(n: int, rng: np.random.Generator, mode: str = "uniform") -> np.ndarray:
    """``uniform``: symmetric, off-diagonal U[0,1]; ``constant:x``; ``zero``."""
    if n < 1:
        raise ValueError("need at least one configuration")
    if mode == "zero":
        return np.zeros((n, n))
    if mode.startswith("constant"):
        x = float(mode.split(":", 1)[1]) if ":" in mode else float(mode[len("constant"):].strip("()"))
        if not 0 <= x <= 1:
            raise ValueError(f"constant switching cost {x} outside [0, 1]")
        s = np.full((n, n), x)
    elif mode == "uniform":
        upper = np.triu(rng.random((n, n)), k=1)
        s = upper + upper.T
    else:
        raise ValueError(f"unknown switching cost mode {mode!r}")
    np.fill_diagonal(s, 0.0)
    return s


def _assemble(params, mask, caps, d_scalar, a_scalar, rng, meta) -> GameInstance:
    C = mask.shape[0]
    tau = len(caps)
    s = switching_cost_gen(C, rng, params.switching)
    return GameInstance.from_vuln_rewards(
        vuln_sets=[np.flatnonzero(row) for row in mask],
        capabilities=caps,
        type_distribution=np.full(tau, 1.0 / tau),
        vuln_defender_reward=d_scalar,
        vuln_attacker_reward=a_scalar,
        switching_cost=s,
        initial_config=0,
        num_vulns=mask.shape[1],
        meta=meta,
    )


def _meta(params: GeneratorParams, **more) -> dict:
    m = {"generator": params.mode, "params": asdict(params), "switching_mode": params.switching}
    m.update(more)
    return m


def generate_nvd_instance(pool: Sequence[CveRecord], params: GeneratorParams, rng: np.random.Generator) -> GameInstance:
    """Instance whose rewards come from sampled CVE scores: defender -IS/10,
    attacker BS/10 when the exploit succeeds."""
    V = int(rng.integers(params.vulns[0], params.vulns[1] + 1))
    if len(pool) < V:
        raise ValueError(f"pool has {len(pool)} records, need at least {V}")
    picked = rng.choice(len(pool), size=V, replace=False)
    impact = np.array([pool[i].impact_score for i in picked])
    base = np.array([pool[i].base_score for i in picked])
    mask, caps, skills = _structure(params, V, rng)
    meta = _meta(params, cve_ids=[pool[i].cve_id for i in picked], skills=skills.tolist())
    return _assemble(params, mask, caps, np.clip(-impact / 10.0, -1, 0), np.clip(base / 10.0, 0, 1), rng, meta)


def generate_synthetic_instance(params: GeneratorParams, rng: np.random.Generator) -> GameInstance:
    """Uniform rewards per vulnerability; zero-sum mode mirrors the defender's."""
    V = int(rng.integers(params.vulns[0], params.vulns[1] + 1))
    mask, caps, skills = _structure(params, V, rng)
    d_scalar = -rng.uniform(0.0, 1.0, V)
    a_scalar = -d_scalar if params.mode == "zero" else rng.uniform(0.0, 1.0, V)
    meta = _meta(params, skills=skills.tolist())
    return _assemble(params, mask, caps, d_scalar, a_scalar, rng, meta)


def generate_instance(params: GeneratorParams, pool: Sequence[CveRecord] | None = None) -> GameInstance:
    rng = np.random.default_rng(params.seed)
    if params.mode == "nvd":
        if pool is None:
            raise ValueError("nvd mode needs a vulnerability pool")
        return generate_nvd_instance(pool, params, rng)
    return generate_synthetic_instance(params, rng)


def exclusion_rate(instance: GameInstance) -> float:
    return 1.0 - float(instance.vuln_mask.mean())


def binomial_band(p: float, n: int, k: float = 3.0) -> float:
    return k * math.sqrt(p * (1 - p) / n)
