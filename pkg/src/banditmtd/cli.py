"""Command-line entry point: ``banditmtd <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import engine
from .config import ConfigFileError, ExperimentConfig, load_config
from .engine import ConfigError, RunSpec, derive_seed, substream
from .game import StructuralError, load_instance, save_instance, validate_instance

log = logging.getLogger("banditmtd")

FEED_DIR_ENV = "BANDITMTD_NVD_DIR"
RUN_FIELDS = ("dataset", "defender", "attacker", "seed", "T", "total_utility", "uniform_utility",
              "performance", "switches")
# spawn key separating instance-generation seeds from run seeds
_GEN_KEY = 0x6E6


class UsageError(Exception):
    pass


# -- config resolution ------------------------------------------------------

def resolve_config(args) -> ExperimentConfig:
    """Defaults, then the config file, then ``--set`` pairs, then explicit flags."""
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig.defaults()
    for pair in getattr(args, "set", None) or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigFileError(f"--set expects key=value, got {pair!r}")
        cfg.set(key.strip(), value.strip())
    flags = {"seed": "seed", "T": "T", "repeats": "repeats", "workers": "workers", "out_dir": "output_dir"}
    for attr, key in flags.items():
        v = getattr(args, attr, None)
        if v is not None:
            cfg.set(key, v)
    for attr, key in (("defenders", "defenders"), ("attackers", "attackers"), ("instances", "datasets")):
        v = getattr(args, attr, None)
        if v:
            cfg.set(key, tuple(v))
    return cfg


def _pool(cfg: ExperimentConfig):
    path = cfg["generator.pool"]
    if path:
        return ds.read_pool_csv(path)
    log.info("no CVE pool given; using %d synthetic CVSS-shaped records", cfg["generator.pool_size"])
    return ds.synthetic_pool(cfg["generator.pool_size"], substream(cfg["seed"], "synthetic-pool"))


def _generator_params(cfg: ExperimentConfig, seed: int, mode: str | None = None) -> ds.GeneratorParams:
    return ds.GeneratorParams(
        mode=mode or cfg["generator.mode"],
        configs=cfg["generator.configs"],
        attackers=cfg["generator.attackers"],
        vulns=cfg["generator.vulns"],
        exclusion=cfg["generator.exclusion"],
        switching=cfg["generator.switching"],
        seed=seed,
    )


def load_instances(cfg: ExperimentConfig, count: int | None = None, mode: str | None = None):
    """Instances from ``datasets`` files, or freshly generated ones.

    Returns (instances, dataset ids, provenance dict).
    """
    if cfg["datasets"]:
        paths = [Path(p) for p in cfg["datasets"]]
        return [load_instance(p) for p in paths], [p.stem for p in paths], {"files": [str(p) for p in paths]}
    mode = mode or cfg["generator.mode"]
    count = cfg["generator.count"] if count is None else count
    pool = _pool(cfg) if mode == "nvd" else None
    seeds = [derive_seed(cfg["seed"], _GEN_KEY, i) for i in range(count)]
    instances = [ds.generate_instance(_generator_params(cfg, s, mode), pool) for s in seeds]
    ids = [f"{mode}{i}" for i in range(count)]
    return instances, ids, {"generated": {"mode": mode, "instance_seeds": seeds}}


# -- output -----------------------------------------------------------------

def _config_line(cfg: ExperimentConfig) -> str:
    return "# config=" + json.dumps(cfg.to_dict(), sort_keys=True) + "\n"


def write_rows(path: Path, rows, fields, cfg: ExperimentConfig) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(_config_line(cfg))
        w = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _fields(args) -> tuple[str, ...]:
    return RUN_FIELDS + (("wall_time",) if getattr(args, "timing", False) else ())


# -- subcommands ------------------------------------------------------------

def cmd_ingest(args) -> int:
    feeds = args.feeds or os.environ.get(FEED_DIR_ENV)
    if not feeds:
        raise UsageError(f"no feed directory: pass --feeds or set {FEED_DIR_ENV}")
    files = ds.feed_files(feeds)
    if not files:
        print(f"warning: no feed files in {feeds}", file=sys.stderr)
    pool = ds.ingest_feeds(files)
    ds.write_pool_csv(pool, args.out)
    print(f"records={len(pool)} skipped={pool.skipped} files={len(files)} -> {args.out}")
    return 0


def cmd_gen(args) -> int:
    cfg = resolve_config(args)
    for attr, key in (("configs", "generator.configs"), ("attackers_range", "generator.attackers"),
                      ("vulns", "generator.vulns"), ("exclusion", "generator.exclusion"),
                      ("switching", "generator.switching"), ("pool", "generator.pool")):
        v = getattr(args, attr)
        if v is not None:
            cfg.set(key, v)
    cfg.set("generator.mode", args.mode)
    params = _generator_params(cfg, cfg["seed"], args.mode)
    pool = _pool(cfg) if args.mode == "nvd" else None
    inst = ds.generate_instance(params, pool)
    report = validate_instance(inst)
    if not report.ok:
        raise RuntimeError("generated instance failed validation: " + "; ".join(report.violations[:5]))
    save_instance(inst, args.out)
    print(f"configs={inst.num_configs} vulns={inst.num_vulns} types={inst.num_attacker_types} -> {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    if args.instance:
        inst, dataset_id, prov = load_instance(args.instance), Path(args.instance).stem, {"files": [args.instance]}
    else:
        insts, ids, prov = load_instances(cfg, count=1)
        inst, dataset_id = insts[0], ids[0]
    defender = args.defender or cfg["defenders"][0]
    attacker = args.attacker or cfg["attackers"][0]
    spec = RunSpec(
        inst, defender=defender, attacker=attacker, T=cfg["T"], seed=cfg["seed"],
        defender_params=cfg.defender_params().get(defender, {}),
        attacker_params=cfg.attacker_params().get(attacker, {}),
        feedback=engine.FeedbackLevel(cfg["feedback"]) if cfg["feedback"] else None,
        dataset_id=dataset_id, record_series=args.series,
    )
    match = engine.Match(spec)
    started = time.perf_counter()
    match.play(spec.T)
    summary = match.summary(started)
    uni = engine.Match(RunSpec(inst, "uniform", attacker, spec.T, spec.seed,
                               attacker_params=spec.attacker_params)).play(spec.T)
    row = {
        "dataset": dataset_id, "defender": defender, "attacker": attacker, "seed": spec.seed, "T": spec.T,
        "total_utility": summary.total_utility, "uniform_utility": uni.total,
        "performance": summary.total_utility - uni.total, "switches": summary.switches,
        "wall_time": summary.wall_time,
    }
    out = Path(args.out_dir or cfg["output_dir"])
    write_rows(out / "run.csv", [row], _fields(args), cfg)
    doc = {"config": cfg.to_dict(), "datasets": prov, "row": {k: v for k, v in row.items() if k != "wall_time"},
           "cap_hits": summary.cap_hits}
    if args.series:
        doc["cumulative"] = summary.cumulative
    write_json(out / "run.json", doc)
    if args.save_state:
        write_json(Path(args.save_state), match.defender.to_state())
    print(f"{defender} vs {attacker}: total_utility={summary.total_utility:.3f} "
          f"performance={row['performance']:.3f} -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    instances, ids, prov = load_instances(cfg)
    rows, stats = engine.evaluate(
        instances, cfg["defenders"], cfg["attackers"], T=cfg["T"], repeats=cfg["repeats"],
        master_seed=cfg["seed"], dataset_ids=ids, defender_params=cfg.defender_params(),
        attacker_params=cfg.attacker_params(), workers=cfg["workers"],
    )
    out = Path(cfg["output_dir"])
    write_rows(out / "runs.csv", rows, _fields(args), cfg)
    pooled = engine.pooled(rows)
    doc = {
        "config": cfg.to_dict(),
        "datasets": prov,
        "derived_seeds": {ids[i]: [derive_seed(cfg["seed"], i, r) for r in range(cfg["repeats"])]
                          for i in range(len(ids))},
        "cells": [s.__dict__ for s in stats],
        "pooled": [{"defender": d, "attacker": a, "mean_performance": m, "se": se, "n": n}
                   for (d, a), (m, se, n) in pooled.items()],
    }
    write_json(out / "summary.json", doc)
    for (d, a), (m, se, n) in pooled.items():
        se_s = "n/a" if se is None else f"{se:.2f}"
        print(f"{d:>12} vs {a:<16} performance {m:10.2f} (se {se_s}, n={n})")
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    for attr, key in (("gammas", "sweep.gammas"), ("etas", "sweep.etas")):
        v = getattr(args, attr)
        if v:
            cfg.set(key, tuple(v))
    if args.sweep_T is not None:
        cfg.set("sweep.T", args.sweep_T)
    if args.sweep_repeats is not None:
        cfg.set("sweep.repeats", args.sweep_repeats)
    instances, ids, prov = load_instances(cfg, count=cfg["sweep.instances"], mode=cfg["sweep.mode"])
    attacker = cfg["sweep.attacker"]
    table = engine.sweep(
        instances, defender=cfg["sweep.defender"], gammas=cfg["sweep.gammas"], etas=cfg["sweep.etas"],
        attacker=attacker, T=cfg["sweep.T"], repeats=cfg["sweep.repeats"], master_seed=cfg["seed"],
        workers=cfg["workers"], attacker_params=cfg.attacker_params().get(attacker),
    )
    out = Path(cfg["output_dir"])
    write_rows(out / "sweep.csv", table, ("rank", "gamma", "eta", "mean_total_utility", "se", "n"), cfg)
    write_json(out / "sweep.json", {"config": cfg.to_dict(), "datasets": prov, "table": table})
    best = table[0]
    print(f"best gamma={best['gamma']} eta={best['eta']} mean_total_utility={best['mean_total_utility']:.3f} "
          f"({len(table)} cells) -> {out}")
    return 0


def _load_estimates(path) -> tuple[np.ndarray, np.ndarray | None]:
    """(V, types) estimates from a bare JSON array or a saved fpl-maxmin
    state; the state's type distribution comes along when present."""
    doc = json.loads(Path(path).read_text())
    types = None
    if isinstance(doc, dict):
        if doc.get("name") not in (None, "fpl-maxmin"):
            raise ValueError(f"{path}: state of {doc['name']!r} has no per-vulnerability estimates")
        types = doc.get("type_distribution")
        doc = doc.get("estimates")
    est = np.asarray(doc, dtype=float)
    if est.ndim == 1:
        est = est[:, None]
    return est, None if types is None else np.asarray(types, dtype=float)


def cmd_fix(args) -> int:
    from . import vulnselect as vs

    cfg = resolve_config(args)
    if args.budget is not None:
        cfg.set("fix.budget", args.budget)
    inst = load_instance(args.instance)
    if args.prices == "unit":
        prices = np.ones(inst.num_vulns)
    else:
        prices = np.asarray(json.loads(Path(args.prices).read_text()), dtype=float)
    out = Path(args.out)

    if args.experiment:
        stats = vs.improvement_experiment(
            inst, cfg["fix.budget"], T1=cfg["fix.T1"], T2=cfg["fix.T2"], repeats=cfg["fix.repeats"],
            attacker=cfg["fix.attacker"], prices=prices, master_seed=cfg["seed"],
            defender_params=cfg.defender_params()["fpl-maxmin"],
            attacker_params=cfg.attacker_params().get(cfg["fix.attacker"]),
            attacker_side=cfg["fix.attacker_side"],
        )
        doc = {"config": cfg.to_dict(), **stats.to_dict()}
        write_json(out, doc)
        print(f"greedy improvement {doc['greedy_mean_improvement']:.3f}, "
              f"random improvement {doc['random_mean_improvement']:.3f} -> {out}")
        return 0

    if not args.estimates:
        raise UsageError("fix-vulns needs --estimates (or --experiment)")
    est, types = _load_estimates(args.estimates)
    if types is None:
        # a single column is read as one pooled attacker type
        types = np.ones(1) if est.shape[1] == 1 else inst.type_distribution
    problem = vs.PatchProblem(est, prices, cfg["fix.budget"], inst.vuln_mask, types)
    rng = substream(cfg["seed"], "random-fix")
    fs = vs.select_fixes(problem, args.method, rng)
    write_json(out, {"config": cfg.to_dict(), **fs.to_dict()})
    print(f"{fs.method}: fix {list(fs.vulns)} price={fs.total_price:g} objective={fs.objective:.4f} -> {out}")
    return 0


def cmd_report(args) -> int:
    rows = read_rows(args.runs)
    for r in rows:
        r["performance"] = float(r["performance"])
        r["total_utility"] = float(r["total_utility"])
    pooled = engine.pooled(rows)
    attackers = sorted({a for _, a in pooled})
    defenders = list(dict.fromkeys(r["defender"] for r in rows))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attacker", "defender", "mean_performance", "se", "n"])
        for a in attackers:
            for d in defenders:
                if (d, a) in pooled:
                    m, se, n = pooled[(d, a)]
                    w.writerow([a, d, repr(m), "" if se is None else repr(se), n])
    print(f"{len(attackers)} attacker groups x {len(defenders)} defenders -> {out}")
    return 0


# -- parser -----------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config file (key = value)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int, help="master seed")


def _batch(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=int, help="worker processes (default: available CPUs)")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--instances", nargs="+", help="instance JSON files (default: generate)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="banditmtd", description="Moving target defense simulation workbench.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse NVD feeds into a normalized CVE pool CSV")
    p.add_argument("--feeds", help=f"feed directory (default: ${FEED_DIR_ENV})")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen", help="generate a game instance")
    _common(p)
    p.add_argument("--mode", required=True, choices=ds.MODES)
    p.add_argument("--out", required=True)
    p.add_argument("--pool", help="CVE pool CSV (nvd mode; default: synthetic pool)")
    p.add_argument("--configs", help="range lo-hi")
    p.add_argument("--attackers", dest="attackers_range", help="range lo-hi")
    p.add_argument("--vulns", help="range lo-hi")
    p.add_argument("--exclusion")
    p.add_argument("--switching", help="uniform | zero | constant:x")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="play one defender against one attacker")
    _common(p)
    p.add_argument("--instance", help="instance JSON (default: generate one)")
    p.add_argument("--defender")
    p.add_argument("--attacker")
    p.add_argument("--T", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--series", action="store_true", help="store the cumulative utility series")
    p.add_argument("--save-state", help="write the defender's final state to this JSON file")
    p.add_argument("--timing", action="store_true", help="add wall_time to the CSV (breaks bit-identity)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="every defender against every attacker, repeated")
    _common(p)
    _batch(p)
    p.add_argument("--defenders", nargs="+")
    p.add_argument("--attackers", nargs="+")
    p.add_argument("--T", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--timing", action="store_true", help="add wall_time to the CSV (breaks bit-identity)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid search over FPL gamma and eta")
    _common(p)
    _batch(p)
    p.add_argument("--gammas", nargs="+", type=float)
    p.add_argument("--etas", nargs="+", type=float)
    p.add_argument("--T", dest="sweep_T", type=int)
    p.add_argument("--repeats", dest="sweep_repeats", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fix-vulns", help="choose vulnerabilities to patch under a budget")
    _common(p)
    p.add_argument("--instance", required=True, help="instance JSON (vulnerability sets, type distribution)")
    p.add_argument("--estimates", help="JSON (V x types) estimates or a saved fpl-maxmin state")
    p.add_argument("--prices", default="unit", help="JSON price list or 'unit'")
    p.add_argument("--budget", type=float)
    p.add_argument("--method", default="greedy", choices=("greedy", "greedy-one", "random", "brute"))
    p.add_argument("--experiment", action="store_true", help="run the train, patch and continue experiment")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fix)

    p = sub.add_parser("report", help="performance per defender per attacker from a runs CSV")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ConfigFileError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, StructuralError, KeyError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
