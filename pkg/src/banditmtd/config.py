"""Experiment configuration: a flat ``key = value`` file with dotted sections.

Example::

    seed = 2022
    T = 1000
    defenders = fpl-mtd, fpl-gr, robust-rl
    defender.fpl_mtd.gamma = 0.007
    generator.configs = 10-20

Blank lines and ``#`` comments are ignored. Unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Callable

from .engine import DEFAULT_SEED, SWEEP_ETAS, SWEEP_GAMMAS


class ConfigFileError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _names(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in _names(s))


def _range(s: str) -> tuple[int, int]:
    lo, sep, hi = s.partition("-")
    lo, hi = int(lo), int(hi) if sep else int(lo)
    return lo, hi


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _opt_int(s: str) -> int | None:
    return None if s.strip().lower() in ("", "none", "auto", "0") else int(s)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "auto"
    if isinstance(v, tuple) and len(v) == 2 and all(isinstance(x, int) for x in v):
        return f"{v[0]}-{v[1]}"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v)


# key -> (default, parser). Parsers take the raw string.
SCHEMA: dict[str, tuple[Any, Callable[[str], Any]]] = {
    "seed": (DEFAULT_SEED, int),
    "T": (1000, int),
    "repeats": (10, int),
    "workers": (None, _opt_int),
    "output_dir": ("results", str),
    "datasets": ((), _names),
    "defenders": (("fpl-mtd", "fpl-maxmin", "fpl-gr", "s-exp3", "robust-rl", "biased-aslr"), _names),
    "attackers": (("best-response",), _names),
    "feedback": (None, lambda s: None if s.strip().lower() in ("", "auto") else s.strip().lower()),

    "defender.fpl_mtd.gamma": (0.007, float),
    "defender.fpl_mtd.eta": (0.1, float),
    "defender.fpl_mtd.gr_cap": (None, _opt_int),
    "defender.fpl_gr.gamma": (0.007, float),
    "defender.fpl_gr.eta": (0.1, float),
    "defender.fpl_gr.gr_cap": (None, _opt_int),
    "defender.fpl_maxmin.gamma": (0.006, float),
    "defender.fpl_maxmin.eta": (0.03, float),
    "defender.fpl_maxmin.single_type": (False, _bool),
    "defender.robust_rl.alpha": (0.2, float),
    "defender.robust_rl.discount": (0.8, float),
    "defender.robust_rl.epsilon": (0.1, float),
    "defender.s_exp3.batch": (None, _opt_int),
    "defender.s_exp3.lr": (None, _opt_float),
    "defender.s_exp3.mix": (0.0, float),

    "attacker.fpl_ue.gamma": (0.01, float),
    "attacker.fpl_ue.eta": (0.1, float),
    "attacker.qr.lam": (5.0, float),

    "generator.mode": ("nvd", str),
    "generator.count": (10, int),
    "generator.configs": ((10, 20), _range),
    "generator.attackers": ((3, 6), _range),
    "generator.vulns": ((500, 800), _range),
    "generator.exclusion": (None, _opt_float),
    "generator.switching": ("uniform", str),
    "generator.pool": ("", str),
    "generator.pool_size": (5000, int),

    "sweep.defender": ("fpl-mtd", str),
    "sweep.attacker": ("best-response", str),
    "sweep.gammas": (tuple(SWEEP_GAMMAS), _floats),
    "sweep.etas": (tuple(SWEEP_ETAS), _floats),
    "sweep.T": (500, int),
    "sweep.repeats": (5, int),
    "sweep.instances": (5, int),
    "sweep.mode": ("zero", str),

    "fix.budget": (5.0, float),
    "fix.T1": (1000, int),
    "fix.T2": (1000, int),
    "fix.repeats": (50, int),
    "fix.attacker": ("best-response", str),
    "fix.attacker_side": (False, _bool),
}

# Which parameter blocks belong to which strategy name.
DEFENDER_BLOCKS = {"fpl-mtd": "fpl_mtd", "fpl-gr": "fpl_gr", "fpl-maxmin": "fpl_maxmin",
                   "robust-rl": "robust_rl", "s-exp3": "s_exp3"}
ATTACKER_BLOCKS = {"fpl-ue": "fpl_ue", "qr": "qr"}


@dataclasses.dataclass
class ExperimentConfig:
    values: dict[str, Any]

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        return cls({k: d for k, (d, _) in SCHEMA.items()})

    def __getitem__(self, key: str):
        return self.values[key]

    def set(self, key: str, raw) -> None:
        """Set ``key`` from a string (as in a file) or an already-typed value."""
        if key not in SCHEMA:
            raise ConfigFileError(f"unknown config key {key!r}")
        if isinstance(raw, str):
            try:
                raw = SCHEMA[key][1](raw)
            except ValueError as exc:
                raise ConfigFileError(f"bad value for {key}: {exc}") from None
        self.values[key] = raw

    def _block(self, prefix: str) -> dict:
        out = {}
        for k, v in self.values.items():
            if k.startswith(prefix + "."):
                name = k[len(prefix) + 1:]
                if v is not None:
                    out[name] = v
        return out

    def defender_params(self) -> dict[str, dict]:
        return {name: self._block(f"defender.{blk}") for name, blk in DEFENDER_BLOCKS.items()}

    def attacker_params(self) -> dict[str, dict]:
        return {name: self._block(f"attacker.{blk}") for name, blk in ATTACKER_BLOCKS.items()}

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.values.items()}

    def dumps(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.values.items())


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig.defaults()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigFileError(f"line {lineno}: expected 'key = value'")
        try:
            cfg.set(key.strip(), value.strip())
        except ConfigFileError as exc:
            raise ConfigFileError(f"line {lineno}: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
