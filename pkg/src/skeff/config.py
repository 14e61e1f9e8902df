"""
Experiment configuration: an INI file read with :mod:`configparser`.

Numeric entries accept plain arithmetic such as ``sqrt(2)/100`` or ``pi + 0.2``;
lists are comma separated.  ``serialize`` writes every number back as a
literal, so ``parse -> serialize -> parse`` is a fixed point.
"""
from __future__ import annotations

import ast
import configparser
import math
import operator
from dataclasses import dataclass, replace
from importlib import resources
from typing import Optional

import numpy as np

from .errors import ConfigError

__all__ = [
    "SeedSpec",
    "ExperimentConfig",
    "safe_eval",
    "parse_config",
    "load_config",
    "serialize_config",
    "default_config_path",
    "METHODS",
]

METHODS = ("froot", "koopman", "bch-low", "bch-high1", "bch-high2", "bch-high3")
FLOW_KINDS = ("standard", "identity")
CONVENTIONS = ("whole-period", "offset")

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_NAMES = {"pi": math.pi, "tau": math.tau, "e": math.e}
_FUNCS = {"sqrt": math.sqrt, "sin": math.sin, "cos": math.cos, "exp": math.exp, "log": math.log}


def safe_eval(text: str):
    """Evaluate an arithmetic expression over numbers, ``pi``, ``tau``, ``e`` and a few functions."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse number {text!r}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float, complex)) \
                and not isinstance(node.value, bool):
            return node.value
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords:
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ConfigError(f"unsupported expression in {text!r}")

    try:
        return ev(tree)
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise ConfigError(f"cannot evaluate {text!r}: {exc}") from exc


def _real(text, what):
    v = safe_eval(text)
    if isinstance(v, complex):
        raise ConfigError(f"{what} must be real, got {text!r}")
    return float(v)


def _int(text, what):
    v = _real(text, what)
    if v != int(v):
        raise ConfigError(f"{what} must be an integer, got {text!r}")
    return int(v)


def _list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _bool(text, what):
    t = text.strip().lower()
    if t in ("yes", "true", "on", "1"):
        return True
    if t in ("no", "false", "off", "0"):
        return False
    raise ConfigError(f"{what} must be yes/no, got {text!r}")


def _num(x) -> str:
    if isinstance(x, complex):
        if x.imag == 0:
            return repr(float(x.real))
        return repr(complex(x)).strip("()")
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


@dataclass(frozen=True)
class SeedSpec:
    """A named initial phase point with its phase-space region label."""

    name: str
    theta1: float
    theta2: float
    region: str = ""
    chaotic: bool = False
    epsilon: Optional[float] = None
    components: int = 1

    @property
    def theta(self) -> tuple:
        return (self.theta1, self.theta2)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a CLI run needs; see ``paper.cfg`` for the annotated defaults."""

    seeds: tuple
    flow_kind: str = "standard"
    K: float = 2.0
    model: str = "spin-kick"
    lam: float = 0.1
    dim: int = 2
    ratios: tuple = ()
    periods: tuple = (12, 120)
    survival_periods: tuple = (120,)
    initial_state: tuple = (1 / math.sqrt(2), 1 / math.sqrt(2))
    method: str = "froot"
    state_index: int = 0
    epsilon: float = 1e-2
    chaotic_epsilon: float = 1e-1
    convention: str = "whole-period"
    n_max: int = 10**6
    n_lyap: int = 10**5
    dense_limit: int = 4096
    portrait_points: int = 2000
    overlay_seed: str = ""
    overlay_ratio: float = 3.5
    overlay_steps: int = 400
    ensemble_seeds: tuple = ()
    ensemble_ratio: float = 3.5
    ensemble_periods: int = 2
    ensemble_state_index: int = 0
    output_dir: str = "results"
    formats: tuple = ("csv",)
    jobs: int = 1

    def __post_init__(self):
        if self.flow_kind not in FLOW_KINDS:
            raise ConfigError(f"flow kind must be one of {FLOW_KINDS}")
        if self.model != "spin-kick":
            raise ConfigError("only the spin-kick model is available")
        if self.dim != 2:
            raise ConfigError("the spin-kick model has dimension 2")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.convention not in CONVENTIONS:
            raise ConfigError(f"convention must be one of {CONVENTIONS}")
        if not self.seeds:
            raise ConfigError("no seeds configured")
        names = [s.name for s in self.seeds]
        if len(set(names)) != len(names):
            raise ConfigError("seed names must be unique")
        if not self.ratios or not self.periods or not self.survival_periods:
            raise ConfigError("ratios and horizons must not be empty")
        if any(r <= 0 for r in self.ratios) or self.overlay_ratio <= 0 or self.ensemble_ratio <= 0:
            raise ConfigError("ratios must be positive")
        if self.epsilon <= 0 or self.chaotic_epsilon <= 0 or \
                any(s.epsilon is not None and s.epsilon <= 0 for s in self.seeds):
            raise ConfigError("epsilon must be positive")
        if any(n < 1 for n in self.periods + self.survival_periods) or self.ensemble_periods < 1:
            raise ConfigError("horizons must be at least 1")
        if any(s.components < 1 for s in self.seeds):
            raise ConfigError("components must be at least 1")
        if len(self.initial_state) != self.dim:
            raise ConfigError("initial_state has the wrong dimension")
        if abs(np.linalg.norm(np.asarray(self.initial_state, dtype=complex)) - 1) > 1e-10:
            raise ConfigError("initial_state must be normalised")
        if not 0 <= self.state_index < self.dim or not 0 <= self.ensemble_state_index < self.dim:
            raise ConfigError("state index out of range")
        for n in (self.overlay_seed,) + tuple(self.ensemble_seeds):
            if n and n not in names:
                raise ConfigError(f"unknown seed {n!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")

    def seed(self, name: str) -> SeedSpec:
        for s in self.seeds:
            if s.name == name:
                return s
        raise ConfigError(f"unknown seed {name!r}")

    def epsilon_for(self, seed: SeedSpec) -> float:
        if seed.epsilon is not None:
            return seed.epsilon
        return self.chaotic_epsilon if seed.chaotic else self.epsilon

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Copy with selected fields replaced; ``None`` values are ignored."""
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_SCALARS = {
    # (section, key): (field, kind)
    ("flow", "kind"): ("flow_kind", "str"),
    ("flow", "K"): ("K", "real"),
    ("system", "model"): ("model", "str"),
    ("system", "lambda"): ("lam", "real"),
    ("system", "dim"): ("dim", "int"),
    ("run", "ratios"): ("ratios", "reals"),
    ("run", "periods"): ("periods", "ints"),
    ("run", "survival_periods"): ("survival_periods", "ints"),
    ("run", "initial_state"): ("initial_state", "complexes"),
    ("run", "method"): ("method", "str"),
    ("run", "state_index"): ("state_index", "int"),
    ("run", "epsilon"): ("epsilon", "real"),
    ("run", "chaotic_epsilon"): ("chaotic_epsilon", "real"),
    ("run", "convention"): ("convention", "str"),
    ("run", "n_max"): ("n_max", "int"),
    ("run", "n_lyap"): ("n_lyap", "int"),
    ("run", "dense_limit"): ("dense_limit", "int"),
    ("run", "jobs"): ("jobs", "int"),
    ("portrait", "points"): ("portrait_points", "int"),
    ("overlay", "seed"): ("overlay_seed", "str"),
    ("overlay", "ratio"): ("overlay_ratio", "real"),
    ("overlay", "steps"): ("overlay_steps", "int"),
    ("ensemble", "seeds"): ("ensemble_seeds", "strs"),
    ("ensemble", "ratio"): ("ensemble_ratio", "real"),
    ("ensemble", "periods"): ("ensemble_periods", "int"),
    ("ensemble", "state_index"): ("ensemble_state_index", "int"),
    ("output", "dir"): ("output_dir", "str"),
    ("output", "formats"): ("formats", "strs"),
}


def _convert(text, kind, what):
    if kind == "str":
        return text.strip()
    if kind == "real":
        return _real(text, what)
    if kind == "int":
        return _int(text, what)
    if kind == "reals":
        return tuple(_real(t, what) for t in _list(text))
    if kind == "ints":
        return tuple(_int(t, what) for t in _list(text))
    if kind == "complexes":
        return tuple(complex(safe_eval(t)) for t in _list(text))
    if kind == "strs":
        return tuple(_list(text))
    raise AssertionError(kind)


def _render(value, kind) -> str:
    if kind == "str":
        return value
    if kind in ("real", "int"):
        return _num(value)
    if kind in ("reals", "ints", "complexes"):
        return ", ".join(_num(v) for v in value)
    return ", ".join(value)


def parse_config(text: str) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from INI text."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    kw = {}
    known = {s for s, _ in _SCALARS}
    for sec in cp.sections():
        if sec.startswith("seed:"):
            continue
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if (sec, key) not in _SCALARS:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            name, kind = _SCALARS[(sec, key)]
            kw[name] = _convert(raw, kind, f"[{sec}] {key}")
    seeds = []
    for sec in cp.sections():
        if not sec.startswith("seed:"):
            continue
        s = dict(cp.items(sec))
        extra = set(s) - {"theta1", "theta2", "region", "chaotic", "epsilon", "components"}
        if extra:
            raise ConfigError(f"unknown keys {sorted(extra)} in [{sec}]")
        try:
            seeds.append(SeedSpec(
                name=sec[5:].strip(),
                theta1=_real(s["theta1"], f"[{sec}] theta1"),
                theta2=_real(s["theta2"], f"[{sec}] theta2"),
                region=s.get("region", "").strip(),
                chaotic=_bool(s.get("chaotic", "no"), f"[{sec}] chaotic"),
                epsilon=_real(s["epsilon"], f"[{sec}] epsilon") if "epsilon" in s else None,
                components=_int(s.get("components", "1"), f"[{sec}] components"),
            ))
        except KeyError as exc:
            raise ConfigError(f"[{sec}] is missing {exc.args[0]}") from None
    kw["seeds"] = tuple(seeds)
    kw.setdefault("ratios", ())
    try:
        return ExperimentConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def serialize_config(cfg: ExperimentConfig) -> str:
    """INI text that parses back to ``cfg``."""
    sections: dict = {}
    for (sec, key), (name, kind) in _SCALARS.items():
        sections.setdefault(sec, []).append((key, _render(getattr(cfg, name), kind)))
    lines = []
    for sec, items in sections.items():
        lines.append(f"[{sec}]")
        lines += [f"{k} = {v}" for k, v in items]
        lines.append("")
    for s in cfg.seeds:
        lines.append(f"[seed:{s.name}]")
        lines.append(f"theta1 = {_num(s.theta1)}")
        lines.append(f"theta2 = {_num(s.theta2)}")
        lines.append(f"region = {s.region}")
        lines.append(f"chaotic = {'yes' if s.chaotic else 'no'}")
        if s.epsilon is not None:
            lines.append(f"epsilon = {_num(s.epsilon)}")
        lines.append(f"components = {s.components}")
        lines.append("")
    return "\n".join(lines)


def default_config_path():
    """Path of the shipped default experiment."""
    return resources.files("skeff").joinpath("paper.cfg")


def load_config(path=None) -> ExperimentConfig:
    """Read a configuration file (the shipped default when ``path`` is None)."""
    try:
        if path is None:
            text = default_config_path().read_text()
        else:
            with open(path) as fh:
                text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text)
