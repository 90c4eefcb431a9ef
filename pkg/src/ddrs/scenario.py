"""Scenario files: YAML mappings validated into typed experiment configs.

A scenario names one experiment kind and carries its parameter block::

    name: fig5
    kind: sweep
    seed: 0
    output_dir: results/fig5
    params:
      deposit: 20
      step: 0.25
      curves:
        - {name: consumers, p0: 0.05, x90: 15}

Unknown keys are rejected with their dotted path; missing keys take the
defaults of the owning config class.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .aimd import AimdConfig
from .behavior import TABLE1, BehaviorCurve
from .binsim import WeekConfig
from .exceptions import ConfigError, DomainError, ScenarioParseError
from .simulation import DdrsConfig

KINDS = ("bins", "solve", "sweep", "aimd", "ddrs")


def _table1():
    return [BehaviorCurve(c.p0, c.x90, c.name) for c in TABLE1]


@dataclass
class SolveParams:
    curves: list = field(default_factory=_table1)
    deposit: float = 20.0
    tol: float = 1e-6

    def __post_init__(self):
        if not self.deposit >= 0:
            raise ConfigError("must be >= 0", "deposit")
        if not self.tol > 0:
            raise ConfigError("must be > 0", "tol")


@dataclass
class SweepParams:
    curves: list = field(default_factory=_table1)
    deposit: float = 20.0
    step: float = 0.25

    def __post_init__(self):
        if len(self.curves) != 3:
            raise ConfigError("the surface sweep needs exactly 3 curves", "curves")
        if not self.deposit > 0:
            raise ConfigError("must be > 0", "deposit")
        if not self.step > 0:
            raise ConfigError("must be > 0", "step")


@dataclass
class AimdParams:
    curves: list = field(default_factory=_table1)
    aimd: AimdConfig = field(default_factory=lambda: AimdConfig(record_every=100))


@dataclass
class DdrsParams(DdrsConfig):
    target_rate: float | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.target_rate is not None:
            if not 0 <= self.target_rate <= 1:
                raise ConfigError("must lie in [0, 1]", "target_rate")
            self.pi = dataclasses.replace(self.pi, target_rate=self.target_rate)


PARAMS = {"bins": WeekConfig, "solve": SolveParams, "sweep": SweepParams,
          "aimd": AimdParams, "ddrs": DdrsParams}


@dataclass
class Scenario:
    name: str
    kind: str
    params: object
    seed: int | None = 0
    output_dir: str | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "seed": self.seed,
                "output_dir": self.output_dir, "params": dump(self.params)}


# --- dict <-> dataclass ------------------------------------------------------


def dump(obj):
    """Plain-data form of a config tree (init fields only)."""
    if isinstance(obj, BehaviorCurve):
        return obj.to_dict()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: dump(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.init}
    if isinstance(obj, (list, tuple)):
        return [dump(x) for x in obj]
    return obj


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


def _curve(data, path):
    if isinstance(data, BehaviorCurve):
        return data
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping with p0 and x90", path)
    unknown = set(data) - {"p0", "x90", "name"}
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r}", _join(path, sorted(unknown)[0]))
    for key in ("p0", "x90"):
        if key not in data:
            raise ConfigError("missing", _join(path, key))
        if not isinstance(data[key], (int, float)) or isinstance(data[key], bool):
            raise ConfigError("must be a number", _join(path, key))
    try:
        return BehaviorCurve(float(data["p0"]), float(data["x90"]), str(data.get("name", "")))
    except DomainError as exc:
        raise ConfigError(str(exc), path) from None


def _coerce(value, hint, path):
    origin = typing.get_origin(hint)
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    if origin is typing.Union or (origin is not None and type(None) in typing.get_args(hint)):
        if value is None:
            return None
        hint = args[0] if len(args) == 1 else object
    if dataclasses.is_dataclass(hint):
        return from_dict(hint, value, path)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"must be a number, got {value!r}", path)
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"must be an integer, got {value!r}", path)
        return int(value)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"must be true or false, got {value!r}", path)
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"must be a string, got {value!r}", path)
        return value
    if hint is list or typing.get_origin(hint) is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"must be a list, got {value!r}", path)
        return list(value)
    return value


def from_dict(cls, data, path=""):
    """Build dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping, got {type(data).__name__}", path or None)
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError("unknown key", _join(path, unknown[0]))
    kwargs = {}
    for key, value in data.items():
        sub = _join(path, key)
        if key == "curves":
            if not isinstance(value, list) or not value:
                raise ConfigError("must be a non-empty list of curves", sub)
            kwargs[key] = [_curve(c, f"{sub}[{i}]") for i, c in enumerate(value)]
        else:
            kwargs[key] = _coerce(value, hints[key], sub)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1] if exc.path else str(exc),
                          _join(path, exc.path) if exc.path else (path or None)) from None
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path or None) from None


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioParseError("scenario must be a YAML mapping")
    unknown = sorted(set(data) - {"name", "kind", "params", "seed", "output_dir"})
    if unknown:
        raise ConfigError("unknown key", unknown[0])
    kind = data.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"must be one of {', '.join(KINDS)}, got {kind!r}", "kind")
    params = data.get("params") or {}
    if kind == "aimd" and isinstance(params, dict):
        params = _split_aimd(params)
    cfg = from_dict(PARAMS[kind], params, "params")
    seed = data.get("seed", 0)
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ConfigError("must be a non-negative integer", "seed")
    out = data.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise ConfigError("must be a string", "output_dir")
    name = data.get("name", kind)
    return Scenario(str(name), kind, cfg, seed, out)


def _split_aimd(params):
    """Allow AIMD settings either flat or under an ``aimd`` block."""
    params = dict(params)
    flat = {k: params.pop(k) for k in list(params) if k not in ("curves", "aimd")}
    block = dict(params.get("aimd") or {})
    block.update(flat)
    block.setdefault("record_every", 100)
    out = {"aimd": block}
    if "curves" in params:
        out["curves"] = params["curves"]
    return out


def bundled_scenarios() -> list:
    root = resources.files("ddrs") / "scenarios"
    return sorted(p.name[: -len(".scenario")] for p in root.iterdir() if p.name.endswith(".scenario"))


def resolve_path(path_or_name) -> Path:
    p = Path(path_or_name)
    if p.exists():
        return p
    candidate = resources.files("ddrs") / "scenarios" / f"{p.name.removesuffix('.scenario')}.scenario"
    if candidate.is_file():
        return Path(str(candidate))
    raise ScenarioParseError(f"no such scenario file: {path_or_name}")


def parse_text(text: str) -> dict:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioParseError(f"cannot parse scenario: {exc}") from None
    if data is None:
        raise ScenarioParseError("scenario file is empty")
    if not isinstance(data, dict):
        raise ScenarioParseError("scenario must be a YAML mapping")
    return data


def load_scenario(path_or_name) -> Scenario:
    """Read, parse and validate a scenario file (or bundled scenario name)."""
    path = resolve_path(path_or_name)
    return scenario_from_dict(parse_text(path.read_text(encoding="utf-8")))


def load_curves(path) -> list:
    """Curves from a file holding either ``curves:`` or a scenario with ``params.curves``."""
    data = parse_text(Path(path).read_text(encoding="utf-8"))
    block = data.get("curves", (data.get("params") or {}).get("curves"))
    if not isinstance(block, list) or not block:
        raise ConfigError("no curves list found", "curves")
    return [_curve(c, f"curves[{i}]") for i, c in enumerate(block)]
