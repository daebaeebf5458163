"""Flat INI-style run configuration.

One file carries sections mirroring the library's config types; every
value can be overridden on the command line with ``--override key=value``
(bare keys must be unambiguous, ``section.key`` is always accepted).
Values are parsed by the type of the dataclass field they land in.
"""

from __future__ import annotations

import configparser
import dataclasses
from importlib import resources
from pathlib import Path

import numpy as np

from .env import EnvConfig, Scenario
from .policy import GraphormerConfig
from .ppo import TrainConfig
from .quad import QuadParams


class ConfigError(ValueError):
    pass


SECTION_TYPES = {
    "quad": QuadParams,
    "env": EnvConfig,
    "scenario": Scenario,
    "policy": GraphormerConfig,
    "train": TrainConfig,
}


@dataclasses.dataclass
class RunConfig:
    quad: QuadParams
    env: EnvConfig
    scenario: Scenario
    policy: GraphormerConfig
    train: TrainConfig
    source: str = ""
    overrides: dict = dataclasses.field(default_factory=dict)

    def echo(self) -> dict:
        """Plain-JSON view of every section (used by run summaries)."""
        out = {}
        for section in SECTION_TYPES:
            obj = getattr(self, section)
            row = {}
            for f in dataclasses.fields(obj):
                v = getattr(obj, f.name)
                if isinstance(v, np.ndarray):
                    v = v.tolist()
                elif isinstance(v, tuple):
                    v = list(v)
                elif callable(v) and v is not None:
                    v = repr(v)
                row[f.name] = v
            out[section] = row
        out["overrides"] = self.overrides
        return out


def default_config_path() -> Path:
    return Path(str(resources.files("equiswarm").joinpath("configs/default.cfg")))


def _coerce(raw: str, field: dataclasses.Field, section: str):
    raw = raw.strip()
    t = field.type
    try:
        if t in ("float", float):
            return float(raw)
        if t in ("int", int):
            return int(raw)
        if t in ("bool", bool):
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if t in ("str", str):
            return raw
        if t == "tuple" or t is tuple:
            return tuple(int(x) for x in raw.split(","))
        if t == "np.ndarray" or t is np.ndarray:
            vals = [float(x) for x in raw.split(",")]
            return np.asarray(vals)
        if "Callable" in str(t) or "None" in str(t):
            raise ConfigError(f"[{section}] {field.name} cannot be set from a config file")
        return raw
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {field.name}: cannot parse {raw!r} ({exc})") from None


def _inertia_from_diag(raw: str) -> np.ndarray:
    vals = [float(x) for x in raw.split(",")]
    if len(vals) == 3:
        return np.diag(vals)
    if len(vals) == 9:
        return np.asarray(vals).reshape(3, 3)
    raise ConfigError(f"[quad] inertia: expected 3 or 9 comma-separated values, got {len(vals)}")


def _build_section(cls, items: dict, section: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in fields:
            raise ConfigError(f"[{section}] unknown key {key!r}; valid keys: {sorted(fields)}")
        if section == "quad" and key == "inertia":
            kwargs[key] = _inertia_from_diag(raw)
        else:
            kwargs[key] = _coerce(raw, fields[key], section)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_overrides(pairs: list) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _locate(key: str) -> tuple:
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SECTION_TYPES:
            raise ConfigError(f"override {key!r}: unknown section {section!r}")
        return section, name
    hits = [s for s, cls in SECTION_TYPES.items()
            if key in {f.name for f in dataclasses.fields(cls)}]
    if not hits:
        raise ConfigError(f"override {key!r} does not match any config field")
    if len(hits) > 1:
        raise ConfigError(f"override {key!r} is ambiguous across sections {hits}; qualify it")
    return hits[0], key


def load_config(path=None, overrides: list | None = None) -> RunConfig:
    path = default_config_path() if path is None else Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    items = {s: dict(parser[s]) for s in parser.sections()}
    for s in items:
        if s not in SECTION_TYPES:
            raise ConfigError(f"unknown config section [{s}] in {path}")
    mapping = parse_overrides(overrides)
    for key, value in mapping.items():
        section, name = _locate(key)
        items.setdefault(section, {})[name] = value
    built = {s: _build_section(cls, items.get(s, {}), s) for s, cls in SECTION_TYPES.items()}
    return RunConfig(quad=built["quad"], env=built["env"], scenario=built["scenario"],
                     policy=built["policy"], train=built["train"],
                     source=str(path), overrides=mapping)
