"""Flat ``key = value`` configuration files.

Keys mirror the fields of :class:`DatasetSpec` and :class:`TrainConfig`, plus
a few run-level keys (``variants``, ``test_layouts``, ``eps``). Lines starting
with ``#`` or ``;`` are comments. Unknown keys are rejected.
"""
from __future__ import annotations

import configparser
from dataclasses import fields
from pathlib import Path

from .errors import ConfigError
from .model import TrainConfig
from .scenarios import DatasetSpec

_SECTION = "run"
RUN_KEYS = {"variants": str, "test_layouts": str, "eps": float, "label_test": bool, "out": str}


def _coerce(key: str, value: str, kind):
    try:
        if kind is bool:
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return value.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def _field_types(cls) -> dict:
    names = {"int": int, "float": float, "bool": bool, "str": str}
    out = {}
    for f in fields(cls):
        t = f.type if isinstance(f.type, str) else f.type.__name__
        out[f.name] = names.get(t.split("|")[0].strip(), str)
    return out


DATASET_KEYS = _field_types(DatasetSpec)
TRAIN_KEYS = {k: v for k, v in _field_types(TrainConfig).items() if k != "head"}


def parse_text(text: str) -> dict:
    """Parse and type-check; returns a dict of coerced values."""
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    out = {}
    known = {**DATASET_KEYS, **TRAIN_KEYS, **RUN_KEYS}
    for key, value in cp[_SECTION].items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, value, known[key])
    return out


def read_config(path) -> dict:
    return parse_text(Path(path).read_text())


def write_config(values: dict, path) -> Path:
    path = Path(path)
    lines = []
    for k, v in values.items():
        lines.append(f"{k} = {repr(v) if isinstance(v, float) else v}")
    path.write_text("\n".join(lines) + "\n")
    return path


def dataset_spec(values: dict, **overrides) -> DatasetSpec:
    kw = {k: v for k, v in values.items() if k in DATASET_KEYS}
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return DatasetSpec(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def train_config(values: dict, grid_name: str, head: str, **overrides) -> TrainConfig:
    kw = {k: v for k, v in values.items() if k in TRAIN_KEYS and k not in DATASET_KEYS}
    kw.update({k: v for k, v in overrides.items() if v is not None})
    if "seed" in values and "seed" not in kw:
        kw["seed"] = values["seed"]
    return TrainConfig.for_grid(grid_name, head, **kw)


def split_list(value: str | None) -> tuple[str, ...]:
    if not value:
        return ()
    return tuple(s.strip() for s in value.split(",") if s.strip())


def experiment_config(values: dict, **overrides):
    """An :class:`ExperimentConfig` from a parsed file; ``out`` stays with the caller."""
    from .experiment import ExperimentConfig

    spec = dataset_spec(values)
    kw = {"grid": spec.grid, "train_data": spec}
    for key in ("mode", "epochs", "committee", "seed", "big_m", "no_export"):
        if key in values:
            kw[key] = values[key]
    if "variants" in values:
        kw["variants"] = split_list(values["variants"])
    if "test_layouts" in values:
        kw["test_layouts"] = split_list(values["test_layouts"])
    for key in ("eps", "label_test"):
        if key in values:
            kw[key] = values[key]
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**kw)
