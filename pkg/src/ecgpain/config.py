"""Declarative experiment configuration.

One JSON file drives a whole run: scheme, tasks, methods, loss coefficients
and form, detector parameters, network hyper-parameters, seed, and worker
count. Command-line overrides use dotted paths (``nn.epochs=40``). The
canonical serialized form is hashed so every report can name the exact
configuration that produced it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .experiments import SCHEME_NAMES, Method, TaskKind, TrainConfig
from .models import LossForm
from .qrs_detect import DetectorConfig


class ConfigError(ValueError):
    """Invalid configuration file or override."""


@dataclass(frozen=True)
class Coefficients:
    """Fixed multipliers of the pain/age/gender loss terms."""

    c1: float = 1.0
    c2: float = 0.2
    c3: float = 0.2

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) < 0:
            raise ConfigError("coefficients must be >= 0")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.c1, self.c2, self.c3)


@dataclass(frozen=True)
class FeatureSettings:
    sdnn_ddof: int = 0
    slope_axis: str = "index"

    def __post_init__(self):
        if self.sdnn_ddof not in (0, 1):
            raise ConfigError("sdnn_ddof must be 0 (population) or 1 (sample)")
        if self.slope_axis not in ("index", "time"):
            raise ConfigError("slope_axis must be 'index' or 'time'")


_DEFAULT_TASKS = tuple(k.value for k in TaskKind)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    workers: int = 1
    scheme: tuple[str, ...] = ("basic",)
    tasks: tuple[str, ...] = _DEFAULT_TASKS
    methods: tuple[str, ...] = ("ST-NN",)
    coefficients: Coefficients = Coefficients()
    loss_form: str = "kendall"
    detector: DetectorConfig = DetectorConfig()
    features: FeatureSettings = FeatureSettings()
    nn: TrainConfig = TrainConfig()

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for s in self.scheme:
            if s not in SCHEME_NAMES:
                raise ConfigError(f"unknown scheme {s!r}; expected one of {SCHEME_NAMES}")
        valid_tasks = {k.value for k in TaskKind}
        for t in self.tasks:
            if t not in valid_tasks:
                raise ConfigError(f"unknown task {t!r}; expected one of {sorted(valid_tasks)}")
        for m in self.methods:
            try:
                Method.parse(m)
            except ValueError as exc:
                raise ConfigError(str(exc))
        if self.loss_form not in ("kendall", "paper_literal"):
            raise ConfigError("loss_form must be 'kendall' or 'paper_literal'")

    def scheme_list(self) -> tuple[str, ...]:
        return self.scheme

    def loss_form_enum(self) -> LossForm:
        return LossForm.KENDALL_CORRECTED if self.loss_form == "kendall" else LossForm.PAPER_LITERAL

    def to_dict(self) -> dict:
        def unpack(value):
            if dataclasses.is_dataclass(value) and not isinstance(value, type):
                return {f.name: unpack(getattr(value, f.name)) for f in fields(value)}
            if isinstance(value, tuple):
                return [unpack(v) for v in value]
            return value

        return unpack(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:12]


def _coerce_into(cls, value, path: str):
    """Build a (possibly nested) dataclass from plain dict data."""
    if not isinstance(value, dict):
        raise ConfigError(f"{path or cls.__name__}: expected an object, got {type(value).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(value) - set(known)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, raw in value.items():
        f = known[name]
        sub_path = f"{path}.{name}" if path else name
        default = f.default if f.default is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(f.type) if isinstance(f.type, type) else False:
            kwargs[name] = _coerce_into(f.type, raw, sub_path)
        elif dataclasses.is_dataclass(default):
            kwargs[name] = _coerce_into(type(default), raw, sub_path)
        elif isinstance(default, tuple) or (isinstance(f.type, str) and f.type.startswith("tuple")):
            if isinstance(raw, str):
                raw = [raw]
            if not isinstance(raw, (list, tuple)):
                raise ConfigError(f"{sub_path}: expected a list")
            elem = type(default[0]) if isinstance(default, tuple) and default else None
            kwargs[name] = tuple(elem(v) if elem else v for v in raw)
        else:
            kwargs[name] = raw
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path or 'config'}: {exc}")


def config_from_dict(data: dict) -> ExperimentConfig:
    return _coerce_into(ExperimentConfig, data, "")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    return config_from_dict(data)


def _parse_override_value(current, text: str):
    if isinstance(current, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse {text!r} as a boolean")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, (list, tuple)):
        parsed = json.loads(text) if text.startswith("[") else text.split(",")
        elem = type(current[0]) if len(current) else str
        return [elem(v) for v in parsed]
    return text


def apply_overrides(config: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``dotted.path=value`` overrides and revalidate."""
    data = config.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node = node[p]
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            node[leaf] = _parse_override_value(node[leaf], text.strip())
        except (ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(f"override {key}: {exc}")
    return config_from_dict(data)
