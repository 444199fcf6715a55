"""JSON experiment configuration with strict field checking."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from ..optimizers import GradScaleMode, Kind, OptimizerConfig
from ..problems import DEFAULT_SHAPES, ProblemKind, ProblemSpec


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field (``optimizer.eta``)."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    steps: int = 200
    seed: int = 0
    log_every: int = 1
    oracle_check: bool = False
    output: Optional[str] = None
    # wall-clock columns break byte-identical CSVs, so they are opt-in
    timing: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps", f"must be >= 1, got {self.steps}")
        if self.log_every < 1:
            raise ConfigError("log_every", f"must be >= 1, got {self.log_every}")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self), default=_enum_value))


def _enum_value(obj):
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _check_scalar(f: dataclasses.Field, value, where: str):
    default = f.default
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(where, "expected true or false")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(where, "expected an integer")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(where, "expected a number")
        return float(value)
    return value


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            where = f"{path}.{key}" if path else key
            raise ConfigError(where, "unknown field")
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key == "problem":
            value = _build(ProblemSpec, value, where)
        elif key == "optimizer":
            value = _build(OptimizerConfig, value, where)
        elif key == "shape":
            if not (isinstance(value, list) and len(value) == 2 and all(isinstance(v, int) for v in value)):
                raise ConfigError(where, "expected [rows, cols]")
            value = tuple(value)
        elif key == "kind":
            enum = ProblemKind if cls is ProblemSpec else Kind
            try:
                value = enum(value)
            except ValueError:
                raise ConfigError(where, f"expected one of {[e.value for e in enum]}") from None
        elif key == "grad_scale_mode":
            try:
                value = GradScaleMode(value)
            except ValueError:
                raise ConfigError(where, f"expected one of {[e.value for e in GradScaleMode]}") from None
        else:
            value = _check_scalar(names[key], value, where)
        kwargs[key] = value
    if cls is ProblemSpec and "shape" not in kwargs and "kind" in kwargs:
        kwargs["shape"] = DEFAULT_SHAPES[kwargs["kind"]]
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{path}.{exc.path}" if path else exc.path, str(exc).split(": ", 1)[-1]) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("", f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON in {path}: {exc}") from None
    return config_from_dict(data)
