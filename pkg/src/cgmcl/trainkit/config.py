"""Run configuration: validated dataclasses loaded from JSON plus ``key=value`` overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from cgmcl.data import DEFAULT_TRAIN_FRACTION, SyntheticSpec
from cgmcl.errors import ConfigError
from cgmcl.losses import EPSILON, LOSS_MODES, POSITIVE_RULES

BACKBONES = ("gat", "gcn")
DIAG_REFERENCES = ("union", "image", "clinical")
OPTIMIZERS = ("adam", "sgd")


@dataclass
class TrainConfig:
    k_image: int | None = None  # None -> default_k(n)
    k_clinical: int | None = None
    d_image: int = 32
    d_h: int = 64
    d_c: int = 64
    backbone_image: str = "gat"
    backbone_clinical: str = "gat"
    graph_layers: int = 1
    beta: float = 0.65
    delta: float = 0.5
    epsilon: float = EPSILON
    lr: float = 1e-3
    optimizer: str = "adam"
    epochs: int = 200
    seed: int = 0
    no_concat: bool = False
    no_imfes: bool = False
    loss_mode: str = "full"
    diag_reference: str = "union"
    positive_rule: str = "same_class"
    label_column: str | None = None
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    repeats: int = 5

    def validate(self) -> "TrainConfig":
        for name in ("k_image", "k_clinical"):
            k = getattr(self, name)
            if k is not None and (not isinstance(k, int) or k < 1):
                raise ConfigError(f"{name} must be a positive integer, got {k!r}")
        for name in ("d_image", "d_h", "d_c", "graph_layers", "epochs", "repeats"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name, allowed in (("backbone_image", BACKBONES), ("backbone_clinical", BACKBONES),
                              ("loss_mode", LOSS_MODES), ("diag_reference", DIAG_REFERENCES),
                              ("positive_rule", POSITIVE_RULES), ("optimizer", OPTIMIZERS)):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if not self.delta > 0:
            raise ConfigError(f"delta must be > 0, got {self.delta}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.lr >= 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        return self

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "TrainConfig":
        return _build(cls, raw, "config").validate()

    def with_updates(self, **changes) -> "TrainConfig":
        return replace(self, **changes).validate()


@dataclass
class DataSource:
    image_csv: str
    clinical_csv: str
    labels_csv: str
    strict: bool = True


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticSpec | None = None
    data: DataSource | None = None
    output_dir: str = "runs/latest"

    def validate(self) -> "RunConfig":
        self.train.validate()
        if (self.synthetic is None) == (self.data is None):
            raise ConfigError("exactly one of 'synthetic' or 'data' must be configured")
        if self.synthetic is not None:
            self.synthetic.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = asdict(self.train)
        out["output_dir"] = self.output_dir
        if self.synthetic is not None:
            out["synthetic"] = asdict(self.synthetic)
        if self.data is not None:
            out["data"] = asdict(self.data)
        return out

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        raw = dict(raw)
        synth = raw.pop("synthetic", None)
        data = raw.pop("data", None)
        output_dir = raw.pop("output_dir", "runs/latest")
        return cls(
            train=_build(TrainConfig, raw, "config"),
            synthetic=None if synth is None else _build(SyntheticSpec, synth, "synthetic"),
            data=None if data is None else _build(DataSource, data, "data"),
            output_dir=str(output_dir),
        ).validate()


def _build(cls, raw: dict[str, Any], where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in raw.items():
        kwargs[key] = _coerce(key, value, known[key].type)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _coerce(key: str, value: Any, annotation: str):
    """Match JSON scalars to the declared field type."""
    ann = str(annotation)
    if value is None:
        if "None" in ann:
            return None
        raise ConfigError(f"{key} may not be null")
    if ann.startswith("bool"):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key} must be true/false, got {value!r}")
    if ann.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    if ann.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if ann.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    return value


def parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_overrides(raw: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    raw = json.loads(json.dumps(raw))
    for item in overrides:
        path, value = parse_override(item)
        node = raw
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: {part!r} is not a section")
        node[path[-1]] = value
    return raw


def load_run_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    raw = apply_overrides(raw, overrides or [])
    return RunConfig.from_dict(raw)


def save_run_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
