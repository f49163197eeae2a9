"""Experiment configuration: nested dataclasses stored as JSON.

A config file holds any subset of the sections below; missing keys take
their defaults. ``--set section.key=value`` overrides parse ``value`` as
JSON when possible and as a plain string otherwise.

Defaults:

* model: T = 4 timesteps, leak tau = 0.5, v_th = 1, reset to 0;
  triangular surrogate of width 1; hidden layers 64 -> 128 -> 128 for
  8x8 digits.
* train: SGD, base rate 0.1 with cosine annealing, momentum 0.9, 30 epochs
  (desk-scale horizon); adversarial training uses PGD with eps = 2/255 and
  2 iterations of size eps.
* tgo: margin 0.2, lambda_max 0.4, noise variance 0.4.
* attacks: eps = 8/255 and step 0.01, iterations in the attack name.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .attacks import AttackConfig
from .tgo import TgoConfig
from .training import TRAIN_MODES

OUTPUT_ENV = "SNNGUARD_OUT"
DATASET_KINDS = ("digits", "idx", "gaussians", "spirals")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    layer_sizes: List[int] = field(default_factory=lambda: [64, 128, 128])
    n_classes: int = 10
    t_steps: int = 4
    tau: float = 0.5
    v_th: float = 1.0
    v_reset: float = 0.0
    noise_variance: float = 0.0  # guarded modes use tgo.noise_variance instead
    surrogate: str = "triangular"
    surrogate_width: float = 1.0
    gain: float = 3.0
    decoder: str = "rate"


@dataclass
class TrainConfig:
    mode: str = "vanilla"
    epochs: int = 30
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 32
    at_epsilon: float = 2 / 255
    at_step: float = 2 / 255
    at_iterations: int = 2
    checkpoint_every: int = 0  # 0: final checkpoint only


@dataclass
class DatasetConfig:
    kind: str = "digits"
    images: Optional[str] = None
    labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    n: int = 1000
    classes: int = 2
    dim: int = 2
    test_fraction: float = 0.2
    split_seed: int = 0


def default_attacks() -> List[AttackConfig]:
    eps, step = 8 / 255, 0.01
    return [AttackConfig("fgsm", eps),
            AttackConfig("rfgsm", eps),
            AttackConfig("pgd", eps, step, 7),
            AttackConfig("pgd", eps, step, 10),
            AttackConfig("pgd", eps, step, 20)]


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tgo: TgoConfig = field(default_factory=TgoConfig)
    attacks: List[AttackConfig] = field(default_factory=default_attacks)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    seed: int = 0
    output_dir: Optional[str] = None

    def validate(self) -> "ExperimentConfig":
        m, t, d = self.model, self.train, self.dataset
        if len(m.layer_sizes) < 2 or any(int(s) < 1 for s in m.layer_sizes):
            raise ConfigError(f"model.layer_sizes needs an input width and at least one layer, got {m.layer_sizes}")
        if m.n_classes < 2:
            raise ConfigError(f"model.n_classes must be >= 2, got {m.n_classes}")
        if m.decoder not in ("rate", "membrane"):
            raise ConfigError(f"model.decoder must be 'rate' or 'membrane', got {m.decoder!r}")
        if t.mode not in TRAIN_MODES:
            raise ConfigError(f"train.mode must be one of {TRAIN_MODES}, got {t.mode!r}")
        if t.epochs < 0 or t.batch_size < 1:
            raise ConfigError("train.epochs must be >= 0 and train.batch_size >= 1")
        if d.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset.kind must be one of {DATASET_KINDS}, got {d.kind!r}")
        if d.kind == "idx" and not (d.images and d.labels):
            raise ConfigError("dataset.kind = 'idx' needs dataset.images and dataset.labels")
        if not 0 < d.test_fraction < 1:
            raise ConfigError(f"dataset.test_fraction must be in (0, 1), got {d.test_fraction}")
        return self

    @property
    def effective_noise_variance(self) -> float:
        return self.tgo.noise_variance if self.train.mode in ("tgo", "at_tgo") else self.model.noise_variance

    def to_dict(self) -> Dict[str, Any]:
        out = dataclasses.asdict(self)
        out["attacks"] = [_attack_dict(a) for a in self.attacks]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def resolve_output_dir(self, override: Optional[str] = None) -> Path:
        """``override`` flag, then the config value, then ``$SNNGUARD_OUT``, then ``./runs``."""
        return Path(override or self.output_dir or os.environ.get(OUTPUT_ENV) or "runs")


def _attack_dict(a: AttackConfig) -> Dict[str, Any]:
    d = dataclasses.asdict(a)
    if d["targets"] is not None:
        d["targets"] = list(d["targets"])
    return d


def _build(cls, data: Dict[str, Any], where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a table, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table")
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs: Dict[str, Any] = {}
    for name, cls in (("model", ModelConfig), ("train", TrainConfig), ("tgo", TgoConfig), ("dataset", DatasetConfig)):
        if name in data:
            kwargs[name] = _build(cls, data[name], name)
    if "attacks" in data:
        if not isinstance(data["attacks"], list):
            raise ConfigError("attacks must be a list of tables")
        kwargs["attacks"] = [_build(AttackConfig, a, f"attacks[{i}]") for i, a in enumerate(data["attacks"])]
    for key in ("seed", "output_dir"):
        if key in data:
            kwargs[key] = data[key]
    return ExperimentConfig(**kwargs).validate()


def from_json(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return from_dict(data)


def _merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def build(path=None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Defaults, overlaid with the file at ``path`` (if any), then with ``overrides``."""
    data = ExperimentConfig().to_dict()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            loaded = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config root must be a table")
        data = _merge(data, loaded)
    return from_dict(apply_overrides(data, overrides))


load = build


def parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply ``a.b.c=value`` strings to a nested dict (copied); list items are addressed by index."""
    data = json.loads(json.dumps(data))
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path = key.split(".")
        node: Any = data
        for part in path[:-1]:
            if isinstance(node, list):
                node = node[_index(part, item)]
            else:
                node = node.setdefault(part, {})
        last = path[-1]
        if isinstance(node, list):
            node[_index(last, item)] = parse_value(raw)
        else:
            node[last] = parse_value(raw)
    return data


def _index(part: str, item: str) -> int:
    try:
        return int(part)
    except ValueError:
        raise ConfigError(f"override {item!r}: {part!r} is not a list index") from None


def dumps_defaults() -> str:
    return ExperimentConfig().to_json()
