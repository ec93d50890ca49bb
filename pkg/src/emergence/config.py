"""Run configuration: dataclasses, defaults, YAML loading and validation.

A config file is a YAML mapping with optional sections::

    seed: 1
    output_dir: runs/demo
    world:     {K: 2, V_attr: 4, split: [0.8, 0.1, 0.1]}
    game:      {vocab: 8, L: 2, N: 4}
    model:     {hidden: 64, perception_hidden: 128, activation: relu}
    optimizer: {learning_rate: 0.004, lr_sender: null, lr_receiver: null,
                beta1: 0.9, beta2: 0.999, eps: 1.0e-8, weight_decay: 0.0, clip_norm: 1.0}
    training:  {pipeline: RL-SL, batch_size: 512, lambda_s: 0.02, lambda_r: 0.02,
                max_steps: 20000, eval_every: 100, eval_episodes: 1000,
                patience: 20, target_accuracy: null}

Any key may also be given at the top level instead of inside its section.
"""

from __future__ import annotations

import dataclasses
import difflib
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .world import MAX_OBJECTS, ConfigurationError, split_sizes

PIPELINES = ("RL-RL", "RL-SL")
ACTIVATIONS = ("relu", "tanh", "sigmoid")


@dataclass
class WorldConfig:
    K: int = 2
    V_attr: int = 4
    split: tuple = (0.8, 0.1, 0.1)


@dataclass
class GameConfig:
    vocab: int = 8
    L: int = 2
    N: int = 4


@dataclass
class ModelConfig:
    hidden: int = 64
    perception_hidden: int = 128
    activation: str = "relu"


@dataclass
class OptimizerConfig:
    learning_rate: float = 4e-3
    lr_sender: float | None = None
    lr_receiver: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float = 1.0

    @property
    def eta_sender(self) -> float:
        return self.learning_rate if self.lr_sender is None else self.lr_sender

    @property
    def eta_receiver(self) -> float:
        return self.learning_rate if self.lr_receiver is None else self.lr_receiver


@dataclass
class TrainingConfig:
    pipeline: str = "RL-SL"
    batch_size: int = 512
    lambda_s: float = 0.02
    lambda_r: float = 0.02
    max_steps: int = 20000
    eval_every: int = 100
    eval_episodes: int = 1000
    patience: int = 20  # 0 disables early stopping
    target_accuracy: float | None = None  # stop once validation accuracy reaches this


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    world: WorldConfig = field(default_factory=WorldConfig)
    game: GameConfig = field(default_factory=GameConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["world"]["split"] = list(self.world.split)
        return d

    def digest(self) -> str:
        """Hash of everything that shapes the run, excluding where outputs go."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **sections) -> "RunConfig":
        """Copy with per-section overrides, e.g. ``replace(training={"max_steps": 0})``."""
        new = RunConfig.from_dict(self.to_dict())
        for name, values in sections.items():
            if isinstance(values, dict):
                setattr(new, name, dataclasses.replace(getattr(new, name), **values))
            else:
                setattr(new, name, values)
        validate(new)
        return new

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        return build_config(raw)


SECTIONS = {
    "world": WorldConfig,
    "game": GameConfig,
    "model": ModelConfig,
    "optimizer": OptimizerConfig,
    "training": TrainingConfig,
}
TOP_LEVEL = ("seed", "output_dir")
_KEY_SECTION = {f.name: sec for sec, kls in SECTIONS.items() for f in dataclasses.fields(kls)}


def _unknown(key: str, where: str, known) -> ConfigurationError:
    close = difflib.get_close_matches(key, list(known), n=1)
    hint = f"; did you mean {close[0]!r}?" if close else ""
    return ConfigurationError(f"unknown key {key!r} in {where}{hint}")


FLOAT_KEYS = {"learning_rate", "lr_sender", "lr_receiver", "beta1", "beta2", "eps", "weight_decay",
              "clip_norm", "lambda_s", "lambda_r", "target_accuracy"}


def _coerce_float(v):
    # YAML 1.1 reads "4e-3" (no dot) as a string
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return v
    return v


def build_config(raw: dict | None) -> RunConfig:
    raw = dict(raw or {})
    sections: dict[str, dict] = {name: {} for name in SECTIONS}
    top: dict = {}
    for key, value in raw.items():
        if key in SECTIONS:
            if value is None:
                continue
            if not isinstance(value, dict):
                raise ConfigurationError(f"section {key!r} must be a mapping")
            allowed = {f.name for f in dataclasses.fields(SECTIONS[key])}
            for sub, v in value.items():
                if sub not in allowed:
                    raise _unknown(sub, f"section {key!r}", allowed)
                sections[key][sub] = v
        elif key in TOP_LEVEL:
            top[key] = value
        elif key in _KEY_SECTION:
            sections[_KEY_SECTION[key]][key] = value
        else:
            raise _unknown(key, "config", list(TOP_LEVEL) + list(SECTIONS) + list(_KEY_SECTION))
    if "split" in sections["world"]:
        split = sections["world"]["split"]
        if not isinstance(split, (list, tuple)):
            raise ConfigurationError("world.split: must be a list of three fractions")
        sections["world"]["split"] = tuple(_coerce_float(v) for v in split)
    for name, vals in sections.items():
        for key in vals:
            if key in FLOAT_KEYS:
                vals[key] = _coerce_float(vals[key])
    cfg = RunConfig(**top, **{name: SECTIONS[name](**vals) for name, vals in sections.items()})
    validate(cfg)
    return cfg


def _require(cond: bool, key: str, msg: str):
    if not cond:
        raise ConfigurationError(f"{key}: {msg}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def validate(cfg: RunConfig) -> None:
    """Semantic checks; raises ConfigurationError naming the offending key."""
    _require(_is_int(cfg.seed) and cfg.seed >= 0, "seed", "must be a non-negative integer")
    w, g, m, o, t = cfg.world, cfg.game, cfg.model, cfg.optimizer, cfg.training
    _require(_is_int(w.K) and w.K >= 1, "world.K", "must be an integer >= 1")
    _require(_is_int(w.V_attr) and w.V_attr >= 2, "world.V_attr", "must be an integer >= 2")
    _require(len(w.split) == 3 and all(_is_num(f) and f >= 0 for f in w.split),
             "world.split", "must be three non-negative fractions")
    _require(abs(sum(w.split) - 1.0) <= 1e-9, "world.split", f"fractions sum to {sum(w.split):g}, not 1")
    n_objects = w.V_attr**w.K
    _require(n_objects <= MAX_OBJECTS, "world.K", f"{n_objects} objects exceeds the limit of {MAX_OBJECTS}")
    try:
        n_train, n_val, n_test = split_sizes(n_objects, w.split)
    except ConfigurationError as exc:
        raise ConfigurationError(f"world.split: {exc}") from None

    _require(_is_int(g.vocab) and g.vocab >= 1, "game.vocab", "must be an integer >= 1")
    _require(_is_int(g.L) and g.L >= 1, "game.L", "must be an integer >= 1")
    _require(_is_int(g.N) and g.N >= 2, "game.N", "must be an integer >= 2")
    _require(g.N <= n_train, "game.N", f"N={g.N} exceeds the train split size {n_train}")

    _require(_is_int(m.hidden) and m.hidden >= 1, "model.hidden", "must be a positive integer")
    _require(_is_int(m.perception_hidden) and m.perception_hidden >= 1,
             "model.perception_hidden", "must be a positive integer")
    _require(m.activation in ACTIVATIONS, "model.activation", f"must be one of {ACTIVATIONS}")

    for key in ("learning_rate", "lr_sender", "lr_receiver"):
        v = getattr(o, key)
        if v is not None or key == "learning_rate":
            _require(_is_num(v) and v >= 0, f"optimizer.{key}", "must be a non-negative number")
    _require(_is_num(o.beta1) and 0 <= o.beta1 < 1, "optimizer.beta1", "must lie in [0, 1)")
    _require(_is_num(o.beta2) and 0 <= o.beta2 < 1, "optimizer.beta2", "must lie in [0, 1)")
    _require(_is_num(o.eps) and o.eps > 0, "optimizer.eps", "must be positive")
    _require(_is_num(o.weight_decay) and o.weight_decay >= 0, "optimizer.weight_decay", "must be >= 0")
    _require(_is_num(o.clip_norm) and o.clip_norm > 0, "optimizer.clip_norm", "must be positive")

    _require(t.pipeline in PIPELINES, "training.pipeline", f"must be one of {PIPELINES}")
    _require(_is_int(t.batch_size) and t.batch_size >= 1, "training.batch_size", "must be an integer >= 1")
    _require(_is_num(t.lambda_s) and t.lambda_s >= 0, "training.lambda_s", "must be >= 0")
    _require(_is_num(t.lambda_r) and t.lambda_r >= 0, "training.lambda_r", "must be >= 0")
    _require(_is_int(t.max_steps) and t.max_steps >= 0, "training.max_steps", "must be an integer >= 0")
    _require(_is_int(t.eval_every) and t.eval_every >= 1, "training.eval_every", "must be an integer >= 1")
    _require(_is_int(t.eval_episodes) and t.eval_episodes >= 1, "training.eval_episodes", "must be an integer >= 1")
    _require(_is_int(t.patience) and t.patience >= 0, "training.patience", "must be an integer >= 0")
    if t.target_accuracy is not None:
        _require(_is_num(t.target_accuracy) and 0 < t.target_accuracy <= 1,
                 "training.target_accuracy", "must lie in (0, 1]")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigurationError(f"{path}: parse error at {where}: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: parse error: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return build_config(raw)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
