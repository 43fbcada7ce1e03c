"""Run configuration: JSON in, validated dataclasses out.

Schema (every key optional except ``data``)::

    {
      "seed": 0,
      "out": "runs/default",
      "space":   {"resolution", "in_channels", "classes", "stem_channels", "stem_kernel",
                  "stem_stride", "head_channels",
                  "stages": [{"channels", "repeat", "stride", "operators": [...]}]},
      "train":   {"mode": "cream" | "spos", "steps", "lr0", "schedule": "linear" | "constant",
                  "momentum", "batch_size", "meta_interval", "meta_lr", "meta_hidden",
                  "meta_val_batch", "rho_override", "eval_interval", "init_scale",
                  "checkpoint_interval"},
      "board":   {"size", "flops_min", "flops_max", "val_subset"},
      "data":    {"synthetic": {"classes", "resolution", "n_train", "n_val", "noise", "seed", "jitter"}}
                 or {"idx": {"train_images", "train_labels", "val_images", "val_labels", "classes"}},
      "eval":    {"num_paths", "enumerate_cap", "batch_size",
                  "scratch": {"steps", "lr0", "batch_size", "seeds"}}
    }

Defaults are desk scale. ``PAPER_SCALE`` lists the values used at ImageNet scale.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .search_space import SpaceConfig, StageConfig

PAPER_SCALE = {"board.size": 10, "train.meta_interval": 200, "board.val_subset": 2048, "train.lr0": 0.5}


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    mode: str = "cream"
    steps: int = 500
    lr0: float = 0.1
    schedule: str = "linear"
    momentum: float = 0.0
    batch_size: int = 32
    meta_interval: int = 20
    meta_lr: float = 1.0
    meta_hidden: int = 64
    meta_val_batch: int = 128
    rho_override: float | None = None
    eval_interval: int = 1
    init_scale: float = 1.0
    checkpoint_interval: int = 0


@dataclass
class BoardConfig:
    size: int = 10
    flops_min: int = 0
    flops_max: int | None = None
    val_subset: int | None = 128


@dataclass
class ScratchConfig:
    steps: int = 300
    lr0: float = 0.1
    batch_size: int = 32
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])


@dataclass
class EvalConfig:
    num_paths: int = 30
    enumerate_cap: int = 256
    batch_size: int = 256
    scratch: ScratchConfig = field(default_factory=ScratchConfig)


@dataclass
class DataConfig:
    synthetic: dict | None = None
    idx: dict | None = None


@dataclass
class RunConfig:
    data: DataConfig
    seed: int = 0
    out: str = "runs/default"
    space: SpaceConfig = field(default_factory=SpaceConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    board: BoardConfig = field(default_factory=BoardConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


_SYNTH_KEYS = {"classes", "resolution", "n_train", "n_val", "noise", "seed", "jitter"}
_IDX_KEYS = {"train_images", "train_labels", "val_images", "val_labels", "classes"}


def _build(cls, raw, prefix):
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields)
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"{prefix + '.' if prefix else ''}{name}: unknown field")
    kwargs = {}
    for name, value in raw.items():
        path = f"{prefix}.{name}" if prefix else name
        if name == "stages" and cls is SpaceConfig:
            if not isinstance(value, list):
                raise ConfigError(f"{path}: expected a list")
            kwargs[name] = [_build(StageConfig, s, f"{path}[{i}]") for i, s in enumerate(value)]
        elif name in _NESTED.get(cls, {}):
            kwargs[name] = _build(_NESTED[cls][name], value, path)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from exc


_NESTED = {
    RunConfig: {"space": SpaceConfig, "train": TrainConfig, "board": BoardConfig, "data": DataConfig,
                "eval": EvalConfig},
    EvalConfig: {"scratch": ScratchConfig},
}


def _require(cond, name, msg):
    if not cond:
        raise ConfigError(f"{name}: {msg}")


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def validate(cfg: RunConfig, check_paths: bool = True) -> RunConfig:
    t, b, e = cfg.train, cfg.board, cfg.eval
    _require(_is_int(cfg.seed), "seed", "must be an integer")
    _require(t.mode in ("cream", "spos"), "train.mode", "must be 'cream' or 'spos'")
    _require(_is_int(t.steps) and t.steps >= 1, "train.steps", "must be an integer >= 1")
    _require(t.lr0 > 0, "train.lr0", "must be positive")
    _require(t.schedule in ("linear", "constant"), "train.schedule", "must be 'linear' or 'constant'")
    _require(0 <= t.momentum < 1, "train.momentum", "must be in [0, 1)")
    _require(_is_int(t.batch_size) and t.batch_size >= 1, "train.batch_size", "must be >= 1")
    _require(_is_int(t.meta_interval) and t.meta_interval >= 1, "train.meta_interval", "must be >= 1")
    _require(t.meta_lr >= 0, "train.meta_lr", "must be non-negative")
    _require(_is_int(t.meta_hidden) and t.meta_hidden >= 1, "train.meta_hidden", "must be >= 1")
    _require(_is_int(t.meta_val_batch) and t.meta_val_batch >= 1, "train.meta_val_batch", "must be >= 1")
    _require(t.rho_override is None or t.rho_override >= 0, "train.rho_override", "must be null or >= 0")
    _require(_is_int(t.eval_interval) and t.eval_interval >= 1, "train.eval_interval", "must be >= 1")
    _require(t.init_scale >= 0, "train.init_scale", "must be non-negative")
    _require(_is_int(t.checkpoint_interval) and t.checkpoint_interval >= 0, "train.checkpoint_interval",
             "must be >= 0")
    _require(_is_int(b.size) and b.size >= 1, "board.size", "must be an integer >= 1")
    _require(_is_int(b.flops_min) and b.flops_min >= 0, "board.flops_min", "must be >= 0")
    _require(b.flops_max is None or b.flops_max >= b.flops_min, "board.flops_max", "must be >= board.flops_min")
    _require(b.val_subset is None or (_is_int(b.val_subset) and b.val_subset >= 1), "board.val_subset",
             "must be null or >= 1")
    _require(_is_int(e.num_paths) and e.num_paths >= 2, "eval.num_paths", "must be >= 2")
    _require(len(e.scratch.seeds) >= 1, "eval.scratch.seeds", "needs at least one seed")
    _require(e.scratch.steps >= 0, "eval.scratch.steps", "must be >= 0")

    d = cfg.data
    _require((d.synthetic is None) != (d.idx is None), "data", "exactly one of 'synthetic' or 'idx' is required")
    if d.synthetic is not None:
        bad = set(d.synthetic) - _SYNTH_KEYS
        _require(not bad, f"data.synthetic.{sorted(bad)[0] if bad else ''}", "unknown field")
        _require(d.synthetic.get("classes", 4) >= 2, "data.synthetic.classes", "must be >= 2")
        n_val = d.synthetic.get("n_val", 512)
        _require(b.val_subset is None or b.val_subset <= n_val, "board.val_subset",
                 "larger than the validation split")
    else:
        bad = set(d.idx) - _IDX_KEYS
        _require(not bad, f"data.idx.{sorted(bad)[0] if bad else ''}", "unknown field")
        for key in ("train_images", "train_labels", "val_images", "val_labels"):
            _require(key in d.idx, f"data.idx.{key}", "missing")
            if check_paths:
                _require(Path(d.idx[key]).exists(), f"data.idx.{key}", f"file not found: {d.idx[key]}")
    return cfg


def from_dict(raw: dict, check_paths: bool = True) -> RunConfig:
    if not isinstance(raw, dict) or "data" not in raw:
        raise ConfigError("data: missing (a dataset source is required)")
    return validate(_build(RunConfig, raw, ""), check_paths)


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return from_dict(raw)


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2) + "\n")


def replace(cfg: RunConfig, **dotted) -> RunConfig:
    """Copy of ``cfg`` with dotted overrides, e.g. ``replace(cfg, **{"board.size": 5})``."""
    raw = to_dict(cfg)
    for key, value in dotted.items():
        node = raw
        *parents, leaf = key.split(".")
        for p in parents:
            node = node[p]
        if leaf not in node:
            raise ConfigError(f"{key}: unknown field")
        node[leaf] = value
    return from_dict(raw, check_paths=False)
