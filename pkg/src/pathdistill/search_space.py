"""Choice-block layout, path encoding, sampling and multiply-add counting."""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .numerics import LayerSpec

PathSpec = tuple[int, ...]

_OP_RE = re.compile(r"^(?:mb(?P<mbk>\d+)_(?P<mbe>\d+)|res(?P<resk>\d+)|conv(?P<convk>\d+)|skip)$")


class SpaceError(ValueError):
    pass


@dataclass(frozen=True)
class OperatorSpec:
    family: str
    kernel: int = 0
    expansion: int = 0

    def __post_init__(self):
        fam = self.family
        if fam == "skip":
            if self.kernel or self.expansion:
                raise SpaceError("skip takes no kernel or expansion")
        elif fam == "mbconv":
            if self.kernel not in (3, 5, 7) or self.expansion not in (2, 4, 6):
                raise SpaceError(f"bad mbconv kernel/expansion {self.kernel}/{self.expansion}")
        elif fam == "resblock":
            if self.kernel != 3 or self.expansion:
                raise SpaceError("resblock kernel is fixed at 3")
        elif fam == "conv2d":
            if self.kernel not in (1, 3, 5) or self.expansion:
                raise SpaceError(f"conv2d kernel must be 1, 3 or 5, got {self.kernel}")
        else:
            raise SpaceError(f"unknown operator family {fam!r}")

    @classmethod
    def parse(cls, name: str) -> OperatorSpec:
        m = _OP_RE.match(name)
        if not m:
            raise SpaceError(f"cannot parse operator name {name!r}")
        if m["mbk"]:
            return cls("mbconv", int(m["mbk"]), int(m["mbe"]))
        if m["resk"]:
            return cls("resblock", int(m["resk"]))
        if m["convk"]:
            return cls("conv2d", int(m["convk"]))
        return cls("skip")

    @property
    def name(self) -> str:
        if self.family == "mbconv":
            return f"mb{self.kernel}_{self.expansion}"
        if self.family == "resblock":
            return f"res{self.kernel}"
        if self.family == "conv2d":
            return f"conv{self.kernel}"
        return "skip"

    @property
    def is_skip(self) -> bool:
        return self.family == "skip"

    def layers(self, cin: int, cout: int, stride: int) -> list[tuple[str, LayerSpec]]:
        """Named layer chain; ReLUs are implied after every layer but the last of mbconv."""
        if self.family == "mbconv":
            mid = cin * self.expansion
            return [
                ("expand", LayerSpec("conv2d", 1, 1, cin, mid)),
                ("dw", LayerSpec("depthwise_conv2d", self.kernel, stride, mid, mid)),
                ("project", LayerSpec("conv2d", 1, 1, mid, cout)),
            ]
        if self.family == "resblock":
            mid = max(cout // 2, 1)
            return [
                ("reduce", LayerSpec("conv2d", 1, 1, cin, mid)),
                ("conv", LayerSpec("conv2d", self.kernel, stride, mid, mid)),
                ("expand", LayerSpec("conv2d", 1, 1, mid, cout)),
            ]
        if self.family == "conv2d":
            return [("conv", LayerSpec("conv2d", self.kernel, stride, cin, cout))]
        return []

    def has_residual(self, cin: int, cout: int, stride: int) -> bool:
        return self.family in ("mbconv", "resblock") and stride == 1 and cin == cout


@dataclass(frozen=True)
class ChoiceBlock:
    index: int
    stage: int
    in_channels: int
    out_channels: int
    stride: int
    in_hw: int
    operators: tuple[OperatorSpec, ...]

    @property
    def out_hw(self) -> int:
        return (self.in_hw - 1) // self.stride + 1

    def skip_index(self):
        for i, op in enumerate(self.operators):
            if op.is_skip:
                return i
        return None


@dataclass(frozen=True)
class SpaceSpec:
    resolution: int
    in_channels: int
    classes: int
    stem: LayerSpec
    blocks: tuple[ChoiceBlock, ...]
    head_conv: LayerSpec | None
    classifier: LayerSpec

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def num_paths(self) -> int:
        return math.prod(len(b.operators) for b in self.blocks)

    @property
    def stem_hw(self) -> int:
        return self.stem.output_hw(self.resolution, self.resolution)[0]

    def validate_path(self, path) -> PathSpec:
        path = tuple(int(i) for i in path)
        if len(path) != self.num_blocks:
            raise SpaceError(f"path has {len(path)} choices, space has {self.num_blocks} blocks")
        for block, i in zip(self.blocks, path):
            if not 0 <= i < len(block.operators):
                raise SpaceError(f"choice {i} out of range for block {block.index}")
        return path


@dataclass
class StageConfig:
    channels: int
    repeat: int
    stride: int
    operators: list[str]


@dataclass
class SpaceConfig:
    """Layout knobs. The defaults describe a desk-scale space."""

    resolution: int = 16
    in_channels: int = 1
    classes: int = 4
    stem_channels: int = 8
    stem_kernel: int = 3
    stem_stride: int = 1
    head_channels: int = 32
    stages: list[StageConfig] = field(
        default_factory=lambda: [
            StageConfig(8, 1, 1, ["mb3_2", "mb3_4", "mb5_2", "mb5_4", "skip"]),
            StageConfig(16, 2, 2, ["mb3_2", "mb3_4", "mb5_2", "mb5_4", "skip"]),
            StageConfig(24, 2, 2, ["mb3_2", "mb3_4", "mb5_2", "mb5_4", "skip"]),
        ]
    )


def build_space(config: SpaceConfig) -> SpaceSpec:
    if config.resolution < 1 or config.in_channels < 1 or config.stem_channels < 1:
        raise SpaceError("resolution and channel counts must be positive")
    if config.classes < 2:
        raise SpaceError("need at least two classes")
    if config.stem_stride not in (1, 2):
        raise SpaceError("stem stride must be 1 or 2")
    stem = LayerSpec("conv2d", config.stem_kernel, config.stem_stride, config.in_channels, config.stem_channels)
    hw = stem.output_hw(config.resolution, config.resolution)[0]
    cin = config.stem_channels
    blocks = []
    for s_idx, stage in enumerate(config.stages):
        if stage.channels < 1:
            raise SpaceError(f"stage {s_idx}: channels must be positive")
        if stage.stride not in (1, 2):
            raise SpaceError(f"stage {s_idx}: stride must be 1 or 2")
        if stage.repeat < 1:
            raise SpaceError(f"stage {s_idx}: repeat must be >= 1")
        ops = tuple(OperatorSpec.parse(name) for name in stage.operators)
        if len(set(ops)) != len(ops):
            raise SpaceError(f"stage {s_idx}: duplicate operators")
        if all(op.is_skip for op in ops):
            raise SpaceError(f"stage {s_idx}: needs at least one non-skip operator")
        for r in range(stage.repeat):
            stride = stage.stride if r == 0 else 1
            block_ops = ops
            if stride != 1 or cin != stage.channels:
                # a lead block that reshapes its input cannot be an identity
                block_ops = tuple(op for op in ops if not op.is_skip)
            blocks.append(ChoiceBlock(len(blocks), s_idx, cin, stage.channels, stride, hw, block_ops))
            hw = (hw - 1) // stride + 1
            cin = stage.channels
    head_conv = None
    if config.head_channels:
        head_conv = LayerSpec("conv2d", 1, 1, cin, config.head_channels)
        cin = config.head_channels
    classifier = LayerSpec("dense", 1, 1, cin, config.classes)
    return SpaceSpec(config.resolution, config.in_channels, config.classes, stem, tuple(blocks), head_conv, classifier)


def sample_uniform(space: SpaceSpec, rng: np.random.Generator) -> PathSpec:
    return tuple(int(rng.integers(len(b.operators))) for b in space.blocks)


def sample_in_flops_range(space, rng, min_flops=0, max_flops=None, max_tries=1000) -> PathSpec:
    if max_flops is not None and min_flops > max_flops:
        raise SpaceError("min_flops exceeds max_flops")
    for _ in range(max_tries):
        path = sample_uniform(space, rng)
        f = count_flops(space, path)
        if f >= min_flops and (max_flops is None or f <= max_flops):
            return path
    raise SpaceError(f"no path within flops [{min_flops}, {max_flops}] after {max_tries} tries")


def layer_macs(layer: LayerSpec, in_hw: int) -> int:
    """Multiply-adds of one layer on a square ``in_hw`` map (biases excluded)."""
    if layer.kind == "dense":
        return layer.in_channels * layer.out_channels
    if layer.kind not in ("conv2d", "depthwise_conv2d"):
        return 0
    ho = layer.output_hw(in_hw, in_hw)[0]
    groups = layer.in_channels if layer.kind == "depthwise_conv2d" else 1
    return ho * ho * layer.out_channels * (layer.in_channels // groups) * layer.kernel**2


def operator_macs(block: ChoiceBlock, op: OperatorSpec) -> int:
    total, hw = 0, block.in_hw
    for _, layer in op.layers(block.in_channels, block.out_channels, block.stride):
        total += layer_macs(layer, hw)
        hw = layer.output_hw(hw, hw)[0]
    return total


def fixed_macs(space: SpaceSpec) -> int:
    """Stem plus head, the part every path shares."""
    total = layer_macs(space.stem, space.resolution)
    last_hw = space.blocks[-1].out_hw if space.blocks else space.stem_hw
    if space.head_conv is not None:
        total += layer_macs(space.head_conv, last_hw)
    return total + layer_macs(space.classifier, 1)


def count_flops(space: SpaceSpec, path) -> int:
    path = space.validate_path(path)
    return fixed_macs(space) + sum(operator_macs(b, b.operators[i]) for b, i in zip(space.blocks, path))


def enumerate_paths(space: SpaceSpec, cap: int = 4096) -> list[PathSpec]:
    if space.num_paths > cap:
        raise SpaceError(f"space has {space.num_paths} paths, more than cap {cap}")
    return [tuple(p) for p in itertools.product(*(range(len(b.operators)) for b in space.blocks))]


def encode(path) -> str:
    return "-".join(str(int(i)) for i in path)


def decode(text: str, space: SpaceSpec) -> PathSpec:
    if text == "":
        parts = []
    else:
        parts = text.split("-")
        if not all(p.isdigit() for p in parts):
            raise SpaceError(f"malformed path string {text!r}")
    return space.validate_path(int(p) for p in parts)


def describe(space: SpaceSpec, path) -> str:
    path = space.validate_path(path)
    return " ".join(b.operators[i].name for b, i in zip(space.blocks, path))


PAPER_OPERATORS = ["mb3_4", "mb3_6", "mb5_4", "mb5_6", "mb7_4", "mb7_6", "skip"]


def paper_space_config(operators=None, width_divisor: int = 1, resolution: int = 224,
                       classes: int = 1000, repeat: int = 4) -> SpaceConfig:
    """MobileNet-style layout with five searchable stages of ``repeat`` blocks.

    Channels are divided by ``width_divisor``. The fixed depthwise-separable
    layer after the stem and the 1280-wide pre-classifier conv are folded
    away, so flops are lower than the full-size network's.
    """
    ops = list(operators or PAPER_OPERATORS)
    d = width_divisor
    stages = [StageConfig(max(c // d, 1), repeat, s, ops) for c, s in ((24, 2), (40, 2), (80, 1), (96, 2), (192, 1))]
    return SpaceConfig(resolution=resolution, in_channels=3, classes=classes, stem_channels=max(16 // d, 1),
                       stem_stride=2, head_channels=max(320 // d, 1), stages=stages)
