"""The four-stage parallel-branch grasp network.

The network keeps a high-resolution branch alive end to end: a stem reduces
the input to quarter resolution, each stage adds one coarser branch via a
stride-2 transition, residual blocks run per branch, and a fuse layer
exchanges information across all resolutions after every stage. The head
restores full resolution and emits four per-pixel maps: grasp quality,
sin/cos of twice the grasp angle, and normalized jaw width.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .blocks import (
    BlockParams,
    conv_unit,
    fuse_layer,
    init_conv,
    init_conv_bn,
    init_fuse,
    init_residual,
    init_stem,
    residual_block,
    stem,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .tensor import Tensor

HEAD_VARIANTS = ("fused", "highest_only")


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 4
    stages: int = 4
    branch_channels: tuple[int, ...] = (18, 36, 72, 144)
    blocks_per_stage: tuple[int, ...] = (1, 1, 2, 2)
    head_variant: str = "fused"
    input_size: tuple[int, int] = (224, 224)
    bn_momentum: float = 0.1

    def validate(self) -> None:
        if self.input_channels not in (1, 3, 4):
            raise ValueError(f"input_channels must be 1, 3 or 4, got {self.input_channels}")
        if self.stages != 4:
            raise ValueError(f"stages must be 4, got {self.stages}")
        if len(self.branch_channels) != 4 or any(
            b >= a for a, b in zip(self.branch_channels[1:], self.branch_channels)
        ):
            raise ValueError(
                f"branch_channels must be 4 strictly increasing ints, got {self.branch_channels}"
            )
        if len(self.blocks_per_stage) != 4 or min(self.blocks_per_stage) < 1:
            raise ValueError(f"blocks_per_stage must be 4 positive ints, got {self.blocks_per_stage}")
        if self.head_variant not in HEAD_VARIANTS:
            raise ValueError(f"head_variant must be one of {HEAD_VARIANTS}, got {self.head_variant!r}")
        h, w = self.input_size
        if h % 32 or w % 32 or h < 32 or w < 32:
            raise ValueError(f"input_size must be positive and divisible by 32, got {self.input_size}")
        if not 0 < self.bn_momentum < 1:
            raise ValueError(f"bn_momentum must be in (0, 1), got {self.bn_momentum}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("branch_channels", "blocks_per_stage", "input_size"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class MapsOut:
    """Batched network output: four (N, 1, H, W) tensors."""

    quality: Tensor
    sin2: Tensor
    cos2: Tensor
    width: Tensor

    def stacked(self) -> Tensor:
        return T.concat_channels([self.quality, self.sin2, self.cos2, self.width])

    def numpy_maps(self, i: int):
        """Per-image plain-array view (quality, sin2, cos2, width), each H x W."""
        return (
            self.quality.data[i, 0],
            self.sin2.data[i, 0],
            self.cos2.data[i, 0],
            self.width.data[i, 0],
        )


class Model:
    def __init__(self, config: ModelConfig, bag: BlockParams, seed: int):
        self.config = config
        self.bag = bag
        self.seed = seed

    # -- assembly ----------------------------------------------------------

    @property
    def head_channels(self) -> int:
        if self.config.head_variant == "fused":
            return sum(self.config.branch_channels)
        return self.config.branch_channels[0]

    def param_count(self) -> int:
        return self.bag.param_count()

    def parameters(self) -> dict[str, Tensor]:
        return self.bag.tensors

    # -- forward -----------------------------------------------------------

    def forward(self, x: Tensor, training: bool = False) -> MapsOut:
        cfg = self.config
        n, c, h, w = x.shape
        if c != cfg.input_channels:
            raise T.ShapeError(
                f"model expects {cfg.input_channels} input channels, got {c}"
            )
        if h % 32 or w % 32:
            raise T.ShapeError(f"input size {h}x{w} must be divisible by 32")
        mom = cfg.bn_momentum
        bag = self.bag

        y = stem(bag, "stem", x, training, mom)
        branches = [y]
        for s in range(1, cfg.stages + 1):
            branches = [
                self._run_blocks(f"stage{s}.branch{r}", b, cfg.blocks_per_stage[s - 1],
                                 training, mom)
                for r, b in enumerate(branches)
            ]
            if len(branches) >= 2:
                branches = fuse_layer(bag, f"stage{s}.fuse", branches, training, mom)
            if s < cfg.stages:
                branches.append(
                    conv_unit(bag, f"transition{s}", branches[-1], 2, 1, training, mom)
                )
        if cfg.head_variant == "fused":
            return self.head_fused(branches, training)
        return self.head_highest(branches, training)

    def _run_blocks(self, prefix: str, x: Tensor, count: int, training: bool,
                    mom: float) -> Tensor:
        for b in range(count):
            x = residual_block(self.bag, f"{prefix}.block{b}", x, training, mom)
        return x

    def head_fused(self, branches, training: bool) -> MapsOut:
        ups = [branches[0]]
        for r in range(1, len(branches)):
            ups.append(T.bilinear_upsample(branches[r], 2 ** r))
        feats = T.concat_channels(ups)
        return self._head_tail(feats)

    def head_highest(self, branches, training: bool) -> MapsOut:
        return self._head_tail(branches[0])

    def _head_tail(self, feats: Tensor) -> MapsOut:
        bag = self.bag
        feats = T.bilinear_upsample(feats, 4)
        # the four per-map filters are independent parameters; stacking them
        # runs the whole head as one convolution
        w_all = T._stack_filters(
            [bag["head.quality.weight"], bag["head.sin.weight"],
             bag["head.cos.weight"], bag["head.width.weight"]]
        )
        b_all = T.concat_channels(
            [bag["head.quality.bias"], bag["head.sin.bias"],
             bag["head.cos.bias"], bag["head.width.bias"]]
        )
        logits = T.conv2d(feats, w_all, b_all, stride=1, padding=1)
        return MapsOut(
            quality=T.sigmoid(T.slice_channels(logits, 0, 1)),
            sin2=T.tanh(T.slice_channels(logits, 1, 2)),
            cos2=T.tanh(T.slice_channels(logits, 2, 3)),
            width=T.sigmoid(T.slice_channels(logits, 3, 4)),
        )

    # -- persistence -------------------------------------------------------

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"config": self.config.to_dict(), "seed": self.seed}
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self.bag.state_arrays(), meta)

    @classmethod
    def load(cls, path) -> tuple["Model", dict]:
        arrays, meta = load_checkpoint(path)
        config = ModelConfig.from_dict(meta["config"])
        model = build(config, int(meta.get("seed", 0)))
        model.bag.load_state_arrays(arrays)
        return model, meta


def build(config: ModelConfig, seed: int = 0) -> Model:
    """Assemble the network deterministically for (config, seed)."""
    config.validate()
    bag = BlockParams(seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    ch = config.branch_channels

    init_stem(bag, "stem", config.input_channels, ch[0], rng)
    for s in range(1, config.stages + 1):
        for r in range(s):
            for b in range(config.blocks_per_stage[s - 1]):
                init_residual(bag, f"stage{s}.branch{r}.block{b}", ch[r], rng)
        if s >= 2:
            init_fuse(bag, f"stage{s}.fuse", ch[:s], rng)
        if s < config.stages:
            init_conv_bn(bag, f"transition{s}", ch[s], ch[s - 1], 3, rng)

    head_cin = sum(ch) if config.head_variant == "fused" else ch[0]
    for name in ("quality", "sin", "cos", "width"):
        init_conv(bag, f"head.{name}", 1, head_cin, 3, rng)
    return Model(config, bag, seed)
