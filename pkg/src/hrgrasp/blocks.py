"""Composite network blocks: stem, residual block and the cross-resolution
fuse layer, plus He-scheme parameter initialization.

Parameters live in a :class:`BlockParams` bag keyed by dotted names
("stem.conv1.weight", "stage3.fuse.d0_2.s1.gamma", ...). Forward helpers are
pure functions of (bag, prefix, inputs) apart from batch-norm running stats,
which train-mode forward updates in place.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import BNState, Tensor


class BlockParams:
    """Named parameter tensors and batch-norm running stats for a (sub)network."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.tensors: dict[str, Tensor] = {}
        self.bn: dict[str, BNState] = {}

    def add(self, name: str, arr: np.ndarray, requires_grad: bool = True) -> Tensor:
        if name in self.tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(arr.astype(np.float32), requires_grad=requires_grad, name=name)
        self.tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def param_count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All learnable tensors plus BN running stats, in insertion order."""
        out: dict[str, np.ndarray] = {n: t.data for n, t in self.tensors.items()}
        for n, st in self.bn.items():
            out[f"{n}.running_mean"] = st.mean
            out[f"{n}.running_var"] = st.var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.tensors.items():
            src = arrays[name]
            if tuple(src.shape) != t.shape:
                raise ValueError(f"{name}: checkpoint shape {src.shape} != {t.shape}")
            t.data = src.astype(np.float32).copy()
        for name, st in self.bn.items():
            st.mean = arrays[f"{name}.running_mean"].astype(np.float32).copy()
            st.var = arrays[f"{name}.running_var"].astype(np.float32).copy()


def he_weight(rng: np.random.Generator, cout: int, cin: int, k: int) -> np.ndarray:
    """Fan-in-scaled zero-mean normal init: std = sqrt(2 / (k*k*cin))."""
    std = np.sqrt(2.0 / (k * k * cin))
    return rng.normal(0.0, std, size=(cout, cin, k, k))


def init_conv(bag: BlockParams, prefix: str, cout: int, cin: int, k: int,
              rng: np.random.Generator) -> None:
    bag.add(f"{prefix}.weight", he_weight(rng, cout, cin, k))
    bag.add(f"{prefix}.bias", np.zeros((1, cout, 1, 1)))


def init_bn(bag: BlockParams, prefix: str, channels: int) -> None:
    bag.add(f"{prefix}.gamma", np.ones((1, channels, 1, 1)))
    bag.add(f"{prefix}.beta", np.zeros((1, channels, 1, 1)))
    bag.bn[prefix] = BNState(channels)


def conv_unit(bag: BlockParams, prefix: str, x: Tensor, stride: int, padding: int,
              training: bool, momentum: float = 0.1, activate: bool = True) -> Tensor:
    """conv -> BN (-> ReLU) with parameters under ``prefix``."""
    y = T.conv2d(x, bag[f"{prefix}.weight"], bag[f"{prefix}.bias"],
                 stride=stride, padding=padding)
    y = T.batchnorm2d(y, bag[f"{prefix}.gamma"], bag[f"{prefix}.beta"],
                      bag.bn[prefix], momentum=momentum, training=training)
    return T.relu(y) if activate else y


def init_conv_bn(bag: BlockParams, prefix: str, cout: int, cin: int, k: int,
                 rng: np.random.Generator) -> None:
    init_conv(bag, prefix, cout, cin, k, rng)
    init_bn(bag, prefix, cout)


# ---------------------------------------------------------------------------
# Stem: two stride-2 conv->BN->ReLU units, quarter resolution out
# ---------------------------------------------------------------------------


def init_stem(bag: BlockParams, prefix: str, cin: int, c0: int,
              rng: np.random.Generator) -> None:
    init_conv_bn(bag, f"{prefix}.conv1", c0, cin, 3, rng)
    init_conv_bn(bag, f"{prefix}.conv2", c0, c0, 3, rng)


def stem(bag: BlockParams, prefix: str, x: Tensor, training: bool,
         momentum: float = 0.1) -> Tensor:
    _, _, h, w = x.shape
    if h % 4 or w % 4:
        raise T.ShapeError(f"stem input size {h}x{w} must be divisible by 4")
    y = conv_unit(bag, f"{prefix}.conv1", x, 2, 1, training, momentum)
    return conv_unit(bag, f"{prefix}.conv2", y, 2, 1, training, momentum)


# ---------------------------------------------------------------------------
# Residual block: out = ReLU(x + conv->BN->ReLU->conv->BN (x))
# ---------------------------------------------------------------------------


def init_residual(bag: BlockParams, prefix: str, channels: int,
                  rng: np.random.Generator) -> None:
    init_conv_bn(bag, f"{prefix}.conv1", channels, channels, 3, rng)
    init_conv_bn(bag, f"{prefix}.conv2", channels, channels, 3, rng)


def residual_block(bag: BlockParams, prefix: str, x: Tensor, training: bool,
                   momentum: float = 0.1) -> Tensor:
    c = x.shape[1]
    if bag[f"{prefix}.conv1.weight"].shape[1] != c:
        raise T.ShapeError(
            f"residual block {prefix} expects "
            f"{bag[f'{prefix}.conv1.weight'].shape[1]} channels, got {c}"
        )
    y = conv_unit(bag, f"{prefix}.conv1", x, 1, 1, training, momentum)
    y = conv_unit(bag, f"{prefix}.conv2", y, 1, 1, training, momentum, activate=False)
    return T.relu(T.add(x, y))


# ---------------------------------------------------------------------------
# Fuse layer: all-to-all exchange between resolution branches
# ---------------------------------------------------------------------------
#
# Output branch i = ReLU(sum_j T_{j->i}(branch_j)) with
#   T_{i->i} identity,
#   T_{j->i}, j < i: (i-j) chained stride-2 3x3 conv->BN units (channel count
#     changes to the target's on the last unit),
#   T_{j->i}, j > i: bilinear x2^(j-i) then 1x1 conv->BN.


def init_fuse(bag: BlockParams, prefix: str, channels: Sequence[int],
              rng: np.random.Generator) -> None:
    nb = len(channels)
    for i in range(nb):
        for j in range(nb):
            if j == i:
                continue
            if j < i:
                # intermediate steps keep the source channel count; the last
                # step maps to the target's
                for s in range(i - j):
                    cout = channels[i] if s == i - j - 1 else channels[j]
                    init_conv_bn(bag, f"{prefix}.d{j}_{i}.s{s}", cout, channels[j], 3, rng)
            else:
                init_conv_bn(bag, f"{prefix}.u{j}_{i}", channels[i], channels[j], 1, rng)


def fuse_layer(bag: BlockParams, prefix: str, branches: Sequence[Tensor],
               training: bool, momentum: float = 0.1) -> list[Tensor]:
    nb = len(branches)
    if nb < 2:
        raise T.ShapeError("fuse_layer needs at least 2 branches")
    outs = []
    for i in range(nb):
        total = branches[i]
        for j in range(nb):
            if j == i:
                continue
            if j < i:
                y = branches[j]
                for s in range(i - j):
                    y = conv_unit(bag, f"{prefix}.d{j}_{i}.s{s}", y, 2, 1,
                                  training, momentum, activate=False)
            else:
                y = T.bilinear_upsample(branches[j], 2 ** (j - i))
                y = conv_unit(bag, f"{prefix}.u{j}_{i}", y, 1, 0,
                              training, momentum, activate=False)
            total = T.add(total, y)
        outs.append(T.relu(total))
    return outs


# ---------------------------------------------------------------------------
# Generic init entry point
# ---------------------------------------------------------------------------

_BLOCK_KINDS = {"stem", "residual", "fuse", "conv_bn"}


def init_params(block_spec: dict, seed: int) -> BlockParams:
    """Build a fresh parameter bag for one block described by ``block_spec``.

    block_spec["kind"] selects the block type; remaining keys are its sizes,
    e.g. {"kind": "stem", "cin": 4, "c0": 18} or
    {"kind": "fuse", "channels": [18, 36]}. Deterministic for a given seed.
    """
    kind = block_spec.get("kind")
    if kind not in _BLOCK_KINDS:
        raise ValueError(f"unknown block kind {kind!r}")
    bag = BlockParams(seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    prefix = block_spec.get("prefix", kind)
    if kind == "stem":
        init_stem(bag, prefix, block_spec["cin"], block_spec["c0"], rng)
    elif kind == "residual":
        init_residual(bag, prefix, block_spec["channels"], rng)
    elif kind == "fuse":
        init_fuse(bag, prefix, block_spec["channels"], rng)
    elif kind == "conv_bn":
        init_conv_bn(bag, prefix, block_spec["cout"], block_spec["cin"],
                     block_spec.get("k", 3), rng)
    return bag
