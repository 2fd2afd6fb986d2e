"""Sobel gradient magnitude, residual spatial-gradient blocks and the
single-frame backbone that predicts a coarse depth map per frame."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .tensor import Tensor

SOBEL_HORIZONTAL = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_VERTICAL = SOBEL_HORIZONTAL.T.copy()
SOBEL_HORIZONTAL.flags.writeable = False
SOBEL_VERTICAL.flags.writeable = False


def sobel_responses(x: Tensor) -> tuple[Tensor, Tensor]:
    return T.depthwise_conv3x3(x, SOBEL_HORIZONTAL), T.depthwise_conv3x3(x, SOBEL_VERTICAL)


def gradient_magnitude(x: Tensor) -> Tensor:
    """Squared Sobel magnitude F_hor(x)^2 + F_ver(x)^2 (no square root)."""
    gh, gv = sobel_responses(x)
    return T.square(gh) + T.square(gv)


# --------------------------------------------------------------------------
# residual spatial gradient block


def init_rsgb(params: dict, prefix: str, rng: np.random.Generator, in_ch: int, out_ch: int) -> None:
    params[f"{prefix}.w"] = T.init_conv(rng, out_ch, in_ch, 3, 3)
    params[f"{prefix}.proj"] = T.init_conv(rng, out_ch, in_ch, 1, 1)
    params[f"{prefix}.grad_scale"] = np.ones(out_ch)
    params[f"{prefix}.grad_shift"] = np.zeros(out_ch)
    params[f"{prefix}.out_scale"] = np.ones(out_ch)
    params[f"{prefix}.out_shift"] = np.zeros(out_ch)


def rsgb_forward(p: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    """y = relu(N(conv3x3(x) + N(gradient_magnitude(conv1x1(x)))))."""
    w = p[f"{prefix}.w"]
    if x.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"rsgb {prefix}: input shape {x.shape} does not match block input channels {w.shape[1]}")
    main = T.conv2d(x, w)
    x_proj = T.conv2d(x, p[f"{prefix}.proj"])
    grad = T.normalize_channels(gradient_magnitude(x_proj), p[f"{prefix}.grad_scale"], p[f"{prefix}.grad_shift"])
    return T.relu(T.normalize_channels(main + grad, p[f"{prefix}.out_scale"], p[f"{prefix}.out_shift"]))


# --------------------------------------------------------------------------
# backbone


@dataclass(frozen=True)
class BackboneConfig:
    input_size: int = 256
    depth_size: int = 32
    stem_channels: int = 64
    channels: tuple[int, int, int] = (128, 196, 128)
    blocks_per_level: tuple[int, int, int] = (2, 2, 2)
    head_channels: int = 64

    def __post_init__(self):
        if len(self.channels) != len(self.blocks_per_level):
            raise ValueError("channels and blocks_per_level must have one entry per level")
        if any(b < 1 for b in self.blocks_per_level):
            raise ValueError("each level needs at least one block")
        if self.input_size % self.depth_size:
            raise ValueError(f"input size {self.input_size} not divisible by depth size {self.depth_size}")
        ratio = self.input_size // self.depth_size
        n_pools = ratio.bit_length() - 1
        if 1 << n_pools != ratio or n_pools > len(self.channels):
            raise ValueError(
                f"input/depth ratio {ratio} must be a power of two reachable with "
                f"{len(self.channels)} pooling stages"
            )

    @property
    def pool_after(self) -> tuple[bool, ...]:
        """Which levels end with a 2x2 pool (the last ones)."""
        n = len(self.channels)
        k = (self.input_size // self.depth_size).bit_length() - 1
        return tuple(i >= n - k for i in range(n))

    @classmethod
    def desk(cls) -> "BackboneConfig":
        return cls(input_size=64, depth_size=16, stem_channels=8, channels=(8, 12, 8),
                   blocks_per_level=(1, 1, 1), head_channels=8)


class BackboneOutput(NamedTuple):
    depth: Tensor  # (B, 1, D, D) in [0, 1]
    levels: list[Tensor]  # per-level features after optional pooling


def pool_to(x: Tensor, size: int) -> Tensor:
    while x.shape[2] > size:
        x = T.max_pool2x2(x)
    if x.shape[2] != size:
        raise ValueError(f"cannot pool spatial size {x.shape[2]} down to {size}")
    return x


@dataclass
class Backbone:
    cfg: BackboneConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, cfg: BackboneConfig, seed: int = 0) -> "Backbone":
        rng = np.random.default_rng(seed)
        p: dict[str, np.ndarray] = {}
        p["stem.w"] = T.init_conv(rng, cfg.stem_channels, 3, 3, 3)
        p["stem.scale"] = np.ones(cfg.stem_channels)
        p["stem.shift"] = np.zeros(cfg.stem_channels)
        in_ch = cfg.stem_channels
        for lvl, (ch, nb) in enumerate(zip(cfg.channels, cfg.blocks_per_level)):
            for b in range(nb):
                init_rsgb(p, f"level{lvl}.block{b}", rng, in_ch, ch)
                in_ch = ch
        cat = sum(cfg.channels)
        p["head.w"] = T.init_conv(rng, cfg.head_channels, cat, 3, 3)
        p["head.scale"] = np.ones(cfg.head_channels)
        p["head.shift"] = np.zeros(cfg.head_channels)
        p["head.out_w"] = T.init_conv(rng, 1, cfg.head_channels, 1, 1)
        p["head.out_b"] = np.zeros(1)
        return cls(cfg, p)

    def tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(v, name=k) for k, v in self.params.items()}

    def forward(self, frames, p: dict[str, Tensor] | None = None) -> BackboneOutput:
        """Coarse depth for a batch of RGB frames (B, 3, H, W)."""
        cfg = self.cfg
        p = self.tensors() if p is None else p
        x = T.as_tensor(frames)
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (cfg.input_size, cfg.input_size):
            raise ValueError(
                f"backbone expects (B, 3, {cfg.input_size}, {cfg.input_size}) frames, got {x.shape}"
            )
        x = T.relu(T.normalize_channels(T.conv2d(x, p["stem.w"]), p["stem.scale"], p["stem.shift"]))
        levels = []
        for lvl, (nb, pool) in enumerate(zip(cfg.blocks_per_level, cfg.pool_after)):
            for b in range(nb):
                x = rsgb_forward(p, f"level{lvl}.block{b}", x)
            if pool:
                x = T.max_pool2x2(x)
            levels.append(x)
        cat = T.concat([pool_to(f, cfg.depth_size) for f in levels], axis=1)
        h = T.relu(T.normalize_channels(T.conv2d(cat, p["head.w"]), p["head.scale"], p["head.shift"]))
        depth = T.sigmoid(T.conv2d(h, p["head.out_w"], p["head.out_b"]))
        return BackboneOutput(depth, levels)

    def predict(self, frame) -> np.ndarray:
        """Depth map (D, D) for one frame given as (3, H, W) or (1, 3, H, W)."""
        arr = np.asarray(frame.data if isinstance(frame, Tensor) else frame, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None]
        return self.forward(arr).depth.data[0, 0].copy()
