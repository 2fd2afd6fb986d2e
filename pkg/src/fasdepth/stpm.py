"""Short-term spatio-temporal blocks, ConvGRU propagation, temporal depth
head and coarse/temporal depth refinement."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .backbone import gradient_magnitude
from .losses import fcs_forward, init_fcs
from .tensor import Tensor

DEFAULT_ALPHA = 0.6


@dataclass(frozen=True)
class StpmConfig:
    level_channels: tuple[int, ...] = (128, 196, 128)
    depth_size: int = 32
    compress_channels: int = 32
    fuse_channels: int = 64
    hidden_channels: int = 64
    fc_hidden: int = 128
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        # out-of-range alpha is clamped
        object.__setattr__(self, "alpha", min(max(float(self.alpha), 0.0), 1.0))

    @classmethod
    def desk(cls, level_channels=(8, 12, 8), depth_size: int = 16) -> "StpmConfig":
        return cls(level_channels=tuple(level_channels), depth_size=depth_size, compress_channels=4,
                   fuse_channels=8, hidden_channels=8, fc_hidden=32)


# --------------------------------------------------------------------------
# STSTB


def ststb_forward(p: dict[str, Tensor], level: int, feat_t: Tensor, feat_next: Tensor,
                  prev_level: Tensor | None = None) -> Tensor:
    """Fuse [F(t), F_S(t), F_S(t+dt), F_T(t), previous level] with a 1x1 conv.

    A missing previous level is replaced by zeros; a larger one is max pooled
    down to the current resolution.
    """
    if feat_t.shape != feat_next.shape:
        raise ValueError(f"ststb: temporal pair shape mismatch {feat_t.shape} vs {feat_next.shape}")
    pre = f"ststb{level}"
    w_fuse = p[f"{pre}.fuse"]
    fuse_ch = w_fuse.shape[0]
    comp_t = T.conv2d(feat_t, p[f"{pre}.compress"])
    comp_next = T.conv2d(feat_next, p[f"{pre}.compress"])
    temporal = comp_next - comp_t
    B, _, H, W = comp_t.shape
    if prev_level is None:
        prev = Tensor(np.zeros((B, fuse_ch, H, W)))
    else:
        prev = prev_level
        while prev.shape[2] > H:
            prev = T.max_pool2x2(prev)
        if prev.shape != (B, fuse_ch, H, W):
            raise ValueError(f"ststb: previous level shape {prev_level.shape} cannot match {(B, fuse_ch, H, W)}")
    cat = T.concat([comp_t, gradient_magnitude(comp_t), gradient_magnitude(comp_next), temporal, prev], axis=1)
    fused = T.normalize_channels(T.conv2d(cat, w_fuse), p[f"{pre}.scale"], p[f"{pre}.shift"])
    return T.relu(fused)


# --------------------------------------------------------------------------
# ConvGRU


class GruStep(NamedTuple):
    hidden: Tensor
    reset: Tensor
    update: Tensor
    candidate: Tensor


def convgru_step(p: dict[str, Tensor], h_prev: Tensor, x_t: Tensor, prefix: str = "gru") -> GruStep:
    """R = sig(K_r*[H,X]); U = sig(K_u*[H,X]); C = tanh(K_h*[R.H, X]);
    H' = (1 - U).H + U.C, with * a same-padded convolution."""
    if h_prev.ndim != 4 or x_t.ndim != 4 or h_prev.shape[0] != x_t.shape[0] or h_prev.shape[2:] != x_t.shape[2:]:
        raise ValueError(f"convgru: hidden shape {h_prev.shape} incompatible with input shape {x_t.shape}")
    hx = T.concat([h_prev, x_t], axis=1)
    w_r = p[f"{prefix}.w_r"]
    if hx.shape[1] != w_r.shape[1] or h_prev.shape[1] != w_r.shape[0]:
        raise ValueError(f"convgru: hidden {h_prev.shape} / input {x_t.shape} do not fit kernels {w_r.shape}")
    r = T.sigmoid(T.conv2d(hx, w_r, p[f"{prefix}.b_r"]))
    u = T.sigmoid(T.conv2d(hx, p[f"{prefix}.w_u"], p[f"{prefix}.b_u"]))
    c = T.tanh_op(T.conv2d(T.concat([r * h_prev, x_t], axis=1), p[f"{prefix}.w_h"], p[f"{prefix}.b_h"]))
    h = (1.0 - u) * h_prev + u * c
    return GruStep(h, r, u, c)


def init_convgru(params: dict, rng: np.random.Generator, in_ch: int, hidden: int, prefix: str = "gru") -> None:
    for gate in ("r", "u", "h"):
        params[f"{prefix}.w_{gate}"] = T.init_conv(rng, hidden, hidden + in_ch, 3, 3)
        params[f"{prefix}.b_{gate}"] = np.zeros(hidden)


# --------------------------------------------------------------------------
# refinement


def refine_depth(d_single, d_multi, alpha: float = DEFAULT_ALPHA):
    """(1 - alpha) * d_single + alpha * d_multi for arrays or Tensors."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if isinstance(d_single, Tensor) or isinstance(d_multi, Tensor):
        a, b = T.as_tensor(d_single), T.as_tensor(d_multi)
        if a.shape != b.shape:
            raise ValueError(f"refine_depth: shape mismatch {a.shape} vs {b.shape}")
        if alpha == 0.0:
            return a
        if alpha == 1.0:
            return b
        return T.scale(a, 1.0 - alpha) + T.scale(b, alpha)
    a, b = np.asarray(d_single, float), np.asarray(d_multi, float)
    if a.shape != b.shape:
        raise ValueError(f"refine_depth: shape mismatch {a.shape} vs {b.shape}")
    if alpha == 0.0:
        return a.copy()
    if alpha == 1.0:
        return b.copy()
    return (1.0 - alpha) * a + alpha * b


# --------------------------------------------------------------------------
# full module


class StpmOutput(NamedTuple):
    multi: list[Tensor]  # N_f - 1 temporal depth maps (B, 1, D, D)
    refined: list[Tensor]
    probs: Tensor  # (B, 2): spoof, live


@dataclass
class Stpm:
    cfg: StpmConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, cfg: StpmConfig, seed: int = 0) -> "Stpm":
        rng = np.random.default_rng(seed)
        p: dict[str, np.ndarray] = {}
        c, f = cfg.compress_channels, cfg.fuse_channels
        for lvl, ch in enumerate(cfg.level_channels):
            p[f"ststb{lvl}.compress"] = T.init_conv(rng, c, ch, 1, 1)
            p[f"ststb{lvl}.fuse"] = T.init_conv(rng, f, 4 * c + f, 1, 1)
            p[f"ststb{lvl}.scale"] = np.ones(f)
            p[f"ststb{lvl}.shift"] = np.zeros(f)
        init_convgru(p, rng, f, cfg.hidden_channels)
        p["tdepth.w"] = T.init_conv(rng, 1, cfg.hidden_channels, 1, 1)
        p["tdepth.b"] = np.zeros(1)
        p.update(init_fcs(rng, cfg.depth_size, cfg.fc_hidden))
        return cls(cfg, p)

    def tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(v, name=k) for k, v in self.params.items()}

    def forward(self, levels: Sequence[Sequence[Tensor]], d_single: Sequence[Tensor],
                p: dict[str, Tensor] | None = None) -> StpmOutput:
        """Run over a clip.

        ``levels[t]`` holds the backbone's per-level features for frame t and
        ``d_single[t]`` its coarse depth; both cover N_f frames. Produces
        N_f - 1 temporal and refined maps, one per consecutive frame pair.
        """
        p = self.tensors() if p is None else p
        n = len(levels)
        if n < 2 or len(d_single) < n - 1:
            raise ValueError(f"need at least 2 frames and matching coarse maps, got {n} / {len(d_single)}")
        if any(len(lv) != len(self.cfg.level_channels) for lv in levels):
            raise ValueError("each frame needs one feature map per backbone level")
        h = None
        multi, refined = [], []
        for t in range(n - 1):
            x = None
            for lvl in range(len(self.cfg.level_channels)):
                x = ststb_forward(p, lvl, levels[t][lvl], levels[t + 1][lvl], x)
            if x.shape[2] != self.cfg.depth_size:
                raise ValueError(f"last STSTB level is {x.shape[2]}x{x.shape[3]}, expected depth size {self.cfg.depth_size}")
            if h is None:
                h = Tensor(np.zeros((x.shape[0], self.cfg.hidden_channels) + x.shape[2:]))
            h = convgru_step(p, h, x).hidden
            d_multi = T.sigmoid(T.conv2d(h, p["tdepth.w"], p["tdepth.b"]))
            multi.append(d_multi)
            refined.append(refine_depth(T.as_tensor(d_single[t]), d_multi, self.cfg.alpha))
        probs = fcs_forward(p, T.mean_of(refined))
        return StpmOutput(multi, refined, probs)
