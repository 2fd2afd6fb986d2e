"""Depth and binary losses.

Depth maps may be passed as (D, D) arrays or as (B, 1, D, D) tensors.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

PROB_CLAMP = 1e-12


def _make_cdl_kernels() -> np.ndarray:
    kernels = []
    for r in range(3):
        for c in range(3):
            if (r, c) == (1, 1):
                continue
            k = np.zeros((3, 3))
            k[1, 1] = -1.0
            k[r, c] = 1.0
            kernels.append(k)
    return np.stack(kernels)


# eight (3, 3) masks, +1 neighbours in row-major order starting top-left
CDL_KERNELS = _make_cdl_kernels()


def check_cdl_kernels(kernels: np.ndarray | None = None) -> None:
    k = CDL_KERNELS if kernels is None else kernels
    if k.shape != (8, 3, 3):
        raise ValueError(f"expected 8 kernels of 3x3, got {k.shape}")
    for i, ki in enumerate(k):
        if ki.sum() != 0:
            raise ValueError(f"CDL kernel {i} sums to {ki.sum()}, not 0")
        if np.count_nonzero(ki) != 2 or ki[1, 1] != -1:
            raise ValueError(f"CDL kernel {i} must have -1 at the centre and one +1 neighbour")
    positions = {tuple(np.argwhere(ki == 1)[0]) for ki in k}
    if len(positions) != 8:
        raise ValueError("CDL kernels must cover eight distinct neighbours")


check_cdl_kernels()


def _as_map(d) -> Tensor:
    t = T.as_tensor(d)
    if t.ndim == 2:
        t = T.reshape(t, (1, 1) + t.shape)
    if t.ndim != 4 or t.shape[1] != 1:
        raise ValueError(f"depth map must be (D, D) or (B, 1, D, D), got {t.shape}")
    return t


def _reduce(sq: Tensor, reduction: str) -> Tensor:
    if reduction == "sum":
        return T.sum_all(sq)
    if reduction == "mean":
        return T.mean_all(sq)
    raise ValueError(f"unknown reduction {reduction!r}")


def edl(d_pred, d_gt, reduction: str = "sum") -> Tensor:
    """Squared Euclidean distance between predicted and target depth."""
    p, g = _as_map(d_pred), _as_map(d_gt)
    if p.shape != g.shape:
        raise ValueError(f"edl: shape mismatch {p.shape} vs {g.shape}")
    return _reduce(T.square(p - g), reduction)


def contrast(d: Tensor, kernels: np.ndarray | None = None) -> Tensor:
    """All eight neighbour-minus-centre responses, zero padded: (B, 8, D, D)."""
    k = CDL_KERNELS if kernels is None else kernels
    return T.conv2d(d, Tensor(k[:, None]), padding="same")


def cdl(d_pred, d_gt, reduction: str = "sum") -> Tensor:
    """Contrastive depth loss: squared error of the eight contrast responses."""
    p, g = _as_map(d_pred), _as_map(d_gt)
    if p.shape != g.shape:
        raise ValueError(f"cdl: shape mismatch {p.shape} vs {g.shape}")
    return _reduce(T.square(contrast(p) - contrast(g)), reduction)


def edl_grad(d_pred: np.ndarray, d_gt: np.ndarray) -> np.ndarray:
    return 2.0 * (np.asarray(d_pred, float) - np.asarray(d_gt, float))


def cdl_grad(d_pred: np.ndarray, d_gt: np.ndarray) -> np.ndarray:
    """d cdl / d pred for (D, D) maps, via transposed correlation.

    Written directly in numpy so it can be compared with the tape.
    """
    diff = np.asarray(d_pred, float) - np.asarray(d_gt, float)
    H, W = diff.shape
    pad = np.pad(diff, 1)
    grad = np.zeros((H + 2, W + 2))
    for k in CDL_KERNELS:
        resp = np.zeros((H, W))
        for i in range(3):
            for j in range(3):
                resp += k[i, j] * pad[i : i + H, j : j + W]
        for i in range(3):
            for j in range(3):
                grad[i : i + H, j : j + W] += 2.0 * k[i, j] * resp
    return grad[1:-1, 1:-1]


# --------------------------------------------------------------------------
# binary branch


def init_fcs(rng: np.random.Generator, depth_size: int, hidden: int = 128) -> dict[str, np.ndarray]:
    n = depth_size * depth_size
    return {
        "fcs.w1": T.init_dense(rng, n, hidden),
        "fcs.b1": np.zeros(hidden),
        "fcs.w2": T.init_dense(rng, hidden, 2),
        "fcs.b2": np.zeros(2),
    }


def fcs_forward(p: dict[str, Tensor], d_avg: Tensor) -> Tensor:
    """Two dense layers and a softmax over (spoof, live). Returns (B, 2)."""
    d = _as_map(d_avg)
    flat = T.reshape(d, (d.shape[0], d.shape[2] * d.shape[3]))
    h = T.relu(T.linear(flat, p["fcs.w1"], p["fcs.b1"]))
    return T.softmax(T.linear(h, p["fcs.w2"], p["fcs.b2"]))


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean of -log(p[label]) with p clamped to [1e-12, 1 - 1e-12]."""
    probs = T.as_tensor(probs)
    if probs.ndim == 1:
        probs = T.reshape(probs, (1,) + probs.shape)
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if labels.shape != (probs.shape[0],) or np.any((labels < 0) | (labels > 1)):
        raise ValueError(f"labels must be 0/1 per batch row, got {labels}")
    logp = T.log(T.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP))
    onehot = np.zeros(probs.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return T.scale(T.sum_all(T.mul(logp, Tensor(onehot))), -1.0 / len(labels))


def binary_loss(d_refined_all, labels, fcs_params: dict[str, Tensor]) -> Tensor:
    """Cross-entropy of the dense head applied to the averaged refined maps."""
    maps = [_as_map(d) for d in d_refined_all]
    if not maps:
        raise ValueError("binary_loss: empty list of refined maps")
    return cross_entropy(fcs_forward(fcs_params, T.mean_of(maps)), labels)


def overall_loss(binary, edl_value, cdl_value, beta: float = 0.8):
    """beta * binary + (1 - beta) * (edl + cdl); works on floats or Tensors."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return beta * binary + (1.0 - beta) * (edl_value + cdl_value)
