"""Two-stage training at toy scale.

Stage 1 fits the backbone to per-frame depth with EDL + CDL. Stage 2 freezes
the backbone and fits the spatio-temporal module with the overall loss on
refined depth maps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import losses as L
from . import tensor as T
from .backbone import Backbone, BackboneConfig
from .metrics import MetricsReport, ScoreRecord, compute_metrics, fuse_score, sweep_thresholds
from .optim import EPS, RHO, adadelta_step, init_adadelta
from .stpm import Stpm, StpmConfig
from .synth import SynthConfig, SyntheticClip, make_dataset

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    lr: float = 1e-4
    batch_size: int = 48
    n_frames: int = 5
    interval: int = 3
    rho: float = RHO
    eps: float = EPS
    steps: int = 100
    seed: int = 0
    reduction: str = "sum"
    alpha: float = 0.6
    beta: float = 0.8

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.n_frames < 2:
            raise ValueError("n_frames must be >= 2")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"reduction must be 'sum' or 'mean', got {self.reduction!r}")
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must lie in [0, 1]")

    @classmethod
    def full(cls, stage: int, **kw) -> "TrainConfig":
        """Full-scale hyper-parameters."""
        base = dict(stage=stage, lr=1e-4 if stage == 1 else 1e-2, batch_size=48 if stage == 1 else 2)
        base.update(kw)
        return cls(**base)

    @classmethod
    def desk(cls, stage: int, **kw) -> "TrainConfig":
        """Toy-scale budget: small batches and larger Adadelta step multipliers
        so runs converge in minutes on one CPU."""
        base = dict(stage=stage, lr=1.0 if stage == 1 else 5.0, batch_size=4 if stage == 1 else 2,
                    steps=300 if stage == 1 else 1000)
        base.update(kw)
        return cls(**base)


def _check_loss(value: float, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss at step {step}")


# --------------------------------------------------------------------------
# stage 1


def stage1_loss(backbone: Backbone, p: dict[str, T.Tensor], frames: np.ndarray, depth: np.ndarray,
                reduction: str = "sum"):
    """Per-sample EDL and CDL averaged over the batch."""
    out = backbone.forward(frames, p)
    gt = depth[:, None]
    B = frames.shape[0]
    e = T.scale(L.edl(out.depth, gt, reduction), 1.0 / B)
    c = T.scale(L.cdl(out.depth, gt, reduction), 1.0 / B)
    return e, c


def train_stage1(cfg: TrainConfig, backbone: Backbone, dataset: Sequence[tuple[np.ndarray, np.ndarray]]):
    """Fit ``backbone`` to (frame (3,H,W), depth (D,D)) pairs.

    Returns a new Backbone and the loss curve: one row per step evaluated
    before that step's update, plus a final row after the last update.
    """
    if cfg.stage != 1:
        raise ValueError("train_stage1 needs a stage-1 config")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    frames = np.stack([f for f, _ in dataset])
    depths = np.stack([d for _, d in dataset])
    rng = np.random.default_rng(cfg.seed)
    params = {k: v.copy() for k, v in backbone.params.items()}
    state = init_adadelta(params)
    model = Backbone(backbone.cfg, params)
    n = len(dataset)
    curve = []
    for step in range(cfg.steps + 1):
        idx = rng.choice(n, size=cfg.batch_size, replace=n < cfg.batch_size)
        if step == cfg.steps:
            e, c = stage1_loss(model, model.tensors(), frames[idx], depths[idx], cfg.reduction)
            grads = None
        else:
            with T.GradTape() as tape:
                p = model.tensors()
                tape.watch(*p.values())
                e, c = stage1_loss(model, p, frames[idx], depths[idx], cfg.reduction)
                total = e + c
            g = T.backward(tape, total)
            grads = {k: g[t] for k, t in p.items()}
        ev, cv = e.item(), c.item()
        _check_loss(ev + cv, step)
        curve.append({"step": step, "edl": ev, "cdl": cv, "binary": 0.0, "overall": ev + cv})
        if grads is not None:
            params, state = adadelta_step(params, grads, state, cfg.rho, cfg.eps, cfg.lr)
            model = Backbone(backbone.cfg, params)
        if step % 50 == 0:
            log.info("stage1 step %d edl %.4f cdl %.4f", step, ev, cv)
    return model, curve


# --------------------------------------------------------------------------
# stage 2


@dataclass
class ClipFeatures:
    levels: list[list[T.Tensor]]  # per frame, per level, each (1, C, h, w)
    d_single: list[T.Tensor]  # per frame (1, 1, D, D)


def clip_features(backbone: Backbone, clip: SyntheticClip) -> ClipFeatures:
    """Frozen backbone pass over all frames of one clip (one batch)."""
    out = backbone.forward(clip.frames)
    n = clip.frames.shape[0]
    levels = [[T.Tensor(lv.data[t : t + 1]) for lv in out.levels] for t in range(n)]
    d_single = [T.Tensor(out.depth.data[t : t + 1]) for t in range(n)]
    return ClipFeatures(levels, d_single)


def _batch(feats: Sequence[ClipFeatures]) -> ClipFeatures:
    n = len(feats[0].levels)
    levels = [
        [T.Tensor(np.concatenate([f.levels[t][l].data for f in feats])) for l in range(len(feats[0].levels[t]))]
        for t in range(n)
    ]
    d_single = [T.Tensor(np.concatenate([f.d_single[t].data for f in feats])) for t in range(n)]
    return ClipFeatures(levels, d_single)


def stage2_loss(stpm: Stpm, p: dict[str, T.Tensor], feats: ClipFeatures, depth: np.ndarray,
                labels: np.ndarray, beta: float, reduction: str = "sum"):
    """(overall, edl, cdl, binary); depth terms averaged over transitions and clips."""
    out = stpm.forward(feats.levels, feats.d_single, p)
    B = depth.shape[0]
    n_t = len(out.refined)
    e_terms, c_terms = [], []
    for t, d_ref in enumerate(out.refined):
        gt = depth[:, t][:, None]
        e_terms.append(L.edl(d_ref, gt, reduction))
        c_terms.append(L.cdl(d_ref, gt, reduction))
    e = T.scale(sum(e_terms[1:], e_terms[0]), 1.0 / (n_t * B))
    c = T.scale(sum(c_terms[1:], c_terms[0]), 1.0 / (n_t * B))
    b = L.cross_entropy(out.probs, labels)
    return L.overall_loss(b, e, c, beta), e, c, b


def train_stage2(cfg: TrainConfig, backbone: Backbone, stpm: Stpm, clips: Sequence[SyntheticClip],
                 features: Sequence[ClipFeatures] | None = None):
    """Fit ``stpm`` on clips with ``backbone`` frozen; returns (Stpm, curve)."""
    if cfg.stage != 2:
        raise ValueError("train_stage2 needs a stage-2 config")
    if len(clips) == 0:
        raise ValueError("empty dataset")
    if any(c.frames.shape[0] != cfg.n_frames for c in clips):
        raise ValueError(f"every clip must have {cfg.n_frames} frames")
    feats = list(features) if features is not None else [clip_features(backbone, c) for c in clips]
    rng = np.random.default_rng(cfg.seed)
    params = {k: v.copy() for k, v in stpm.params.items()}
    state = init_adadelta(params)
    model = Stpm(replace(stpm.cfg, alpha=cfg.alpha), params)
    n = len(clips)
    curve = []
    for step in range(cfg.steps + 1):
        idx = rng.choice(n, size=cfg.batch_size, replace=n < cfg.batch_size)
        batch = _batch([feats[i] for i in idx])
        depth = np.stack([clips[i].depth for i in idx])
        labels = np.array([clips[i].label for i in idx])
        if step == cfg.steps:
            overall, e, c, b = stage2_loss(model, model.tensors(), batch, depth, labels, cfg.beta, cfg.reduction)
            grads = None
        else:
            with T.GradTape() as tape:
                p = model.tensors()
                tape.watch(*p.values())
                overall, e, c, b = stage2_loss(model, p, batch, depth, labels, cfg.beta, cfg.reduction)
            g = T.backward(tape, overall)
            grads = {k: g[t] for k, t in p.items()}
        row = {"step": step, "edl": e.item(), "cdl": c.item(), "binary": b.item(), "overall": overall.item()}
        _check_loss(row["overall"], step)
        curve.append(row)
        if grads is not None:
            params, state = adadelta_step(params, grads, state, cfg.rho, cfg.eps, cfg.lr)
            model = Stpm(model.cfg, params)
        if step % 50 == 0:
            log.info("stage2 step %d overall %.4f binary %.4f", step, row["overall"], row["binary"])
    return model, curve


# --------------------------------------------------------------------------
# inference


def score_clip(backbone: Backbone, stpm: Stpm, clip: SyntheticClip, beta: float = 0.8,
               features: ClipFeatures | None = None) -> float:
    f = features if features is not None else clip_features(backbone, clip)
    out = stpm.forward(f.levels, f.d_single)
    refined = [r.data[0, 0] for r in out.refined]
    masks = list(clip.masks[: len(refined)])
    return fuse_score(refined, masks, float(out.probs.data[0, 1]), beta)


def score_records(backbone: Backbone, stpm: Stpm, clips: Sequence[SyntheticClip], beta: float = 0.8,
                  prefix: str = "clip", features: Sequence[ClipFeatures] | None = None) -> list[ScoreRecord]:
    records = []
    for i, clip in enumerate(clips):
        s = score_clip(backbone, stpm, clip, beta, None if features is None else features[i])
        label = "live" if clip.label == 1 else "attack"
        records.append(ScoreRecord(f"{prefix}{i:04d}", label, s, clip.pai))
    return records


def stage1_pairs(clips: Sequence[SyntheticClip]) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(c.frames[t], c.depth[t]) for c in clips for t in range(c.frames.shape[0])]


# --------------------------------------------------------------------------
# end to end


@dataclass
class PipelineResult:
    backbone: Backbone
    stpm: Stpm
    stage1_curve: list[dict]
    stage2_curve: list[dict]
    train_records: list[ScoreRecord]
    test_records: list[ScoreRecord]
    threshold: float
    test_report: MetricsReport


def run_pipeline(seed: int = 0, n_train: int = 64, n_test: int = 32, stage1: TrainConfig | None = None,
                 stage2: TrainConfig | None = None, synth: SynthConfig | None = None) -> PipelineResult:
    """Both training stages on synthetic clips, then held-out evaluation.

    The operating threshold is the equal-error point of the training scores,
    applied unchanged to the held-out clips.
    """
    stage1 = stage1 or TrainConfig.desk(1, seed=seed)
    stage2 = stage2 or TrainConfig.desk(2, seed=seed)
    synth = synth or SynthConfig(n_frames=stage2.n_frames, interval=stage2.interval)
    train = make_dataset(n_train, seed, synth)
    test = make_dataset(n_test, seed + 1, synth)
    bcfg = BackboneConfig(input_size=synth.image_size, depth_size=synth.depth_size, stem_channels=8,
                          channels=(8, 12, 8), blocks_per_level=(1, 1, 1), head_channels=8)
    backbone, curve1 = train_stage1(stage1, Backbone.create(bcfg, seed=seed), stage1_pairs(train))
    f_train = [clip_features(backbone, c) for c in train]
    f_test = [clip_features(backbone, c) for c in test]
    stpm = Stpm.create(StpmConfig.desk(bcfg.channels, bcfg.depth_size), seed=seed + 1)
    stpm, curve2 = train_stage2(stage2, backbone, stpm, train, f_train)
    r_train = score_records(backbone, stpm, train, stage2.beta, "train", f_train)
    r_test = score_records(backbone, stpm, test, stage2.beta, "test", f_test)
    threshold = sweep_thresholds(r_train).eer_threshold
    if threshold is None:
        raise TrainingError("training scores are all equal; no operating threshold")
    return PipelineResult(backbone, stpm, curve1, curve2, r_train, r_test, threshold,
                          compute_metrics(r_test, threshold))
