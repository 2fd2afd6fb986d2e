"""Synthetic live and spoof clips for the toy pipeline.

A live face is a textured, shaded Gaussian hill seen by a pinhole camera:
its apex is nearest (distance ``z``) and the far field sits ``relief``
further away, so a slow vertical head motion moves the apex several times
more than the surrounding surface. Spoofs show the same picture on a flat
carrier: a print is one frame moving rigidly with the carrier, a replay is
the recorded live motion played back on a carrier held by a trembling hand.

Frames are grayscale replicated to three channels and quantised to
multiples of 1/255, so they survive an 8-bit PGM round trip unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from .io import read_pgm, write_pgm

MASK_LEVEL = 0.05


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    depth_size: int = 16
    n_frames: int = 5
    interval: int = 3
    focal: float = 64.0  # pixels
    z: float = 5.0
    relief: float = 10.0
    face_sigma: float = 1.85
    dx_range: tuple[float, float] = (0.015, 0.025)  # per raw frame, world units
    carrier_step: tuple[float, float] = (2.0, 3.5)  # pixels per sampled step
    light: tuple[float, float, float] = (0.0, -0.5, -1.0)  # towards the light, camera looks along +Z
    noise: float = 0.02
    texture_components: int = 4

    def __post_init__(self):
        if self.image_size % self.depth_size:
            raise ValueError("image size must be a multiple of depth size")
        if self.n_frames < 2:
            raise ValueError("need at least 2 frames")

    @property
    def raw_indices(self) -> np.ndarray:
        return np.arange(self.n_frames) * self.interval


@dataclass
class SyntheticClip:
    frames: np.ndarray  # (N_f, 3, H, W)
    depth: np.ndarray  # (N_f, D, D)
    masks: np.ndarray  # (N_f, D, D) bool
    label: int  # 1 live, 0 spoof
    pai: str  # "" for live
    seed: int
    meta: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# rendering


def _texture_params(rng: np.random.Generator, n: int) -> np.ndarray:
    ang = rng.uniform(0, np.pi, n)
    freq = rng.uniform(3.0, 6.0, n)
    amp = rng.uniform(0.5, 1.0, n)
    amp *= 0.2 / amp.sum()
    phase = rng.uniform(0, 2 * np.pi, n)
    return np.stack([freq * np.cos(ang), freq * np.sin(ang), amp, phase], axis=1)


def _surface_height(cfg: SynthConfig, X, Y):
    return np.exp(-(X * X + Y * Y) / (2 * cfg.face_sigma ** 2))


def _visible_surface(cfg: SynthConfig, u, v, lift: float):
    """Face coordinates (X, Y) seen at image coords (u rows, v cols) when the
    face is raised by ``lift``; solved by fixed-point iteration."""
    Z = np.full(np.shape(u), cfg.z + cfg.relief)
    for _ in range(80):
        X = v * Z / cfg.focal
        Y = u * Z / cfg.focal - lift
        Z = cfg.z + cfg.relief * (1.0 - _surface_height(cfg, X, Y))
    return X, Y


def _shading(cfg: SynthConfig, X, Y) -> np.ndarray:
    """Lambertian term for the surface Z = z + relief * (1 - h(X, Y))."""
    h = _surface_height(cfg, X, Y)
    k = cfg.relief * h / cfg.face_sigma ** 2
    n = np.stack([k * X, k * Y, -np.ones_like(X)])  # (dZ/dX, dZ/dY, -1)
    n /= np.linalg.norm(n, axis=0)
    light = np.asarray(cfg.light, float)
    light /= np.linalg.norm(light)
    return np.clip(np.tensordot(light, n, axes=1), 0.0, 1.0)


def _render(cfg: SynthConfig, tex: np.ndarray, lift: float, shift_px: float, rng: np.random.Generator):
    """One frame plus its height map at depth resolution.

    ``shift_px`` translates the whole picture vertically (carrier motion).
    """
    H = cfg.image_size
    c = (H - 1) / 2
    rows, cols = np.meshgrid(np.arange(H) - c, np.arange(H) - c, indexing="ij")
    X, Y = _visible_surface(cfg, rows - shift_px, cols, lift)
    albedo = 1.0 + sum(a * np.sin(kx * X + ky * Y + ph) for kx, ky, a, ph in tex)
    img = 0.1 + 0.8 * _shading(cfg, X, Y) * albedo
    img = img + rng.normal(0.0, cfg.noise, img.shape)
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0

    D = cfg.depth_size
    step = H / D
    centres = (np.arange(D) + 0.5) * step - 0.5 - c
    dr, dc = np.meshgrid(centres, centres, indexing="ij")
    Xd, Yd = _visible_surface(cfg, dr - shift_px, dc, lift)
    height = _surface_height(cfg, Xd, Yd)
    return np.broadcast_to(img, (3, H, H)).copy(), height


def _normalise(h: np.ndarray) -> np.ndarray:
    lo, hi = h.min(), h.max()
    return (h - lo) / (hi - lo)


def _apex_row(cfg: SynthConfig, lift: float, shift_px: float) -> float:
    return geo.project(lift, cfg.z, cfg.focal) + shift_px


def _check_bounds(cfg: SynthConfig, apex_rows) -> None:
    half = (cfg.image_size - 1) / 2
    margin = cfg.focal * cfg.face_sigma / cfg.z  # one image-space sigma
    if np.any(np.abs(apex_rows) > half - margin):
        raise ValueError("face bump leaves the frame bounds")


def _carrier_offsets(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Carrier offsets (pixels) at the sampled frames.

    Hand tremor: the carrier reverses direction between consecutive sampled
    frames with a random amplitude in ``carrier_step``.
    """
    sign = rng.choice([-1.0, 1.0])
    steps = [sign * (-1) ** k * rng.uniform(*cfg.carrier_step) for k in range(cfg.n_frames - 1)]
    return np.concatenate([[0.0], np.cumsum(steps)])


def _live_motion(cfg: SynthConfig, rng: np.random.Generator):
    dx_raw = rng.uniform(*cfg.dx_range) * rng.choice([-1.0, 1.0])
    dx = dx_raw * cfg.interval
    lifts = (np.arange(cfg.n_frames) - (cfg.n_frames - 1) / 2) * dx
    return dx, lifts


def _displacements(cfg: SynthConfig, mode: str, dx: float, shifts: np.ndarray) -> np.ndarray:
    """Per-step apex / mid / far-field displacements from the geometry model."""
    dv = tuple(np.diff(shifts)) if mode != "live" else (0.0,)
    if mode == "live":
        scene = geo.SceneSpec(mode="live", f=cfg.focal, z=cfg.z, d1=cfg.relief / 2, d2=cfg.relief,
                              dx=dx, steps=cfg.n_frames - 1)
    else:
        scene = geo.SceneSpec(mode=mode, f_a=cfg.focal, z_a=cfg.z, f_b=1.0, z_b=1.0, d1=cfg.relief / 2,
                              d2=cfg.relief, dx=dx, dv=dv, steps=cfg.n_frames - 1)
    return geo.observe(scene).du


def make_live_clip(seed: int, cfg: SynthConfig | None = None) -> SyntheticClip:
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    tex = _texture_params(rng, cfg.texture_components)
    dx, lifts = _live_motion(cfg, rng)
    _check_bounds(cfg, [_apex_row(cfg, l, 0.0) for l in lifts])
    frames, depth = [], []
    for lift in lifts:
        img, h = _render(cfg, tex, lift, 0.0, rng)
        frames.append(img)
        depth.append(_normalise(h))
    depth = np.stack(depth)
    meta = {"dx": float(dx), "shifts": [0.0] * cfg.n_frames,
            "displacements": _displacements(cfg, "live", dx, np.zeros(cfg.n_frames)).tolist()}
    return SyntheticClip(np.stack(frames), depth, depth > MASK_LEVEL, 1, "", seed, meta)


def make_spoof_clip(seed: int, cfg: SynthConfig | None = None, mode: str = "print") -> SyntheticClip:
    if mode not in ("print", "replay"):
        raise ValueError(f"spoof mode must be 'print' or 'replay', got {mode!r}")
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    tex = _texture_params(rng, cfg.texture_components)
    dx, lifts = _live_motion(cfg, rng)
    if mode == "print":
        dx, lifts = 0.0, np.full(cfg.n_frames, lifts[0])
    shifts = _carrier_offsets(cfg, rng)
    _check_bounds(cfg, [_apex_row(cfg, l, s) for l, s in zip(lifts, shifts)])
    frames, masks = [], []
    for lift, shift in zip(lifts, shifts):
        img, h = _render(cfg, tex, lift, shift, rng)
        frames.append(img)
        masks.append(_normalise(h) > MASK_LEVEL)
    D = cfg.depth_size
    meta = {"dx": float(dx), "shifts": shifts.tolist(),
            "displacements": _displacements(cfg, mode, dx, shifts).tolist()}
    return SyntheticClip(np.stack(frames), np.zeros((cfg.n_frames, D, D)), np.stack(masks), 0, mode, seed, meta)


def make_dataset(n_clips: int, seed: int, cfg: SynthConfig | None = None) -> list[SyntheticClip]:
    """Half live, the rest alternating print / replay, in a seeded order."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2 ** 31 - 1, size=n_clips)
    clips = []
    for i, s in enumerate(seeds):
        if i % 2 == 0:
            clips.append(make_live_clip(int(s), cfg))
        else:
            clips.append(make_spoof_clip(int(s), cfg, "print" if i % 4 == 1 else "replay"))
    return clips


# --------------------------------------------------------------------------
# separability statistic


def motion_profile(frames: np.ndarray, window: int = 5, kappa: float = 1e-3) -> np.ndarray:
    """Per-transition vertical flow estimate (N_f - 1, H, W) from local least squares."""
    from scipy.ndimage import uniform_filter

    g = frames[:, 0]
    out = []
    for a, b in zip(g[:-1], g[1:]):
        avg = 0.5 * (a + b)
        iy = np.gradient(avg, axis=0)
        it = b - a
        num = uniform_filter(it * iy, window)
        den = uniform_filter(iy * iy, window) + kappa
        out.append(-num / den)
    return np.stack(out)


def parallax_statistic(clip: SyntheticClip) -> float:
    """Mean over the face region of the temporal variance of local motion.

    A live face moves steadily, so each pixel's motion barely changes
    between transitions; a hand-held carrier jitters.
    """
    flow = motion_profile(clip.frames)
    k = clip.frames.shape[-1] // clip.masks.shape[-1]
    mask = np.kron(clip.masks[:-1].any(axis=0), np.ones((k, k))).astype(bool)
    return float(flow.var(axis=0)[mask].mean())


# --------------------------------------------------------------------------
# persistence


def save_clip(clip: SyntheticClip, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(clip.frames):
        write_pgm(d / f"frame_{t:02d}.pgm", np.round(frame[0] * 255).astype(np.uint8))
        write_pgm(d / f"mask_{t:02d}.pgm", clip.masks[t].astype(np.uint8) * 255)
    meta = {
        "label": clip.label,
        "pai": clip.pai,
        "seed": clip.seed,
        "n_frames": int(clip.frames.shape[0]),
        "depth": clip.depth.tolist(),
        "meta": clip.meta,
    }
    with open(d / "clip.json", "w") as fh:
        json.dump(meta, fh)
    return d


def load_clip(directory) -> SyntheticClip:
    d = Path(directory)
    with open(d / "clip.json") as fh:
        meta = json.load(fh)
    frames, masks = [], []
    for t in range(meta["n_frames"]):
        g = read_pgm(d / f"frame_{t:02d}.pgm").astype(np.float64) / 255.0
        frames.append(np.broadcast_to(g, (3,) + g.shape).copy())
        masks.append(read_pgm(d / f"mask_{t:02d}.pgm") > 0)
    return SyntheticClip(np.stack(frames), np.array(meta["depth"], dtype=np.float64), np.stack(masks),
                         meta["label"], meta["pai"], meta["seed"], meta["meta"])
