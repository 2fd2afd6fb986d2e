"""Pinhole geometry of three facial points under live, print, replay and
rotated-carrier presentations.

Three points N_l, N_m, N_r sit at depths z, z + d1, z + d2 and move
vertically by ``dx`` per step. From their image displacements the relative
depth d1/d2 is recovered as

    ((du_l / du_m) - 1) / ((du_l / du_r) - 1)

which is exact for a live face, collapses for a planar carrier, and drifts
over time when the carrier moves or is tilted.

Two independent routes produce displacements: :func:`observe` evaluates the
closed forms, :func:`simulate_pinhole` places explicit 3D points, projects
them, moves the carrier and projects again.
"""

from __future__ import annotations

import configparser
import csv
import io
import math
from dataclasses import dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np

MODES = ("live", "print", "replay", "replay_rotated")
EQUAL_TOL = 1e-12


@dataclass(frozen=True)
class SceneSpec:
    mode: str = "live"
    # live side / recording side
    f: float = 1.0
    z: float = 10.0
    d1: float = 1.0
    d2: float = 2.0
    dx: float = 0.5
    # attack side
    f_a: float = 1.0
    z_a: float = 10.0
    f_b: float = 1.0
    z_b: float = 10.0
    dv: tuple[float, ...] = (0.0,)
    theta: float = 0.0
    steps: int = 4
    x_l1: float = 0.0
    x_m1: float = 0.0
    x_r1: float = 0.0

    def __post_init__(self):
        if isinstance(self.dv, (int, float)):
            object.__setattr__(self, "dv", (float(self.dv),))
        else:
            object.__setattr__(self, "dv", tuple(float(v) for v in self.dv))
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("f", "z", "f_a", "z_a", "f_b", "z_b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for fld in fields(self):
            v = getattr(self, fld.name)
            vals = v if isinstance(v, tuple) else (v,)
            if any(isinstance(x, float) and not math.isfinite(x) for x in vals):
                raise ValueError(f"{fld.name} must be finite")
        if self.d1 < 0 or not self.d2 > 0:
            raise ValueError("need d1 >= 0 and d2 > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if len(self.dv) not in (1, self.steps):
            raise ValueError(f"dv must have 1 or {self.steps} entries, got {len(self.dv)}")
        if not abs(self.theta) < math.pi / 2:
            raise ValueError("|theta| must be < pi/2")
        if self.mode == "replay_rotated":
            if any(v != 0.0 for v in self.dv):
                raise ValueError("replay_rotated models a tilted static carrier; dv must be 0")
            s = math.sin(self.theta)
            for k in range(self.steps + 1):
                for u in self.recording_coords(k):
                    if u <= 0:
                        raise ValueError("replay_rotated needs positive recording-plane coordinates")
                    if not self.z_b - u * s > 0:
                        raise ValueError("rotated carrier point falls behind the realistic camera")

    @property
    def offsets(self) -> tuple[float, float, float]:
        return (0.0, self.d1, self.d2)

    @property
    def effective_dx(self) -> float:
        return 0.0 if self.mode == "print" else self.dx

    def dv_at(self, k: int) -> float:
        return self.dv[0] if len(self.dv) == 1 else self.dv[k]

    def face_coords(self, k: int) -> tuple[float, float, float]:
        dx = self.effective_dx
        return (self.x_l1 + k * dx, self.x_m1 + k * dx, self.x_r1 + k * dx)

    def recording_coords(self, k: int) -> tuple[float, ...]:
        """Image coordinates of the three points in the recording camera at step k."""
        f, z = (self.f, self.z) if self.mode == "live" else (self.f_a, self.z_a)
        return tuple(project(x, z + d, f) for x, d in zip(self.face_coords(k), self.offsets))


def project(point_x: float, z_dist: float, f: float) -> float:
    """u = f * x / z."""
    if not z_dist > 0:
        raise ValueError(f"point must lie in front of the camera (z = {z_dist})")
    return f * point_x / z_dist


class ProjectionObservation(NamedTuple):
    du: np.ndarray  # (steps, 3): displacements of N_l, N_m, N_r per step


# --------------------------------------------------------------------------
# closed forms


def observe(scene: SceneSpec) -> ProjectionObservation:
    """Per-step image displacements from the closed-form expressions."""
    scene.validate()
    out = np.empty((scene.steps, 3))
    if scene.mode == "live":
        for k in range(scene.steps):
            out[k] = [scene.f * scene.dx / (scene.z + d) for d in scene.offsets]
    elif scene.mode in ("print", "replay"):
        fa, za, fb, zb, dx = scene.f_a, scene.z_a, scene.f_b, scene.z_b, scene.effective_dx
        for k in range(scene.steps):
            dv = scene.dv_at(k)
            out[k] = [(fa * fb * dx + (za + d) * fb * dv) / ((za + d) * zb) for d in scene.offsets]
    else:
        s, c, zb = math.sin(scene.theta), math.cos(scene.theta), scene.z_b
        for k in range(scene.steps):
            u1, u2 = scene.recording_coords(k), scene.recording_coords(k + 1)
            for i in range(3):
                du = u2[i] - u1[i]
                du_theta = du * zb * zb * c / ((zb - u1[i] * s) * (zb - (u1[i] + du) * s))
                out[k, i] = scene.f_b * du_theta / zb
    return ProjectionObservation(out)


def rotated_coordinate(u: float, z_b: float, theta: float) -> float:
    """Position on the upright plane at distance z_b of in-plane coordinate u
    after tilting the carrier by theta: z_b u cos(theta) / (z_b - u sin(theta))."""
    return z_b * u * math.cos(theta) / (z_b - u * math.sin(theta))


def distortion_factor(scene: SceneSpec, k: int = 0) -> float:
    """(f_a dx + (z_a + d2) dv) / (f_a dx + (z_a + d1) dv) for a translating carrier."""
    dx, dv = scene.effective_dx, scene.dv_at(k)
    return (scene.f_a * dx + (scene.z_a + scene.d2) * dv) / (scene.f_a * dx + (scene.z_a + scene.d1) * dv)


def rotation_betas(scene: SceneSpec, k: int = 0) -> tuple[float, float]:
    s, zb = math.sin(scene.theta), scene.z_b
    u1, u2 = scene.recording_coords(k), scene.recording_coords(k + 1)
    den = (zb - u1[0] * s) * (zb - u2[0] * s)
    beta1 = (zb - u1[1] * s) * (zb - u2[1] * s) / den
    beta2 = (zb - u1[2] * s) * (zb - u2[2] * s) / den
    return beta1, beta2


def rotated_ratio(scene: SceneSpec, k: int = 0) -> float:
    """((d1/z_a + 1) beta1 - 1) / ((d2/z_a + 1) beta2 - 1)."""
    b1, b2 = rotation_betas(scene, k)
    return ((scene.d1 / scene.z_a + 1) * b1 - 1) / ((scene.d2 / scene.z_a + 1) * b2 - 1)


# --------------------------------------------------------------------------
# explicit pinhole oracle


def _rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def simulate_pinhole(scene: SceneSpec) -> ProjectionObservation:
    """Displacements from explicit point placement and projection.

    Shares no algebra with :func:`observe`: points are moved in 3D, the
    carrier is displaced or tilted as a rigid plane, and every position is
    projected before differencing.
    """
    scene.validate()
    n = scene.steps + 1

    def face_positions(k):
        return [np.array([0.0, x, d]) for x, d in zip(scene.face_coords(k), scene.offsets)]

    if scene.mode == "live":
        cam = np.array([0.0, 0.0, -scene.z])
        pos = [[project(p[1] - cam[1], p[2] - cam[2], scene.f) for p in face_positions(k)] for k in range(n)]
        return ProjectionObservation(np.diff(np.array(pos), axis=0))

    cam_a = np.array([0.0, 0.0, -scene.z_a])
    screen = [[project(p[1] - cam_a[1], p[2] - cam_a[2], scene.f_a) for p in face_positions(k)] for k in range(n)]

    if scene.mode in ("print", "replay"):
        offset = np.concatenate([[0.0], np.cumsum([scene.dv_at(k) for k in range(scene.steps)])])
        pos = []
        for k in range(n):
            row = []
            for s in screen[k]:
                p = np.array([0.0, s + offset[k], scene.z_b])  # carrier plane at depth z_b
                row.append(project(p[1], p[2], scene.f_b))
            pos.append(row)
        return ProjectionObservation(np.diff(np.array(pos), axis=0))

    rot = _rot_x(-scene.theta)
    pos = []
    for k in range(n):
        row = []
        for s in screen[k]:
            p = rot @ np.array([0.0, s, 0.0]) + np.array([0.0, 0.0, scene.z_b])
            row.append(project(p[1], p[2], scene.f_b))
        pos.append(row)
    return ProjectionObservation(np.diff(np.array(pos), axis=0))


# --------------------------------------------------------------------------
# estimation and classification


@dataclass(frozen=True)
class DepthEstimate:
    ratio: float | None
    flag: str = "ok"  # ok | planar | undefined


def _close(a: float, b: float, tol: float = EQUAL_TOL) -> bool:
    return abs(a - b) <= tol * max(abs(a), abs(b))


def estimate_step(du_l: float, du_m: float, du_r: float) -> DepthEstimate:
    if _close(du_l, du_m) and _close(du_l, du_r):
        # both relations reduce to d'_1 = d'_2 = 0
        return DepthEstimate(0.0, "planar")
    if du_m == 0 or du_r == 0:
        return DepthEstimate(None, "undefined")
    num = du_l / du_m - 1.0
    den = du_l / du_r - 1.0
    if abs(den) < EQUAL_TOL:
        return DepthEstimate(None, "undefined")
    return DepthEstimate(num / den)


def estimate_relative_depth(obs: ProjectionObservation) -> list[DepthEstimate]:
    du = np.asarray(obs.du, dtype=float)
    if not np.all(np.isfinite(du)):
        raise ValueError("non-finite displacements")
    return [estimate_step(*row) for row in du]


def classify_scene(estimates: Sequence[DepthEstimate], tolerance: float = 1e-10,
                   assume_no_pss: bool = False) -> str:
    """live | spoof | inconclusive.

    A planar step or a relative depth that varies across steps (variance
    above ``tolerance``) is a spoof. A steady ratio cannot tell a live face
    from a static parallel replay, so it is inconclusive unless the caller
    rules that scene out with ``assume_no_pss``.
    """
    if len(estimates) < 2:
        raise ValueError("classification needs at least 2 steps")
    if any(e.flag == "planar" for e in estimates):
        return "spoof"
    ratios = [e.ratio for e in estimates if e.flag == "ok"]
    if len(ratios) < 2:
        return "inconclusive"
    if float(np.var(ratios)) > tolerance:
        return "spoof"
    return "live" if assume_no_pss else "inconclusive"


# --------------------------------------------------------------------------
# scene files and sweep output

_FLOAT_KEYS = {f.name for f in fields(SceneSpec)} - {"mode", "steps", "dv"}


def scene_from_mapping(values: dict[str, str]) -> SceneSpec:
    kwargs: dict = {}
    for key, raw in values.items():
        if key == "mode":
            kwargs["mode"] = raw.strip()
        elif key == "steps":
            kwargs["steps"] = int(raw)
        elif key == "dv":
            kwargs["dv"] = tuple(float(v) for v in raw.split(",") if v.strip())
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(raw)
        else:
            raise ValueError(f"unknown scene key {key!r}")
    return SceneSpec(**kwargs)


def load_scene(path) -> SceneSpec:
    """Read a ``[scene]`` section of ``key = value`` lines; dv is comma separated."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ValueError(f"malformed scene file: {exc}") from None
    if cp.sections() != ["scene"]:
        raise ValueError(f"scene file must contain exactly one [scene] section, got {cp.sections()}")
    return scene_from_mapping(dict(cp["scene"]))


def sweep_csv(obs: ProjectionObservation, estimates: Sequence[DepthEstimate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "du_l", "du_m", "du_r", "ratio_estimate", "flag"])
    for k, (row, est) in enumerate(zip(obs.du, estimates)):
        ratio = "" if est.ratio is None else repr(est.ratio)
        w.writerow([k, *(repr(float(v)) for v in row), ratio, est.flag])
    return buf.getvalue()


def constructed_rotation_scene(**overrides) -> SceneSpec:
    """A tilted-carrier configuration satisfying u_m > u_l > u_r at every step.

    N_m sits almost level with N_l (d1 << z_a) but higher, N_r lower; this
    gives beta1 < 1 < beta2 for theta > 0.
    """
    base = dict(mode="replay_rotated", f_a=1.0, z_a=10.0, d1=0.05, d2=2.0, dx=0.4,
                f_b=1.0, z_b=2.0, theta=0.6, steps=4, x_l1=2.0, x_m1=3.0, x_r1=1.0, dv=(0.0,))
    base.update(overrides)
    return SceneSpec(**base)
