"""Executable invariant suites.

Each suite is a function yielding ``CheckResult``s. ``run_suites`` collects
them into a JSON-friendly summary; the CLI exits non-zero iff any fails.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Callable, Iterator

import numpy as np

from . import geometry as geo
from . import losses as L
from . import tensor as T
from .metrics import ScoreRecord, compute_metrics, sweep_thresholds
from .optim import adadelta_step
from .stpm import convgru_step, init_convgru, refine_depth


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""


def _result(suite, name, ok, detail=""):
    return CheckResult(suite, name, bool(ok), detail)


def random_live_scene(rng: np.random.Generator) -> geo.SceneSpec:
    z = rng.uniform(2.0, 20.0)
    d1, d2 = sorted(rng.uniform(0.05, 3.0, size=2))
    if math.isclose(d1, d2):
        d2 += 0.5
    return geo.SceneSpec(mode="live", f=rng.uniform(0.5, 4.0), z=z, d1=d1, d2=d2,
                         dx=rng.choice([-1, 1]) * rng.uniform(0.05, 1.0), steps=int(rng.integers(2, 6)),
                         x_l1=rng.uniform(-1, 1), x_m1=rng.uniform(-1, 1), x_r1=rng.uniform(-1, 1))


# --------------------------------------------------------------------------
# suites


def geometry_suite(n_scenes: int = 100, seed: int = 0) -> Iterator[CheckResult]:
    rng = np.random.default_rng(seed)
    worst_ratio = worst_oracle = 0.0
    for _ in range(n_scenes):
        scene = random_live_scene(rng)
        obs = geo.observe(scene)
        worst_oracle = max(worst_oracle, float(np.max(np.abs(obs.du - geo.simulate_pinhole(scene).du))))
        for est in geo.estimate_relative_depth(obs):
            err = abs(est.ratio - scene.d1 / scene.d2) if est.flag == "ok" else math.inf
            worst_ratio = max(worst_ratio, err)
    yield _result("geometry", f"live ratio recovered ({n_scenes} scenes)", worst_ratio < 1e-9, f"max err {worst_ratio:.3g}")
    yield _result("geometry", f"closed form matches pinhole oracle ({n_scenes} scenes)", worst_oracle < 1e-12,
                  f"max err {worst_oracle:.3g}")

    printed = geo.SceneSpec(mode="print", f_a=1.0, z_a=10.0, d1=1.0, d2=2.0, dx=0.3, dv=(0.2,))
    est = geo.estimate_relative_depth(geo.observe(printed))
    yield _result("geometry", "print scene is planar", all(e.flag == "planar" and e.ratio == 0.0 for e in est))

    pss = geo.SceneSpec(mode="replay", f_a=1.0, z_a=10.0, d1=1.0, d2=2.0, dx=0.3, f_b=2.0, z_b=5.0, dv=(0.0,))
    est = geo.estimate_relative_depth(geo.observe(pss))
    yield _result("geometry", "static parallel replay preserves the ratio",
                  all(abs(e.ratio - 0.5) < 1e-9 for e in est))

    moving = geo.SceneSpec(mode="replay", f_a=1.0, z_a=10.0, d1=1.0, d2=2.0, dx=0.3, f_b=2.0, z_b=5.0, dv=(0.05,))
    est = geo.estimate_relative_depth(geo.observe(moving))
    dev = max(abs(e.ratio - 0.5 * geo.distortion_factor(moving, k)) for k, e in enumerate(est))
    yield _result("geometry", "moving replay deviates by the distortion factor", dev < 1e-9, f"max err {dev:.3g}")

    rot = geo.constructed_rotation_scene()
    ratios = [e.ratio for e in geo.estimate_relative_depth(geo.observe(rot))]
    varying = len(ratios) >= 3 and min(abs(a - b) for a, b in zip(ratios, ratios[1:])) > 1e-6
    yield _result("geometry", "tilted carrier gives a time-varying ratio", varying)


def losses_suite(seed: int = 0) -> Iterator[CheckResult]:
    sums = np.asarray(L.CDL_KERNELS).reshape(len(L.CDL_KERNELS), -1).sum(axis=1)
    yield _result("losses", "CDL kernels sum to zero", np.all(sums == 0), f"sums {sums.tolist()}")
    rng = np.random.default_rng(seed)
    # dyadic values keep the offset check exact in floating point
    p = rng.integers(0, 64, size=(8, 8)) / 64.0
    g = rng.integers(0, 64, size=(8, 8)) / 64.0
    c = 0.25
    yield _result("losses", "EDL and CDL vanish on equal inputs", L.edl(p, p).item() == 0 and L.cdl(p, p).item() == 0)
    yield _result("losses", "EDL positive on different inputs", L.edl(p, g).item() > 0)
    yield _result("losses", "CDL offset invariance", L.cdl(p + c, g + c).item() == L.cdl(p, g).item())
    yield _result("losses", "CDL symmetry", L.cdl(p, g).item() == L.cdl(g, p).item())
    total = L.overall_loss(1.0, 2.0, 3.0, 0.8)
    yield _result("losses", "overall loss arithmetic",
                  total == 0.8 * 1.0 + (1 - 0.8) * (2.0 + 3.0) and abs(total - 1.8) <= 2 * math.ulp(1.8), repr(total))
    yield _result("losses", "EDL gradient is 2(P - G)", np.array_equal(L.edl_grad(p, g), 2 * (p - g)))


def gradients_suite(seeds: int = 20) -> Iterator[CheckResult]:
    """Analytic vs central-difference gradients on small random inputs."""
    worst: dict[str, float] = {}

    def check(name, fn, x):
        with T.GradTape() as tape:
            xt = T.Tensor(x)
            tape.watch(xt)
            out = fn(xt)
        a = T.backward(tape, out)[xt]
        n = T.numerical_grad(lambda v: fn(T.Tensor(v)).item(), x)
        worst[name] = max(worst.get(name, 0.0), T.relative_error(a, n))

    for s in range(seeds):
        rng = np.random.default_rng(s)
        x = rng.normal(size=(2, 3, 6, 6))
        w = rng.normal(size=(4, 3, 3, 3)) * 0.3
        gt = rng.uniform(size=(1, 1, 6, 6))
        labels = np.array([0, 1])
        check("conv2d", lambda t: T.sum_all(T.square(T.conv2d(t, T.Tensor(w)))), x)
        check("depthwise", lambda t: T.sum_all(T.square(T.depthwise_conv3x3(t, rng_kernel(s)))), x)
        check("max_pool", lambda t: T.sum_all(T.square(T.max_pool2x2(t))), x)
        check("normalize", lambda t: T.sum_all(T.mul(T.normalize_channels(t, T.Tensor(np.full(3, 1.5)),
                                                                           T.Tensor(np.zeros(3))),
                                                     T.Tensor(np.linspace(-1, 1, x.size).reshape(x.shape)))), x)
        check("sigmoid/tanh/relu", lambda t: T.sum_all(T.sigmoid(t) * T.tanh_op(T.relu(t))), x)
        check("softmax/log", lambda t: T.sum_all(T.log(T.softmax(T.reshape(t, (2, -1))))), x * 0.1)
        check("edl", lambda t: L.edl(t, gt), rng.uniform(size=(1, 1, 6, 6)))
        check("cdl", lambda t: L.cdl(t, gt), rng.uniform(size=(1, 1, 6, 6)))
        fcs = {k: T.Tensor(v) for k, v in L.init_fcs(rng, 4, hidden=8).items()}
        check("binary", lambda t: L.binary_loss([t], labels, fcs), rng.uniform(size=(2, 1, 4, 4)))
    for name, err in worst.items():
        yield _result("gradients", f"{name} matches finite differences ({seeds} seeds)", err < 1e-4, f"max rel err {err:.3g}")


def rng_kernel(seed: int) -> np.ndarray:
    return np.random.default_rng(1000 + seed).normal(size=(3, 3))


def metrics_suite(seed: int = 0) -> Iterator[CheckResult]:
    rng = np.random.default_rng(seed)
    records = [ScoreRecord(f"s{i}", "live", float(rng.uniform(0.3, 1.0))) for i in range(40)]
    records += [ScoreRecord(f"a{i}", "attack", float(rng.uniform(0.0, 0.7)), ("print", "replay")[i % 2]) for i in range(60)]
    sweep = sweep_thresholds(records)
    ok_acer = all(r.acer_frac == (r.apcer_frac + r.bpcer_frac) / 2 for _, r in sweep.points)
    ok_hter = all(r.hter_frac == (r.frr_frac + r.far_frac) / 2 for _, r in sweep.points)
    yield _result("metrics", "ACER is the mean of APCER and BPCER at every threshold", ok_acer)
    yield _result("metrics", "HTER is the mean of FRR and FAR at every threshold", ok_hter)
    recs = [ScoreRecord(f"l{i}", "live", 1.0) for i in range(50)]
    recs += [ScoreRecord(f"a{i}", "attack", 1.0 if i == 0 else 0.0, "print") for i in range(50)]
    rep = compute_metrics(recs, 0.5)
    yield _result("metrics", "APCER 2.0 and BPCER 0.0 give ACER 1.0",
                  rep.apcer_frac == Fraction(1, 50) and rep.bpcer_frac == 0 and rep.acer_frac == Fraction(1, 100))


def architecture_suite(seed: int = 0) -> Iterator[CheckResult]:
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(4, 4)), rng.uniform(size=(4, 4))
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    inside = all(np.all((r >= lo - 1e-12) & (r <= hi + 1e-12)) for r in (refine_depth(a, b, al) for al in np.linspace(0, 1, 11)))
    yield _result("stpm", "refined depth lies between coarse and temporal maps", inside)

    p: dict = {}
    init_convgru(p, rng, 3, 2)
    h = T.Tensor(rng.normal(size=(1, 2, 5, 5)))
    x = T.Tensor(rng.normal(size=(1, 3, 5, 5)) * 3)
    step = convgru_step({k: T.Tensor(v) for k, v in p.items()}, h, x)
    in_range = all(np.all((g.data >= 0) & (g.data <= 1)) for g in (step.reset, step.update))
    in_range &= bool(np.all(np.abs(step.candidate.data) <= 1))
    yield _result("stpm", "GRU gates in [0, 1] and candidate in [-1, 1]", in_range)

    for bias, expect in ((-50.0, "keeps"), (50.0, "replaces")):
        q = dict(p)
        q["gru.w_u"] = np.zeros_like(p["gru.w_u"])
        q["gru.b_u"] = np.full_like(p["gru.b_u"], bias)
        s = convgru_step({k: T.Tensor(v) for k, v in q.items()}, h, x)
        target = h.data if bias < 0 else s.candidate.data
        err = float(np.max(np.abs(s.hidden.data - target)))
        yield _result("stpm", f"closed update gate {expect} the hidden state", err < 1e-9, f"max err {err:.3g}")


def optimizer_suite() -> Iterator[CheckResult]:
    params = {"w": np.array([1.0, -2.0])}
    state = {"w": (np.array([0.4, 0.2]), np.array([0.1, 0.3]))}
    new, st = adadelta_step(params, {"w": np.zeros(2)}, state)
    ok = np.array_equal(new["w"], params["w"]) and np.allclose(st["w"][0], 0.95 * state["w"][0]) \
        and np.allclose(st["w"][1], 0.95 * state["w"][1])
    yield _result("optim", "zero gradient leaves parameters and decays state", ok)


SUITES: dict[str, Callable[[], Iterator[CheckResult]]] = {
    "geometry": geometry_suite,
    "losses": losses_suite,
    "gradients": gradients_suite,
    "metrics": metrics_suite,
    "stpm": architecture_suite,
    "optim": optimizer_suite,
}


def run_suites(names: list[str] | None = None) -> dict:
    names = list(SUITES) if not names or names == ["all"] else names
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)} or 'all'")
    results, timings = [], {}
    for name in names:
        t0 = time.perf_counter()
        try:
            results.extend(SUITES[name]())
        except Exception as exc:  # a crashing suite is a failed check, not a crash
            results.append(CheckResult(name, "suite raised", False, f"{type(exc).__name__}: {exc}"))
        timings[name] = round(time.perf_counter() - t0, 3)
    return {
        "passed": all(r.passed for r in results),
        "n_checks": len(results),
        "n_failed": sum(not r.passed for r in results),
        "suites": timings,
        "results": [asdict(r) for r in results],
    }
