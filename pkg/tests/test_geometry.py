"""Pinhole scenes: closed forms against the explicit oracle, estimation, verdicts."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fasdepth import bundled_scene
from fasdepth import geometry as geo
from fasdepth.geometry import SceneSpec


def two_stage_oracle(scene):
    """Project each point into the recording camera, move the carrier, project again.

    Written from scratch (no helpers from the module) for translating carriers.
    """
    rows = []
    offset = 0.0
    for k in range(scene.steps + 1):
        if k:
            offset += scene.dv_at(k - 1)
        dx = 0.0 if scene.mode == "print" else scene.dx
        screen = [scene.f_a * (x + k * dx) / (scene.z_a + d)
                  for x, d in zip((scene.x_l1, scene.x_m1, scene.x_r1), (0.0, scene.d1, scene.d2))]
        rows.append([scene.f_b * (s + offset) / scene.z_b for s in screen])
    return np.diff(np.array(rows), axis=0)


live_scenes = st.builds(
    lambda f, z, d1, gap, dx, steps: SceneSpec(mode="live", f=f, z=z, d1=d1, d2=d1 + gap, dx=dx, steps=steps),
    st.floats(0.5, 5), st.floats(5, 100), st.floats(0.01, 4), st.floats(0.01, 1),
    st.floats(0.01, 1) | st.floats(-1, -0.01), st.integers(1, 6))


class TestProject:
    def test_origin(self):
        assert geo.project(0.0, 3.0, 2.0) == 0.0

    def test_substitution(self):
        assert geo.project(3.0, 6.0, 2.0) == 1.0

    def test_linear_in_focal(self):
        assert geo.project(1.3, 7.0, 4.0) == 2 * geo.project(1.3, 7.0, 2.0)

    @pytest.mark.parametrize("z", [0.0, -1.0])
    def test_behind_camera(self, z):
        with pytest.raises(ValueError):
            geo.project(1.0, z, 1.0)


class TestLive:
    def test_example_displacements(self):
        obs = geo.observe(SceneSpec(mode="live", f=1, z=10, d1=1, d2=2, dx=0.5))
        np.testing.assert_allclose(obs.du[0], [0.05, 0.5 / 11, 0.5 / 12], rtol=0, atol=1e-15)

    def test_example_ratio(self):
        est = geo.estimate_relative_depth(geo.observe(SceneSpec(mode="live", f=1, z=10, d1=1, d2=2, dx=0.5)))
        assert all(e.flag == "ok" and abs(e.ratio - 0.5) < 1e-12 for e in est)

    @settings(max_examples=200, deadline=None)
    @given(live_scenes)
    def test_ratio_recovered(self, scene):
        for e in geo.estimate_relative_depth(geo.observe(scene)):
            assert e.flag == "ok" and abs(e.ratio - scene.d1 / scene.d2) < 1e-9
            assert 0 <= e.ratio <= 1

    @settings(max_examples=100, deadline=None)
    @given(live_scenes)
    def test_displacements_share_sign(self, scene):
        du = geo.observe(scene).du
        assert np.all(du != 0) and np.all(np.sign(du) == np.sign(scene.dx))

    @settings(max_examples=100, deadline=None)
    @given(live_scenes)
    def test_matches_pinhole(self, scene):
        assert np.max(np.abs(geo.observe(scene).du - geo.simulate_pinhole(scene).du)) < 1e-12

    def test_never_spoof(self):
        scene = geo.load_scene(bundled_scene("live_face"))
        verdict = geo.classify_scene(geo.estimate_relative_depth(geo.observe(scene)))
        assert verdict in ("live", "inconclusive")
        assert geo.classify_scene(geo.estimate_relative_depth(geo.observe(scene)), assume_no_pss=True) == "live"


class TestCarrier:
    @pytest.fixture
    def print_scene(self):
        return SceneSpec(mode="print", f_a=1.0, z_a=10.0, f_b=1.5, z_b=4.0, d1=1.0, d2=2.0, dx=0.3,
                         dv=(0.3,), steps=3)

    def test_print_rigid(self, print_scene):
        du = geo.observe(print_scene).du
        np.testing.assert_allclose(du, 1.5 * 0.3 / 4.0, rtol=0, atol=1e-15)

    def test_print_planar(self, print_scene):
        est = geo.estimate_relative_depth(geo.observe(print_scene))
        assert all(e.flag == "planar" and e.ratio == 0.0 for e in est)
        assert geo.classify_scene(est) == "spoof"

    def test_pss_preserves_ratio(self):
        scene = SceneSpec(mode="replay", f_a=1.0, z_a=10.0, d1=1.0, d2=2.0, dx=0.5, f_b=2.0, z_b=5.0, dv=(0.0,))
        live = geo.observe(SceneSpec(mode="live", f=1.0, z=10.0, d1=1.0, d2=2.0, dx=0.5)).du
        np.testing.assert_allclose(geo.observe(scene).du, live * 2.0 / 5.0, rtol=1e-14)
        est = geo.estimate_relative_depth(geo.observe(scene))
        assert all(abs(e.ratio - 0.5) < 1e-12 for e in est)
        assert geo.classify_scene(est) == "inconclusive"

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.05, 1.0), st.floats(-0.5, 0.5).filter(lambda v: abs(v) > 1e-3), st.floats(0.1, 3.0),
           st.floats(0.2, 2.0))
    def test_moving_replay_distortion(self, dx, dv, d1, gap):
        scene = SceneSpec(mode="replay", f_a=1.0, z_a=10.0, d1=d1, d2=d1 + gap, dx=dx, f_b=2.0, z_b=5.0, dv=(dv,))
        est = geo.estimate_relative_depth(geo.observe(scene))
        if est[0].flag != "ok":
            return  # the carrier cancelled the face motion at one point
        expect = scene.d1 / scene.d2 * geo.distortion_factor(scene)
        assert abs(est[0].ratio - expect) < 1e-9 * max(1.0, abs(expect))
        assert abs(est[0].ratio - scene.d1 / scene.d2) > 1e-12

    def test_varying_carrier_is_spoof(self):
        scene = SceneSpec(mode="replay", f_a=1.0, z_a=10.0, d1=1.0, d2=2.0, dx=0.3, f_b=2.0, z_b=5.0,
                          dv=(0.05, -0.02, 0.08, 0.0), steps=4)
        assert geo.classify_scene(geo.estimate_relative_depth(geo.observe(scene))) == "spoof"

    @pytest.mark.parametrize("mode", ["print", "replay"])
    def test_two_stage_oracle(self, mode):
        scene = SceneSpec(mode=mode, f_a=1.3, z_a=8.0, d1=0.7, d2=1.9, dx=0.2, f_b=2.5, z_b=6.0,
                          dv=(0.1, -0.3, 0.05), steps=3, x_l1=0.2, x_m1=-0.4, x_r1=0.9)
        closed = geo.observe(scene).du
        assert np.max(np.abs(closed - two_stage_oracle(scene))) < 1e-12
        assert np.max(np.abs(closed - geo.simulate_pinhole(scene).du)) < 1e-12


class TestRotation:
    def test_ratio_changes_over_time(self):
        scene = geo.constructed_rotation_scene()
        ratios = [e.ratio for e in geo.estimate_relative_depth(geo.observe(scene))]
        assert len(ratios) >= 3
        assert all(abs(a - b) > 1e-6 for a, b in zip(ratios, ratios[1:]))
        assert all(abs(r - scene.d1 / scene.d2) > 1e-6 for r in ratios)
        assert geo.classify_scene(geo.estimate_relative_depth(geo.observe(scene))) == "spoof"

    def test_closed_form_ratio(self):
        scene = geo.constructed_rotation_scene()
        est = geo.estimate_relative_depth(geo.observe(scene))
        for k, e in enumerate(est):
            assert e.ratio == pytest.approx(geo.rotated_ratio(scene, k), rel=1e-9)

    def test_betas_bracket_one(self):
        scene = geo.constructed_rotation_scene()
        for k in range(scene.steps):
            b1, b2 = geo.rotation_betas(scene, k)
            assert b1 < 1 < b2

    def test_matches_pinhole(self):
        scene = geo.constructed_rotation_scene()
        assert np.max(np.abs(geo.observe(scene).du - geo.simulate_pinhole(scene).du)) < 1e-12

    def test_zero_tilt_is_pss(self):
        scene = geo.constructed_rotation_scene(theta=0.0)
        for e in geo.estimate_relative_depth(geo.observe(scene)):
            assert e.ratio == pytest.approx(scene.d1 / scene.d2, abs=1e-9)

    def test_rotated_coordinate(self):
        assert geo.rotated_coordinate(0.5, 2.0, 0.0) == 0.5
        u, zb, th = 0.5, 2.0, 0.3
        assert geo.rotated_coordinate(u, zb, th) == pytest.approx(zb * u * math.cos(th) / (zb - u * math.sin(th)))

    @pytest.mark.parametrize("kw", [dict(x_r1=-1.0), dict(z_b=0.1), dict(dv=(0.1,))])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            geo.constructed_rotation_scene(**kw)


class TestEstimate:
    def test_undefined_when_denominator_vanishes(self):
        est = geo.estimate_step(0.1, 0.05, 0.1)
        assert est.flag == "undefined" and est.ratio is None

    def test_zero_displacement_is_flag_not_error(self):
        assert geo.estimate_step(0.1, 0.0, 0.05).flag == "undefined"

    def test_all_zero_is_planar(self):
        assert geo.estimate_step(0.0, 0.0, 0.0).flag == "planar"

    def test_non_finite(self):
        with pytest.raises(ValueError):
            geo.estimate_relative_depth(geo.ProjectionObservation(np.array([[np.nan, 1.0, 1.0]])))

    def test_classify_needs_two(self):
        with pytest.raises(ValueError):
            geo.classify_scene([geo.DepthEstimate(0.5)])


class TestSceneSpec:
    @pytest.mark.parametrize("kw", [dict(mode="hologram"), dict(f=0.0), dict(z=-1.0), dict(d2=0.0), dict(d1=-0.1),
                                    dict(theta=2.0), dict(steps=0), dict(dv=(0.1, 0.2)), dict(z_a=float("inf"))])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SceneSpec(**kw)

    def test_scalar_dv(self):
        assert SceneSpec(mode="replay", dv=0.2).dv == (0.2,)

    @pytest.mark.parametrize("name,verdict", [("print_attack", "spoof"), ("static_replay", "inconclusive"),
                                              ("live_face", "inconclusive")])
    def test_bundled(self, name, verdict):
        scene = geo.load_scene(bundled_scene(name))
        assert geo.classify_scene(geo.estimate_relative_depth(geo.observe(scene))) == verdict

    def test_load_rejects_unknown_key(self, tmp_path):
        p = tmp_path / "s.ini"
        p.write_text("[scene]\nmode = live\ncolour = red\n")
        with pytest.raises(ValueError, match="colour"):
            geo.load_scene(p)

    @pytest.mark.parametrize("text", ["mode = live\n", "[scene]\nmode live\n=\n", "[a]\n[b]\n",
                                      "[scene]\nf = abc\n"])
    def test_load_malformed(self, tmp_path, text):
        p = tmp_path / "s.ini"
        p.write_text(text)
        with pytest.raises(ValueError):
            geo.load_scene(p)

    def test_sweep_csv(self):
        scene = geo.load_scene(bundled_scene("print_attack"))
        obs = geo.observe(scene)
        lines = geo.sweep_csv(obs, geo.estimate_relative_depth(obs)).splitlines()
        assert lines[0] == "step,du_l,du_m,du_r,ratio_estimate,flag"
        assert len(lines) == scene.steps + 1 and lines[1].endswith(",0.0,planar")
