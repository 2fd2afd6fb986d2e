"""Adadelta and the two training stages at toy scale."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fasdepth import tensor as T
from fasdepth import trainer as tr
from fasdepth.backbone import Backbone, BackboneConfig
from fasdepth.optim import adadelta_step, init_adadelta
from fasdepth.stpm import Stpm, StpmConfig
from fasdepth.synth import make_dataset, make_live_clip
from fasdepth.trainer import TrainConfig, TrainingError


def adadelta_oracle(g_seq, rho, eps, lr=1.0):
    """Scalar loop over the textbook recurrences; returns the update sequence."""
    eg = edx = 0.0
    out = []
    for g in g_seq:
        eg = rho * eg + (1 - rho) * g * g
        dx = math.sqrt(edx + eps) / math.sqrt(eg + eps) * g
        edx = rho * edx + (1 - rho) * dx * dx
        out.append(lr * dx)
    return out


def digest(params):
    return T.params_digest(sorted(params.items()))


@pytest.fixture(scope="module")
def clips():
    return make_dataset(4, 7)


@pytest.fixture(scope="module")
def backbone():
    return Backbone.create(BackboneConfig.desk(), seed=0)


@pytest.fixture
def stpm():
    return Stpm.create(StpmConfig.desk(), seed=1)


class TestAdadelta:
    def test_zero_gradient(self):
        p = {"w": np.array([1.0, -2.0])}
        state = {"w": (np.array([0.4, 0.2]), np.array([0.1, 0.3]))}
        new, st_ = adadelta_step(p, {"w": np.zeros(2)}, state)
        assert np.array_equal(new["w"], p["w"])
        np.testing.assert_array_equal(st_["w"][0], 0.95 * state["w"][0])
        np.testing.assert_array_equal(st_["w"][1], 0.95 * state["w"][1])

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5).filter(lambda g: g != 0), st.floats(0, 1), st.floats(0, 1))
    def test_rho_zero_closed_form(self, g, acc_g, acc_dx):
        eps = 1e-8
        p = {"w": np.array([0.0])}
        new, _ = adadelta_step(p, {"w": np.array([g])}, {"w": (np.array([acc_g]), np.array([acc_dx]))}, rho=0.0)
        expect = math.sqrt((acc_dx + eps) / (g * g + eps)) * abs(g)
        assert abs(-new["w"][0]) == pytest.approx(expect, rel=1e-12)
        assert np.sign(-new["w"][0]) == np.sign(g)

    @pytest.mark.parametrize("g", [0.3, -0.3, 2.0])
    def test_matches_loop_oracle_1000_steps(self, g):
        p = {"w": np.array([0.0])}
        state = init_adadelta(p)
        updates = []
        for _ in range(1000):
            new, state = adadelta_step(p, {"w": np.array([g])}, state)
            updates.append(p["w"][0] - new["w"][0])
            p = new
        np.testing.assert_allclose(updates, adadelta_oracle([g] * 1000, 0.95, 1e-8), rtol=1e-12)

    @pytest.mark.parametrize("g", [0.5, -0.5, 1.5])
    def test_constant_gradient_fixed_point(self, g):
        # the steady state of E[dx^2] = u^2 forces |u| = |g|; a large eps reaches it quickly
        u = adadelta_oracle([g] * 20000, 0.95, 1.0)
        assert abs(u[-1]) == pytest.approx(abs(g), rel=1e-3)
        p = {"w": np.array([0.0])}
        state = init_adadelta(p)
        for _ in range(20000):
            new, state = adadelta_step(p, {"w": np.array([g])}, state, eps=1.0)
            last, p = p["w"][0] - new["w"][0], new
        assert last == pytest.approx(u[-1], rel=1e-9)

    def test_sign_symmetry(self):
        a = adadelta_oracle([0.7] * 50, 0.95, 1e-8)
        b = adadelta_oracle([-0.7] * 50, 0.95, 1e-8)
        assert a == [-v for v in b]

    def test_shape_mismatch(self):
        p = {"w": np.zeros(3)}
        with pytest.raises(ValueError, match="shape"):
            adadelta_step(p, {"w": np.zeros(2)}, init_adadelta(p))

    def test_missing_gradient_untouched(self):
        p = {"a": np.ones(2), "b": np.ones(2)}
        new, _ = adadelta_step(p, {"a": np.ones(2)}, init_adadelta(p))
        assert new["b"] is p["b"]


class TestConfig:
    def test_full_values(self):
        s1, s2 = TrainConfig.full(1), TrainConfig.full(2)
        assert (s1.lr, s1.batch_size, s2.lr, s2.batch_size) == (1e-4, 48, 1e-2, 2)
        assert (s1.rho, s1.eps, s1.n_frames, s1.interval, s1.alpha, s1.beta) == (0.95, 1e-8, 5, 3, 0.6, 0.8)

    @pytest.mark.parametrize("kw", [dict(stage=3), dict(n_frames=1), dict(steps=-1), dict(batch_size=0),
                                    dict(reduction="max"), dict(beta=1.5), dict(alpha=-0.1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**{"stage": 1, **kw})


class TestStage1:
    def test_zero_steps_unchanged(self, backbone, clips):
        model, curve = tr.train_stage1(TrainConfig.desk(1, steps=0), backbone, tr.stage1_pairs(clips))
        assert digest(model.params) == digest(backbone.params)
        assert len(curve) == 1 and curve[0]["step"] == 0

    def test_deterministic(self, backbone, clips):
        cfg = TrainConfig.desk(1, steps=5, seed=3)
        a_model, a = tr.train_stage1(cfg, backbone, tr.stage1_pairs(clips))
        b_model, b = tr.train_stage1(cfg, backbone, tr.stage1_pairs(clips))
        assert a == b and digest(a_model.params) == digest(b_model.params)

    def test_input_not_mutated(self, backbone, clips):
        before = digest(backbone.params)
        tr.train_stage1(TrainConfig.desk(1, steps=2), backbone, tr.stage1_pairs(clips))
        assert digest(backbone.params) == before

    def test_curve_columns(self, backbone, clips):
        _, curve = tr.train_stage1(TrainConfig.desk(1, steps=3), backbone, tr.stage1_pairs(clips))
        assert [r["step"] for r in curve] == [0, 1, 2, 3]
        assert all(r["binary"] == 0.0 and r["overall"] == r["edl"] + r["cdl"] for r in curve)

    def test_loss_falls(self, backbone):
        clip = make_live_clip(1)
        _, curve = tr.train_stage1(TrainConfig.desk(1, steps=60, batch_size=1), backbone,
                                   [(clip.frames[0], clip.depth[0])])
        assert curve[-1]["overall"] < 0.5 * curve[0]["overall"]

    def test_empty(self, backbone):
        with pytest.raises(ValueError, match="empty"):
            tr.train_stage1(TrainConfig.desk(1), backbone, [])

    def test_wrong_stage(self, backbone, clips):
        with pytest.raises(ValueError):
            tr.train_stage1(TrainConfig.desk(2), backbone, tr.stage1_pairs(clips))

    def test_nan_aborts_with_step(self, backbone, clips, monkeypatch):
        real = tr.stage1_loss
        calls = {"n": 0}

        def poisoned(*a, **k):
            e, c = real(*a, **k)
            calls["n"] += 1
            return (T._wrap(np.array(np.nan)), c) if calls["n"] == 3 else (e, c)

        monkeypatch.setattr(tr, "stage1_loss", poisoned)
        with pytest.raises(TrainingError, match="non-finite loss at step 2"):
            tr.train_stage1(TrainConfig.desk(1, steps=5), backbone, tr.stage1_pairs(clips))


class TestStage2:
    def test_backbone_frozen(self, backbone, stpm, clips):
        before = digest(backbone.params)
        tr.train_stage2(TrainConfig.desk(2, steps=20), backbone, stpm, clips)
        assert digest(backbone.params) == before

    def test_gru_parameters_move(self, backbone, stpm, clips):
        model, _ = tr.train_stage2(TrainConfig.desk(2, steps=1), backbone, stpm, clips)
        for name in ("gru.w_u", "gru.w_r", "gru.w_h", "tdepth.w", "fcs.w2"):
            assert not np.array_equal(model.params[name], stpm.params[name])

    def test_zero_steps_unchanged(self, backbone, stpm, clips):
        model, curve = tr.train_stage2(TrainConfig.desk(2, steps=0), backbone, stpm, clips)
        assert digest(model.params) == digest(stpm.params) and len(curve) == 1

    def test_deterministic(self, backbone, stpm, clips):
        cfg = TrainConfig.desk(2, steps=4, seed=9)
        a_model, a = tr.train_stage2(cfg, backbone, stpm, clips)
        b_model, b = tr.train_stage2(cfg, backbone, stpm, clips)
        assert a == b and digest(a_model.params) == digest(b_model.params)

    def test_overall_is_weighted_sum(self, backbone, stpm, clips):
        _, curve = tr.train_stage2(TrainConfig.desk(2, steps=2), backbone, stpm, clips)
        for r in curve:
            assert r["overall"] == pytest.approx(0.8 * r["binary"] + 0.2 * (r["edl"] + r["cdl"]), rel=1e-12)

    def test_precomputed_features_match(self, backbone, stpm, clips):
        cfg = TrainConfig.desk(2, steps=2)
        feats = [tr.clip_features(backbone, c) for c in clips]
        assert tr.train_stage2(cfg, backbone, stpm, clips, feats)[1] == tr.train_stage2(cfg, backbone, stpm, clips)[1]

    def test_errors(self, backbone, stpm, clips):
        with pytest.raises(ValueError, match="empty"):
            tr.train_stage2(TrainConfig.desk(2), backbone, stpm, [])
        with pytest.raises(ValueError):
            tr.train_stage2(TrainConfig.desk(1), backbone, stpm, clips)
        with pytest.raises(ValueError, match="frames"):
            tr.train_stage2(TrainConfig.desk(2, n_frames=3), backbone, stpm, clips)


class TestScoring:
    def test_records(self, backbone, stpm, clips):
        recs = tr.score_records(backbone, stpm, clips)
        assert [r.label for r in recs] == ["live", "attack", "live", "attack"]
        assert [r.pai for r in recs] == ["", "print", "", "replay"]
        assert all(0.0 <= r.score <= 1.0 for r in recs)

    def test_score_is_deterministic(self, backbone, stpm, clips):
        assert tr.score_clip(backbone, stpm, clips[0]) == tr.score_clip(backbone, stpm, clips[0])
