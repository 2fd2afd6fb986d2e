"""EDL, CDL, binary and overall losses."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fasdepth import losses as L
from fasdepth import tensor as T
from fasdepth.tensor import Tensor

from conftest import fd_check

maps = arrays(np.float64, (6, 6), elements=st.floats(0, 1, allow_nan=False))
# multiples of 1/64 in [0, 1] plus an offset of 1/4 stay exact in double precision
dyadic = arrays(np.float64, (6, 6), elements=st.integers(0, 64).map(lambda k: k / 64))


def cdl_oracle(p, g):
    """Slide each of the eight neighbour-minus-centre masks explicitly."""
    H, W = p.shape
    pp, gp = np.pad(p, 1), np.pad(g, 1)
    total = 0.0
    for di, dj in [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]:
        for i in range(H):
            for j in range(W):
                rp = pp[i + 1 + di, j + 1 + dj] - pp[i + 1, j + 1]
                rg = gp[i + 1 + di, j + 1 + dj] - gp[i + 1, j + 1]
                total += (rp - rg) ** 2
    return total


class TestKernels:
    def test_structure(self):
        k = L.CDL_KERNELS
        assert k.shape == (8, 3, 3)
        assert np.all(k.reshape(8, -1).sum(axis=1) == 0)
        assert all(np.count_nonzero(ki) == 2 and ki[1, 1] == -1 for ki in k)
        plus = [tuple(np.argwhere(ki == 1)[0]) for ki in k]
        assert plus == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1), (2, 2)]

    def test_check_rejects_bad_kernels(self):
        bad = L.CDL_KERNELS.copy()
        bad[3, 0, 0] = 0.5
        with pytest.raises(ValueError, match="kernel 3"):
            L.check_cdl_kernels(bad)
        dup = L.CDL_KERNELS.copy()
        dup[1] = dup[0]
        with pytest.raises(ValueError, match="distinct"):
            L.check_cdl_kernels(dup)


class TestEdl:
    def test_equal_zero(self, rng):
        d = rng.uniform(size=(32, 32))
        assert L.edl(d, d).item() == 0.0

    def test_offset_tenth(self):
        g = np.full((32, 32), 0.3)
        assert L.edl(g + 0.1, g).item() == pytest.approx(10.24, rel=1e-12)

    def test_mean_reduction(self):
        g = np.zeros((4, 4))
        assert L.edl(g + 0.5, g, reduction="mean").item() == 0.25

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            L.edl(np.zeros((4, 4)), np.zeros((5, 5)))

    def test_unknown_reduction(self):
        with pytest.raises(ValueError):
            L.edl(np.zeros((2, 2)), np.zeros((2, 2)), reduction="max")

    @settings(max_examples=50, deadline=None)
    @given(maps, maps)
    def test_symmetric_nonnegative(self, a, b):
        assert L.edl(a, b).item() == L.edl(b, a).item() >= 0
        assert (L.edl(a, b).item() == 0) == np.array_equal(a, b)

    def test_gradient_closed_form(self, rng):
        p, g = rng.uniform(size=(5, 5)), rng.uniform(size=(5, 5))
        err = fd_check(lambda t: L.edl(t, g), p)
        assert err < 1e-4
        with T.GradTape() as tape:
            pt = Tensor(p)
            tape.watch(pt)
            loss = L.edl(pt, g)
        np.testing.assert_allclose(T.backward(tape, loss)[pt], L.edl_grad(p, g), atol=1e-14)


class TestCdl:
    def test_equal_zero(self, rng):
        d = rng.uniform(size=(8, 8))
        assert L.cdl(d, d).item() == 0.0

    def test_impulse_matches_oracle(self):
        p = np.zeros((5, 5))
        p[2, 2] = 1.0
        g = np.zeros((5, 5))
        assert L.cdl(p, g).item() == cdl_oracle(p, g) == 16.0

    def test_corner_impulse(self):
        p = np.zeros((4, 4))
        p[0, 0] = 1.0
        assert L.cdl(p, np.zeros((4, 4))).item() == pytest.approx(cdl_oracle(p, np.zeros((4, 4))), abs=1e-15)

    @settings(max_examples=25, deadline=None)
    @given(maps, maps)
    def test_random_matches_oracle(self, p, g):
        assert L.cdl(p, g).item() == pytest.approx(cdl_oracle(p, g), rel=1e-12, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(dyadic, dyadic, st.integers(-8, 8).map(lambda k: k / 4))
    def test_joint_offset_invariant_exact(self, p, g, c):
        assert L.cdl(p + c, g + c).item() == L.cdl(p, g).item()

    def test_interior_offset_invariant(self, rng):
        p, g = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
        a = L.contrast(Tensor((p + 0.7)[None, None])).data - L.contrast(Tensor(g[None, None])).data
        b = L.contrast(Tensor(p[None, None])).data - L.contrast(Tensor(g[None, None])).data
        np.testing.assert_allclose(a[..., 1:-1, 1:-1], b[..., 1:-1, 1:-1], atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(maps, maps)
    def test_symmetric(self, a, b):
        assert L.cdl(a, b).item() == L.cdl(b, a).item() >= 0

    def test_gradient(self, seed20):
        rng = np.random.default_rng(seed20)
        p, g = rng.uniform(size=(6, 6)), rng.uniform(size=(6, 6))
        assert fd_check(lambda t: L.cdl(t, g), p) < 1e-4
        with T.GradTape() as tape:
            pt = Tensor(p)
            tape.watch(pt)
            loss = L.cdl(pt, g)
        np.testing.assert_allclose(T.backward(tape, loss)[pt], L.cdl_grad(p, g), atol=1e-12)


class TestBinary:
    @pytest.fixture
    def fcs(self, rng):
        return {k: Tensor(v) for k, v in L.init_fcs(rng, 4, hidden=6).items()}

    def test_half_half_is_ln2(self):
        assert L.cross_entropy(Tensor([[0.5, 0.5]]), [1]).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_confident_is_clamped(self):
        v = L.cross_entropy(Tensor([[0.0, 1.0]]), [1]).item()
        assert v == pytest.approx(1e-12, rel=1e-3)
        assert L.cross_entropy(Tensor([[1.0, 0.0]]), [1]).item() == pytest.approx(-math.log(1e-12))

    def test_empty_maps(self, fcs):
        with pytest.raises(ValueError, match="empty"):
            L.binary_loss([], [1], fcs)

    def test_nonnegative(self, fcs, rng):
        maps_ = [rng.uniform(size=(2, 1, 4, 4)) for _ in range(4)]
        assert L.binary_loss(maps_, [0, 1], fcs).item() >= 0

    def test_uses_average_map(self, fcs, rng):
        maps_ = [rng.uniform(size=(1, 1, 4, 4)) for _ in range(4)]
        avg = np.mean(maps_, axis=0)
        assert L.binary_loss(maps_, [1], fcs).item() == pytest.approx(L.binary_loss([avg], [1], fcs).item(), abs=1e-14)

    @pytest.mark.parametrize("name", ["fcs.w1", "fcs.b1", "fcs.w2", "fcs.b2"])
    def test_fcs_gradients(self, fcs, rng, name):
        maps_ = [Tensor(rng.uniform(size=(2, 1, 4, 4))) for _ in range(3)]

        def loss(w):
            p = dict(fcs)
            p[name] = w
            return L.binary_loss(maps_, [0, 1], p)

        assert fd_check(loss, fcs[name].data) < 1e-4

    def test_bad_labels(self):
        with pytest.raises(ValueError):
            L.cross_entropy(Tensor([[0.5, 0.5]]), [2])


class TestOverall:
    def test_default_weight(self):
        total = L.overall_loss(1.0, 2.0, 3.0, 0.8)
        assert total == 0.8 * 1.0 + (1 - 0.8) * (2.0 + 3.0)
        assert total == pytest.approx(1.8, abs=2 * math.ulp(1.8))

    def test_extremes(self):
        assert L.overall_loss(7.0, 2.0, 3.0, 0.0) == 5.0
        assert L.overall_loss(7.0, 2.0, 3.0, 1.0) == 7.0

    def test_bad_beta(self):
        with pytest.raises(ValueError):
            L.overall_loss(1, 1, 1, 1.2)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 5), st.floats(0.01, 0.99))
    def test_monotone(self, b, e, c, bump, beta):
        base = L.overall_loss(b, e, c, beta)
        assert L.overall_loss(b + bump, e, c, beta) >= base
        assert L.overall_loss(b, e + bump, c, beta) >= base
        assert L.overall_loss(b, e, c + bump, beta) >= base

    def test_tensor_inputs(self):
        out = L.overall_loss(Tensor(1.0), Tensor(2.0), Tensor(3.0), 0.8)
        assert out.item() == L.overall_loss(1.0, 2.0, 3.0, 0.8)
