import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from simdiff import wavelet as W


def naive_lift(x):
    """Loop-based 5/3 analysis with explicit whole-sample symmetric extension."""
    x = list(map(float, x))
    n = len(x)

    def xe(i):  # mirror without repeating the edge sample
        if i < 0:
            i = -i
        if i >= n:
            i = 2 * (n - 1) - i
        return x[i]

    half = n // 2
    d = [xe(2 * k + 1) - 0.5 * (xe(2 * k) + xe(2 * k + 2)) for k in range(half)]

    def de(k):
        return d[-k - 1] if k < 0 else d[k]  # d[-1] mirrors to d[0]

    a = [xe(2 * k) + 0.25 * (de(k - 1) + d[k]) for k in range(half)]
    return np.array(a), np.array(d)


class TestLifting1D:
    def test_constant(self):
        a, d = W.dwt53_forward_1d([1, 1, 1, 1])
        np.testing.assert_array_equal(a, [1, 1])
        np.testing.assert_array_equal(d, [0, 0])

    def test_ramp_hand_computed(self):
        # with x[4] mirrored to x[2]: d = [1 - (0+2)/2, 3 - (2+2)/2] = [0, 1]; a = [0 + 0/2, 2 + (0+1)/4]
        a, d = W.dwt53_forward_1d([0, 1, 2, 3])
        np.testing.assert_allclose(d, [0.0, 1.0], atol=0)
        np.testing.assert_allclose(a, [0.0, 2.25], atol=0)

    def test_ramp_inverse(self):
        np.testing.assert_allclose(W.dwt53_inverse_1d([0.0, 2.25], [0.0, 1.0]), [0, 1, 2, 3], atol=1e-15)
        np.testing.assert_array_equal(W.dwt53_inverse_1d([1, 1], [0, 0]), [1, 1, 1, 1])
        np.testing.assert_array_equal(W.dwt53_inverse_1d(np.zeros(3), np.zeros(3)), np.zeros(6))

    @given(hnp.arrays(np.float64, st.sampled_from([2, 4, 6, 10, 64]), elements=st.floats(-1e3, 1e3)))
    def test_matches_naive(self, x):
        a, d = W.dwt53_forward_1d(x)
        ea, ed = naive_lift(x)
        np.testing.assert_allclose(a, ea, atol=1e-9)
        np.testing.assert_allclose(d, ed, atol=1e-9)

    def test_random_roundtrip(self):
        x = np.random.default_rng(0).standard_normal(64)
        np.testing.assert_allclose(W.dwt53_inverse_1d(*W.dwt53_forward_1d(x)), x, atol=1e-6)

    def test_odd_length_rejected(self):
        with pytest.raises(ValueError):
            W.dwt53_forward_1d([1, 2, 3])

    def test_mismatched_inverse_rejected(self):
        with pytest.raises(ValueError):
            W.dwt53_inverse_1d([1, 2], [1])

    @pytest.mark.parametrize("n", [2, 4, 8, 16])
    def test_matrices_represent_transform(self, n):
        x = np.random.default_rng(n).standard_normal(n)
        a, d = W.dwt53_forward_1d(x)
        np.testing.assert_allclose(W._analysis_matrix(n) @ x, np.concatenate([a, d]), atol=1e-12)
        np.testing.assert_allclose(W._synthesis_matrix(n) @ W._analysis_matrix(n), np.eye(n), atol=1e-12)


class TestForward2D:
    def test_shapes(self):
        x = np.random.default_rng(0).standard_normal((8, 8, 3))
        assert W.pack(x, 1).shape == (4, 4, 12)
        assert W.pack(x, 2).shape == (2, 2, 48)

    def test_constant_detail_exactly_zero(self):
        for levels in (1, 2, 3):
            packed = W.pack(np.full((16, 16, 2), -0.3), levels)
            assert np.all(packed[..., 2:] == 0.0)

    def test_single_level_layout(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 6, 1))
        rows = np.array([np.concatenate(naive_lift(r)) for r in x[..., 0]])  # width first
        full = np.array([np.concatenate(naive_lift(c)) for c in rows.T]).T  # then height
        ll, lh_hl_hh = full[:2, :3], (full[:2, 3:], full[2:, :3], full[2:, 3:])
        packed = W.pack(x, 1)
        np.testing.assert_allclose(packed[..., 0], ll, atol=1e-12)
        bands = sorted(lh_hl_hh, key=lambda b: 0)
        got = [packed[..., k] for k in (1, 2, 3)]
        for b in bands:
            assert any(np.allclose(b, g, atol=1e-12) for g in got)
        # low along width / high along height comes first
        np.testing.assert_allclose(packed[..., 1], full[2:, :3], atol=1e-12)

    @settings(max_examples=25)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(1, 3), st.integers(0, 1000))
    def test_linearity(self, a, b, levels, seed):
        rng = np.random.default_rng(seed)
        u, w = rng.standard_normal((2, 16, 16, 2))
        np.testing.assert_allclose(W.pack(a * u + b * w, levels), a * W.pack(u, levels) + b * W.pack(w, levels),
                                   atol=1e-5)

    def test_batch_dims(self):
        x = np.random.default_rng(2).standard_normal((3, 8, 8, 1))
        np.testing.assert_allclose(W.pack(x, 2)[1], W.pack(x[1], 2), atol=1e-14)

    def test_white_noise_finite(self):
        x = np.random.default_rng(3).standard_normal((512, 512, 1))
        out = W.pack(x, 3)
        assert out.shape == (64, 64, 64) and np.all(np.isfinite(out))


class TestInverse2D:
    @pytest.mark.parametrize("levels", [1, 2, 3])
    def test_roundtrip_random(self, levels):
        x = np.random.default_rng(levels).uniform(-1, 1, (32, 32, 3))
        assert np.max(np.abs(W.unpack(W.pack(x, levels), levels) - x)) <= 1e-5

    def test_roundtrip_integer_image(self):
        x = np.random.default_rng(4).integers(0, 256, (32, 32, 3))
        assert np.max(np.abs(W.unpack(W.pack(x, 3), 3) - x)) <= 1e-5

    def test_zero_stack(self):
        np.testing.assert_array_equal(W.unpack(np.zeros((2, 2, 16)), 2), np.zeros((8, 8, 1)))

    def test_bad_channel_count(self):
        with pytest.raises(ValueError):
            W.dwt53_inverse_2d(W.DwtStack(1, 8, 8, np.zeros((4, 4, 5))))


class TestAdjoints:
    @pytest.mark.parametrize("levels", [1, 2])
    def test_inner_products(self, levels):
        rng = np.random.default_rng(levels)
        x = rng.standard_normal((2, 16, 8, 3))
        g = rng.standard_normal(W.pack(x, levels).shape)
        np.testing.assert_allclose(np.sum(W.pack(x, levels) * g), np.sum(x * W.pack_adjoint(g, levels, 3)), rtol=1e-10)
        y = rng.standard_normal(W.pack(x, levels).shape)
        h = rng.standard_normal(x.shape)
        np.testing.assert_allclose(np.sum(W.unpack(y, levels) * h), np.sum(y * W.unpack_adjoint(h, levels)), rtol=1e-10)


class TestSpaceToDepth:
    def test_identity(self):
        x = np.random.default_rng(0).standard_normal((4, 4, 2))
        np.testing.assert_array_equal(W.space_to_depth(x, 1), x)

    def test_index_layout(self):
        x = np.arange(16.0).reshape(4, 4, 1)
        out = W.space_to_depth(x, 2)
        assert out.shape == (2, 2, 4)
        np.testing.assert_array_equal(out[0, 0], [0, 1, 4, 5])

    @given(st.sampled_from([1, 2, 4]), st.integers(1, 3), st.integers(0, 99))
    def test_bijection(self, p, c, seed):
        x = np.random.default_rng(seed).standard_normal((8, 8, c))
        np.testing.assert_array_equal(W.depth_to_space(W.space_to_depth(x, p), p), x)

    def test_indivisible(self):
        with pytest.raises(ValueError):
            W.space_to_depth(np.zeros((6, 6, 1)), 4)
