import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simdiff.diffusion import (LossConfig, LossTarget, Parametrization as P, convert, diffuse, drop_conditioning,
                               init_loss_oracle, multiscale_loss, training_loss, v_target)
from simdiff.engine import Tensor, ops, precision
from simdiff.schedule import ScheduleKind, ScheduleSpec, alpha_sigma


class TestDiffuse:
    def test_clean_and_pure_noise(self):
        x = np.array([0.3, -0.2])
        eps = np.array([1.0, 2.0])
        np.testing.assert_array_equal(diffuse(x, 1.0, 0.0, eps), x)
        np.testing.assert_array_equal(diffuse(np.zeros(2), 0.6, 0.8, eps), 0.8 * eps)

    def test_substitution(self):
        np.testing.assert_allclose(diffuse(np.array([1.0]), 0.8, 0.6, np.array([0.5])), [1.1])

    def test_per_example_coefficients(self):
        x = np.ones((2, 2, 2, 1))
        z = diffuse(x, np.array([1.0, 0.5]), np.array([0.0, 0.0]), np.zeros_like(x))
        np.testing.assert_array_equal(z[1], 0.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            diffuse(np.zeros(3), 1.0, 0.0, np.zeros(4))


class TestConvert:
    def test_hand_computed_chain(self):
        a, s = 0.8, 0.6
        z = diffuse(np.array([1.0]), a, s, np.array([0.5]))
        v = v_target(np.array([1.0]), np.array([0.5]), a, s)
        np.testing.assert_allclose(v, [-0.2])
        np.testing.assert_allclose(convert(v, P.V, P.EPSILON, z, a, s), [0.5])
        np.testing.assert_allclose(convert(v, P.V, P.X, z, a, s), [1.0])

    @pytest.mark.parametrize("p", list(P))
    def test_identity(self, p):
        pred = np.array([0.1, 0.2])
        assert convert(pred, p, p, pred, 0.6, 0.8) is pred

    @settings(max_examples=40)
    @given(st.floats(-8, 8), st.sampled_from(list(P)), st.sampled_from(list(P)), st.integers(0, 1000))
    def test_roundtrip(self, lam, a_p, b_p, seed):
        rng = np.random.default_rng(seed)
        ab = alpha_sigma(lam)
        z, pred = rng.standard_normal((2, 3, 4))
        there = convert(pred, a_p, b_p, z, ab.alpha, ab.sigma)
        back = convert(there, b_p, a_p, z, ab.alpha, ab.sigma)
        np.testing.assert_allclose(back, pred, atol=1e-6 * max(1, 1 / ab.alpha, 1 / ab.sigma))

    def test_division_by_zero_reported(self):
        with pytest.raises(ZeroDivisionError):
            convert(np.ones(2), P.EPSILON, P.X, np.ones(2), 0.0, 1.0)
        with pytest.raises(ZeroDivisionError):
            convert(np.ones(2), P.X, P.V, np.ones(2), 1.0, 0.0)

    def test_tensor_path_matches_numpy(self):
        rng = np.random.default_rng(0)
        z, pred = rng.standard_normal((2, 2, 3, 3, 1))
        a, s = np.array([0.6, 0.9]), np.array([0.8, np.sqrt(1 - 0.81)])
        with precision(np.float64):
            t = convert(Tensor(pred), P.V, P.EPSILON, z, a, s).data
        np.testing.assert_allclose(t, convert(pred, P.V, P.EPSILON, z, a, s), atol=1e-12)


class TestMultiscale:
    def test_weights(self):
        cfg = LossConfig(multiscale=True, base_resolution=32)
        assert cfg.resolutions(128) == [32, 64, 128]
        assert cfg.resolutions(16) == [16]
        # per-resolution weights 1/s: feed a residual that is constant, so every pooled MSE is 1
        eps = np.ones((1, 128, 128, 1))
        with precision(np.float64):
            total = multiscale_loss(eps, np.zeros_like(eps), [32, 64, 128]).item()
        np.testing.assert_allclose(total, 1 / 32 + 1 / 64 + 1 / 128, rtol=1e-14)

    def test_single_resolution(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((2, 2, 16, 16, 3))
        with precision(np.float64):
            got = multiscale_loss(a, b, [16]).item()
        np.testing.assert_allclose(got, np.mean((a - b) ** 2) / 16, rtol=1e-14)

    def test_zero_when_equal(self):
        a = np.random.default_rng(1).standard_normal((1, 8, 8, 1))
        assert multiscale_loss(a, a, [2, 4, 8]).item() == 0.0

    def test_pooled_residual_linearity(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((2, 1, 16, 16, 2))
        with precision(np.float64):
            lhs = ops.avg_pool2d(Tensor(a - b), 4).data
            rhs = ops.avg_pool2d(Tensor(a), 4).data - ops.avg_pool2d(Tensor(b), 4).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)

    def test_largest_must_be_native(self):
        with pytest.raises(ValueError):
            multiscale_loss(np.zeros((1, 8, 8, 1)), np.zeros((1, 8, 8, 1)), [2, 4])


def zero_model(z, logsnr, ids, rng):
    return Tensor(np.zeros(z.shape, dtype=np.float32))


class TestTrainingLoss:
    def test_init_loss_matches_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, (4096, 4, 4, 1)).astype(np.float32)
        spec = ScheduleSpec(ScheduleKind.SHIFTED, image_d=16, noise_d=8)
        loss, _ = training_loss(x, None, zero_model, spec, LossConfig(), rng)
        oracle = init_loss_oracle(x, spec)
        assert abs(loss.item() / oracle - 1) <= 0.02

    def test_perfect_eps_gives_zero(self):
        spec = ScheduleSpec()

        def oracle_model(z, logsnr, ids, rng):
            # replay the same draws the loss made to recover eps, then return the matching v
            r = np.random.default_rng(5)
            t = r.uniform(0, 1, z.shape[0])
            eps = r.standard_normal(z.shape).astype(np.float32)
            ab = alpha_sigma(spec.logsnr(t))
            x = (z - ab.sigma[:, None, None, None] * eps) / ab.alpha[:, None, None, None]
            return Tensor(v_target(x, eps, ab.alpha, ab.sigma))

        x = np.random.default_rng(1).uniform(-1, 1, (8, 4, 4, 1)).astype(np.float32)
        loss, _ = training_loss(x, None, oracle_model, spec, LossConfig(target=LossTarget.EPS_MSE),
                                np.random.default_rng(5))
        assert loss.item() < 1e-8

    @pytest.mark.parametrize("seed", range(100))
    def test_finite_positive(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, (4, 4, 4, 1)).astype(np.float32)
        loss, _ = training_loss(x, np.zeros(4, int), zero_model, ScheduleSpec(), LossConfig(), rng)
        assert np.isfinite(loss.item()) and loss.item() > 0

    def test_conditioning_dropout_rate(self):
        ids, dropped = drop_conditioning(np.zeros(100_000, int), 0.1, 7, np.random.default_rng(0))
        assert abs(dropped.mean() - 0.1) < 0.005
        assert np.all(ids[dropped] == 7) and np.all(ids[~dropped] == 0)

    def test_unconditional_passes_none(self):
        seen = []

        def model(z, logsnr, ids, rng):
            seen.append(ids)
            return zero_model(z, logsnr, ids, rng)

        training_loss(np.zeros((2, 4, 4, 1), np.float32), None, model, ScheduleSpec(), LossConfig(),
                      np.random.default_rng(0))
        assert seen == [None]

    def test_multiscale_and_elbo_options_run(self):
        x = np.random.default_rng(0).uniform(-1, 1, (2, 16, 16, 1)).astype(np.float32)
        cfg = LossConfig(multiscale=True, base_resolution=4, weighting="elbo")
        loss, _ = training_loss(x, None, zero_model, ScheduleSpec(), cfg, np.random.default_rng(0))
        assert np.isfinite(loss.item())
