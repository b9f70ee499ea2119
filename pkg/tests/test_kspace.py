import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptrecon.diffmath import ops
from adaptrecon.kspace import (CoilSensitivities, KSpaceVolume, SamplingMask, adjoint_encode,
                               data_consistency_step, forward_encode, make_mask, rss,
                               zero_filled_recon)


def random_problem(rng, t=2, c=3, n=8):
    x = rng.standard_normal((t, n, n)) + 1j * rng.standard_normal((t, n, n))
    s = rng.standard_normal((c, n, n)) + 1j * rng.standard_normal((c, n, n))
    m = (rng.random((t, n, n)) < 0.5).astype(float)
    y = rng.standard_normal((t, c, n, n)) + 1j * rng.standard_normal((t, c, n, n))
    return x, s, m, y


def real_inner(a, b):
    return float(np.real(np.vdot(a, b)))


class TestOperators:
    def test_adjoint_identity_100_trials(self):
        worst = 0.0
        for trial in range(100):
            rng = np.random.default_rng(trial)
            x, s, m, y = random_problem(rng, c=1 if trial % 2 else 4)
            lhs = real_inner(forward_encode(x, s, m).data, y)
            rhs = real_inner(x, adjoint_encode(y, s, m).data)
            worst = max(worst, abs(lhs - rhs))
        assert worst <= 1e-10

    def test_linearity(self, rng):
        x1, s, m, _ = random_problem(rng)
        x2 = rng.standard_normal(x1.shape) + 1j * rng.standard_normal(x1.shape)
        a, b = 1.7 - 0.3j, -0.4 + 2j
        lhs = forward_encode(a * x1 + b * x2, s, m).data
        rhs = a * forward_encode(x1, s, m).data + b * forward_encode(x2, s, m).data
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)

    def test_single_coil_full_mask_reduces_to_fft(self, rng):
        x = rng.standard_normal((2, 8, 8)) + 0j
        ones = np.ones((1, 8, 8), complex)
        y = forward_encode(x, ones, np.ones((8, 8))).data
        np.testing.assert_allclose(y[:, 0], np.fft.fft2(x, norm="ortho"), atol=1e-13)
        back = adjoint_encode(y, ones).data
        np.testing.assert_allclose(back, x, atol=1e-13)

    def test_zero_in_zero_out(self, rng):
        _, s, m, _ = random_problem(rng)
        assert not np.any(forward_encode(np.zeros((2, 8, 8)), s, m).data)
        assert not np.any(adjoint_encode(np.zeros((2, 3, 8, 8), complex), s).data)

    def test_shape_mismatch(self, rng):
        x, s, m, _ = random_problem(rng)
        with pytest.raises(ValueError):
            forward_encode(x, s[:, :4, :4], m)
        with pytest.raises(ValueError):
            adjoint_encode(np.zeros((2, 2, 8, 8)), s)

    def test_fft_delta_parseval_round_trip(self, rng):
        delta = np.zeros((8, 8))
        delta[0, 0] = 1
        np.testing.assert_allclose(ops.fft2(delta).data, np.full((8, 8), 1 / 8), atol=1e-15)
        x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        k = ops.fft2(x).data
        assert abs(np.sum(np.abs(k) ** 2) - np.sum(np.abs(x) ** 2)) <= 1e-12 * np.sum(np.abs(x) ** 2)
        back = ops.ifft2(k).data
        assert np.linalg.norm(back - x) <= 1e-12 * np.linalg.norm(x)

    def test_rss(self, rng):
        np.testing.assert_allclose(rss(np.full((2, 4, 4), [[[3.0]], [[4.0]]])).data, 5.0)
        x = rng.standard_normal((1, 8, 8)) + 1j * rng.standard_normal((1, 8, 8))
        np.testing.assert_allclose(rss(x).data, np.abs(x[0]), atol=1e-14)
        x = rng.standard_normal((4, 8, 8)) + 1j * rng.standard_normal((4, 8, 8))
        np.testing.assert_allclose(rss(x).data, np.sqrt(np.sum(x.real ** 2 + x.imag ** 2, axis=0)))
        assert np.all(rss(x).data >= 0)


class TestDataConsistency:
    def test_zero_step_is_identity(self, rng):
        x, s, m, y = random_problem(rng)
        out = data_consistency_step(x, y, s, m, 0.0, np.ones_like(x))
        np.testing.assert_array_equal(out.data, x)

    def test_fixed_point_full_sampling(self, rng):
        x, _, _, _ = random_problem(rng)
        ones = np.ones((1, 8, 8), complex)
        y = forward_encode(x, ones, np.ones((8, 8))).data
        x0 = adjoint_encode(y, ones).data
        out = data_consistency_step(x0, y, ones, np.ones((8, 8)), 1.0, np.zeros_like(x0))
        np.testing.assert_allclose(out.data, x0, atol=1e-13)

    def test_matches_direct_formula(self, rng):
        x, s, m, y = random_problem(rng)
        y = y * m[:, None]
        reg = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
        lam = 0.37
        ax = np.fft.fft2(x[:, None] * s[None], norm="ortho") * m[:, None]
        ah = np.sum(np.conj(s)[None] * np.fft.ifft2((ax - y) * m[:, None], norm="ortho"), axis=1)
        expected = x - lam * (ah + reg)
        np.testing.assert_allclose(data_consistency_step(x, y, s, m, lam, reg).data, expected, atol=1e-12)

    def test_negative_step_rejected(self, rng):
        x, s, m, y = random_problem(rng)
        with pytest.raises(ValueError):
            data_consistency_step(x, y, s, m, -0.1, np.zeros_like(x))


class TestZeroFilled:
    def test_lossless_when_fully_sampled(self, rng):
        gt = np.abs(rng.standard_normal((2, 8, 8)))
        s = rng.standard_normal((3, 8, 8)) + 1j * rng.standard_normal((3, 8, 8))
        s /= np.sqrt(np.sum(np.abs(s) ** 2, axis=0))
        y = np.fft.fft2(gt[:, None] * s[None], norm="ortho")
        np.testing.assert_allclose(zero_filled_recon(y, CoilSensitivities(s)), gt, atol=1e-10)

    def test_zero_input(self):
        mask = SamplingMask("uniform", np.ones((8, 8)), 1.0, 0)
        assert not np.any(zero_filled_recon(KSpaceVolume(np.zeros((1, 2, 8, 8), complex), mask)))


class TestMasks:
    @pytest.mark.parametrize("kind,accel", [("uniform", 4), ("uniform", 8), ("kt_gaussian", 4),
                                            ("kt_gaussian", 6), ("kt_gaussian", 8),
                                            ("radial", 8), ("radial", 16), ("radial", 24)])
    def test_accel_within_ten_percent_over_seeds(self, kind, accel):
        for seed in range(20):
            m = make_mask(kind, (3, 64, 64), accel, 8, seed=seed)
            assert abs(m.achieved_accel - accel) <= 0.1 * accel, (seed, m.achieved_accel)

    def test_uniform_r8_column_count(self):
        m = make_mask("uniform", (1, 64, 64), 8, 8)
        cols = m.centered[0].any(axis=0)
        assert 7.2 <= 64 / cols.sum() <= 8.8
        assert cols[28:36].all()  # ACS block stays in the centre
        # columns are fully sampled lines
        assert np.array_equal(m.centered[0], np.broadcast_to(cols, (64, 64)).astype(m.pattern.dtype))

    def test_uniform_r4_spreads_columns(self):
        m = make_mask("uniform", (1, 64, 64), 4, 8)
        cols = np.flatnonzero(m.centered[0].any(axis=0))
        outside = [c for c in cols if not 28 <= c < 36]
        assert len(cols) == 16 and len(outside) == 8
        assert np.ptp(outside) > 40

    def test_infeasible_budget(self):
        with pytest.raises(ValueError):
            make_mask("uniform", (1, 64, 64), 16, 8)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            make_mask("spiral", (1, 64, 64), 8)
        with pytest.raises(ValueError):
            make_mask("uniform", (1, 64, 64), 0.5)

    def test_kt_deterministic_and_varies_over_time(self):
        a = make_mask("kt_gaussian", (5, 64, 64), 6, 8, seed=3)
        b = make_mask("kt_gaussian", (5, 64, 64), 6, 8, seed=3)
        np.testing.assert_array_equal(a.pattern, b.pattern)
        assert not np.array_equal(a.pattern[0], a.pattern[1])
        assert a.centered[:, :, 28:36].all()

    def test_radial_roughly_point_symmetric(self):
        m = make_mask("radial", (1, 64, 64), 8, seed=0)
        c = m.centered[0]
        rot = np.roll(np.rot90(c, 2), (1, 1), axis=(0, 1))  # DC at (32, 32)
        assert np.mean(c != rot) < 0.02
        assert m.acs_lines == 0

    @settings(max_examples=15, deadline=None)
    @given(st.sampled_from(["uniform", "kt_gaussian", "radial"]), st.integers(0, 2 ** 31 - 1))
    def test_masks_are_binary_with_dc(self, kind, seed):
        m = make_mask(kind, (2, 64, 64), 6 if kind != "radial" else 8, 8, seed=seed)
        assert set(np.unique(m.pattern)) <= {0.0, 1.0}
        assert np.all(m.pattern[:, 0, 0] == 1)
