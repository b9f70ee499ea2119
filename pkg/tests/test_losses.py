import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adaptrecon.adapters import AdapterRegistry, adapter_param_norm
from adaptrecon.diffmath import grad_check
from adaptrecon.losses import (LossWeights, ProtocolWeights, SSIMConfig, freq_ssim_loss, l1_loss,
                               ms_ssim_loss, normalized_log_spectrum, psnr, ssim, ssim_value,
                               total_loss)

C1 = (0.01) ** 2
CONST_SSIM = C1 / (1 + C1)  # 1-vs-0 constants at L = 1


def naive_ssim(x, y, window=7, k1=0.01, k2=0.03, L=None):
    """Direct sliding-window SSIM with population statistics."""
    L = y.max() if L is None else L
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    vals = []
    for i in range(x.shape[0] - window + 1):
        for j in range(x.shape[1] - window + 1):
            a = x[i:i + window, j:j + window]
            b = y[i:i + window, j:j + window]
            ma, mb = a.mean(), b.mean()
            va, vb = a.var(), b.var()
            cov = ((a - ma) * (b - mb)).mean()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


images = arrays(np.float64, (16, 16), elements=st.floats(0, 1))


class TestSSIM:
    def test_identity_is_exactly_one(self, rng):
        x = rng.random((16, 16)) + 0.1
        assert float(ssim(x, x).data) == 1.0

    def test_constant_closed_form(self):
        val = float(ssim(np.ones((16, 16)), np.zeros((16, 16)), data_range=1.0).data)
        assert abs(val - CONST_SSIM) <= 1e-9
        assert val == pytest.approx(9.999e-5, rel=1e-4)

    def test_matches_naive_window(self, rng):
        x, y = rng.random((12, 14)), rng.random((12, 14))
        assert abs(float(ssim(x, y).data) - naive_ssim(x, y)) <= 1e-10

    def test_window_too_large(self):
        with pytest.raises(ValueError):
            ssim(np.ones((5, 5)), np.ones((5, 5)))
        with pytest.raises(ValueError):
            SSIMConfig(window=4)

    def test_frames_are_averaged(self, rng):
        x, y = rng.random((3, 10, 10)), rng.random((3, 10, 10)) + 0.1
        per = [naive_ssim(a, b) for a, b in zip(x, y)]
        assert float(ssim(x, y).data) == pytest.approx(np.mean(per), abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(images, images)
    def test_symmetric_and_bounded_with_external_range(self, x, y):
        a = float(ssim(x, y, data_range=1.0).data)
        b = float(ssim(y, x, data_range=1.0).data)
        assert a == pytest.approx(b, abs=1e-12)
        assert -1 - 1e-12 <= a <= 1 + 1e-12


class TestMultiScale:
    def test_zero_on_identical(self, rng):
        x = rng.random((32, 32)) + 0.1
        assert float(ms_ssim_loss(x, x, (1, 2, 4), SSIMConfig(window=7)).data) == 0.0

    def test_single_scale_reduction(self, rng):
        x, y = rng.random((16, 16)), rng.random((16, 16)) + 0.1
        assert float(ms_ssim_loss(x, y, (1,)).data) == pytest.approx(1 - float(ssim(x, y).data), abs=1e-15)

    def test_constant_two_scale_closed_form(self):
        val = float(ms_ssim_loss(np.ones((16, 16)), np.zeros((16, 16)), (1, 2), data_range=1.0).data)
        expected = 0.5 * ((1 - CONST_SSIM) + 0.5 * (1 - CONST_SSIM))
        assert val == pytest.approx(expected, abs=1e-12)
        assert val == pytest.approx(0.74993, abs=1e-5)

    def test_scale_too_coarse(self):
        with pytest.raises(ValueError):
            ms_ssim_loss(np.ones((16, 16)), np.ones((16, 16)), (1, 2, 4))


class TestFrequency:
    def test_zero_on_identical_and_shift(self, rng):
        x = rng.random((16, 16))
        assert float(freq_ssim_loss(x, x).data) == 0.0
        shifted = np.roll(x, (3, 5), axis=(0, 1))
        assert float(freq_ssim_loss(x, shifted).data) <= 1e-10

    def test_both_zero_spectra(self):
        assert float(freq_ssim_loss(np.zeros((8, 8)), np.zeros((8, 8))).data) == 0.0

    def test_matches_step_by_step(self, rng):
        x, y = rng.random((16, 16)), rng.random((16, 16))

        def norm_spec(a):
            s = np.log1p(np.abs(np.fft.fft2(a, norm="ortho")))
            return (s - s.min()) / (s.max() - s.min())

        np.testing.assert_allclose(normalized_log_spectrum(x).data[0, 0], norm_spec(x), atol=1e-14)
        expected = 1 - naive_ssim(norm_spec(x), norm_spec(y), L=1.0)
        assert float(freq_ssim_loss(x, y).data) == pytest.approx(expected, abs=1e-10)

    @settings(max_examples=20, deadline=None)
    @given(images, images, st.integers(0, 15), st.integers(0, 15))
    def test_invariant_to_common_shift(self, x, y, dy, dx):
        a = float(freq_ssim_loss(x, y).data)
        b = float(freq_ssim_loss(np.roll(x, (dy, dx), (0, 1)), np.roll(y, (dy, dx), (0, 1))).data)
        assert a == pytest.approx(b, abs=1e-10)


class TestTotalLoss:
    def weights(self, **kw):
        return LossWeights(per_protocol={"cine": ProtocolWeights(**kw)}, beta=0.0)

    def test_zero_on_identical(self, rng):
        x = rng.random((2, 32, 32)) + 0.1
        lb = total_loss(x, x, "cine", LossWeights(beta=0.0))
        assert lb.total == 0.0 and float(lb.loss.data) == 0.0
        assert (lb.base_ssim, lb.ms_ssim, lb.freq_ssim, lb.l1) == (0.0, 0.0, 0.0, 0.0)

    def test_base_only(self, rng):
        x, y = rng.random((1, 32, 32)), rng.random((1, 32, 32)) + 0.1
        lb = total_loss(x, y, "cine", self.weights(w_base=1, w_ms=0, w_freq=0, w_l1=0))
        assert lb.total == pytest.approx(1 - ssim_value(x, y), abs=1e-15)

    def test_recombination(self, rng):
        x, y = rng.random((2, 32, 32)), rng.random((2, 32, 32)) + 0.1
        reg = AdapterRegistry.init(("cine",), ("C001",), rng)
        w = LossWeights(per_protocol={"cine": ProtocolWeights(0.5, 1.0, 0.25, 0.0)}, beta=1e-5)
        lb = total_loss(x, y, "cine", w, reg)
        base = 1 - ssim_value(x, y)
        ms = float(ms_ssim_loss(x, y).data)
        fr = float(freq_ssim_loss(x, y).data)
        r = float(adapter_param_norm(reg).data)
        assert lb.total == pytest.approx(0.5 * base + 1.0 * ms + 0.25 * fr + 1e-5 * r, abs=1e-12)
        assert lb.total == ((((0.5 * lb.base_ssim + 1.0 * lb.ms_ssim) + 0.25 * lb.freq_ssim)
                             + 0.0 * lb.l1) + 1e-5 * lb.reg)

    def test_components_nonnegative(self, rng):
        for pid in ("cine", "lge", "mapping", "perfusion"):
            lb = total_loss(rng.random((1, 32, 32)), rng.random((1, 32, 32)) + 0.1, pid, LossWeights())
            assert min(lb.base_ssim, lb.ms_ssim, lb.freq_ssim, lb.l1, lb.reg) >= 0

    def test_unknown_protocol(self):
        with pytest.raises(KeyError):
            total_loss(np.ones((1, 32, 32)), np.ones((1, 32, 32)), "flair", LossWeights())

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            ProtocolWeights(-1, 0, 0)
        with pytest.raises(ValueError):
            LossWeights(scales=(1, 3))

    def test_gradient_wrt_prediction(self, rng):
        gt = rng.random((1, 16, 16)) + 0.1
        w = LossWeights(scales=(1, 2), ssim=SSIMConfig(window=5))
        rep = grad_check(lambda t: total_loss(t["pred"], gt, "lge", w).loss,
                         {"pred": rng.random((1, 16, 16)) + 0.1}, tol=1e-4, max_entries=120)
        assert rep.passed, str(rep)

    def test_l1(self):
        assert float(l1_loss(np.array([1.0, -1.0]), np.zeros(2)).data) == 1.0


class TestPSNR:
    def test_identical_is_inf(self, rng):
        x = rng.random((4, 4))
        assert psnr(x, x) == math.inf

    def test_round_off_counts_as_lossless(self, rng):
        x = rng.random((4, 4)) + 0.5
        assert psnr(np.fft.ifft2(np.fft.fft2(x)).real, x) == math.inf
        assert math.isfinite(psnr(x + 1e-9, x))

    def test_closed_form(self):
        assert psnr(np.full((4, 4), 0.5), np.ones((4, 4))) == pytest.approx(20 * math.log10(2), abs=1e-12)
        assert psnr(np.full((4, 4), 0.5), np.ones((4, 4))) == pytest.approx(6.0206, abs=1e-4)

    def test_direct_formula(self, rng):
        x, g = rng.random((8, 8)), rng.random((8, 8))
        expected = 20 * math.log10(g.max() / math.sqrt(np.mean((x - g) ** 2)))
        assert abs(psnr(x, g) - expected) <= 1e-10

    def test_zero_reference(self):
        with pytest.raises(ValueError):
            psnr(np.ones(3), np.zeros(3))
