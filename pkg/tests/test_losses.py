import math

import numpy as np
import pytest

from lowlight.errors import FormatError, InvalidArgumentError, InvalidShapeError
from lowlight.gradcheck import check_gradients
from lowlight.losses import (
    FeatureExtractor,
    LossConfig,
    feature_loss,
    gaussian_window,
    l1_loss,
    loss_terms,
    max_msssim_scales,
    ms_ssim,
    msssim_loss,
    pixel_loss,
    psnr,
    ssim,
    total_loss,
)
from lowlight.tensor import GradientTape, Tensor

import oracles


def img(rng, h=32, w=32, c=3):
    return rng.random((1, c, h, w))


class TestL1:
    def test_value(self):
        assert l1_loss(Tensor([[1.0, -2.0]]), Tensor([[0.0, 0.0]])).item() == 1.5

    def test_gradient_is_sign_over_n(self, rng):
        p = Tensor(rng.normal(size=(1, 3, 4, 4)), requires_grad=True)
        t = Tensor(rng.normal(size=(1, 3, 4, 4)))
        with GradientTape() as tape:
            loss = l1_loss(p, t)
        tape.backward(loss)
        np.testing.assert_array_equal(p.grad, np.sign(p.data - t.data) / p.size)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidShapeError):
            l1_loss(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 3, 4, 5))))


class TestSSIM:
    def test_window_normalized_and_symmetric(self):
        w = gaussian_window()
        assert w.sum() == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(w, w.T)
        np.testing.assert_allclose(w, oracles.gaussian_weights(), atol=1e-16)

    def test_identical_is_one(self, rng):
        x = img(rng)
        assert abs(ssim(Tensor(x), Tensor(x)).mean.item() - 1.0) < 1e-9

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_pixelwise_oracle(self, seed):
        rng = np.random.default_rng(seed)
        x, y = img(rng, 24, 27), img(rng, 24, 27)
        ours = ssim(Tensor(x), Tensor(y)).mean.item()
        assert ours == pytest.approx(oracles.ssim(x[0], y[0]), abs=1e-10)

    def test_windowed_oracle_agrees_with_loop_oracle(self, rng):
        x, y = rng.random((3, 19, 23)), rng.random((3, 19, 23))
        for a, b in zip(oracles.ssim_maps(x, y), oracles.ssim_maps_windowed(x, y)):
            np.testing.assert_allclose(a, b, atol=1e-14)

    def test_maps_have_valid_extent(self, rng):
        res = ssim(Tensor(img(rng, 20, 30)), Tensor(img(rng, 20, 30)))
        assert res.ssim_map.shape == (1, 3, 10, 20)
        np.testing.assert_allclose(res.ssim_map.data, res.luminance.data * res.contrast_structure.data)

    def test_symmetric_in_arguments(self, rng):
        x, y = Tensor(img(rng)), Tensor(img(rng))
        assert ssim(x, y).mean.item() == pytest.approx(ssim(y, x).mean.item(), abs=1e-15)

    def test_image_smaller_than_window(self):
        with pytest.raises(InvalidShapeError):
            ssim(Tensor(np.zeros((1, 3, 10, 40))), Tensor(np.zeros((1, 3, 10, 40))))


class TestMSSSIM:
    @pytest.mark.parametrize("h, w, m", [(11, 11, 1), (21, 40, 1), (22, 22, 2), (44, 50, 3), (176, 176, 5)])
    def test_max_scales(self, h, w, m):
        assert max_msssim_scales(h, w) == m

    def test_one_scale_is_ssim(self, rng):
        x, y = Tensor(img(rng)), Tensor(img(rng))
        cfg = LossConfig(msssim_scales=1)
        assert ms_ssim(x, y, cfg).item() == ssim(x, y, cfg).mean.item()

    def test_matches_oracle_with_odd_extents(self, rng):
        x, y = img(rng, 47, 53), img(rng, 47, 53)
        ours = ms_ssim(Tensor(x), Tensor(y), LossConfig(msssim_scales=3)).item()
        assert ours == pytest.approx(oracles.ms_ssim(x[0], y[0], scales=3), abs=1e-10)

    def test_identical_is_one(self, rng):
        x = Tensor(img(rng, 64, 64))
        assert abs(ms_ssim(x, x).item() - 1.0) < 1e-12
        assert abs(msssim_loss(x, x).item()) < 1e-12

    def test_too_many_scales_names_the_limit(self, rng):
        x = Tensor(img(rng, 40, 40))
        with pytest.raises(InvalidArgumentError, match="at most 2"):
            ms_ssim(x, x, LossConfig(msssim_scales=3))

    def test_degrades_with_noise(self, rng):
        x = img(rng, 64, 64)
        scores = [ms_ssim(Tensor(x), Tensor(x + s * rng.normal(size=x.shape))).item() for s in (0.01, 0.05, 0.2)]
        assert scores[0] > scores[1] > scores[2]


class TestPixelAndTotal:
    def test_beta_one_is_l1(self, rng):
        x, y = Tensor(img(rng)), Tensor(img(rng))
        assert pixel_loss(x, y, LossConfig(beta=1.0, msssim_scales=2)).item() == l1_loss(x, y).item()

    def test_beta_zero_is_msssim_loss(self, rng):
        x, y = Tensor(img(rng, 48, 48)), Tensor(img(rng, 48, 48))
        cfg = LossConfig(beta=0.0)
        assert pixel_loss(x, y, cfg).item() == pytest.approx(msssim_loss(x, y, cfg).item(), abs=1e-15)

    def test_alpha_one_beta_one_is_bit_identical_to_l1(self, rng, small_fx):
        x, y = Tensor(img(rng, 48, 48)), Tensor(img(rng, 48, 48))
        assert total_loss(x, y, LossConfig(alpha=1.0, beta=1.0), small_fx).item() == l1_loss(x, y).item()

    def test_weighted_combination(self, rng, small_fx):
        x, y = Tensor(img(rng, 48, 48)), Tensor(img(rng, 48, 48))
        cfg = LossConfig(alpha=0.7, beta=0.4)
        t = loss_terms(x, y, cfg, small_fx)
        expected = 0.7 * (0.4 * t.l1.item() + 0.6 * t.msssim.item()) + 0.3 * t.feature.item()
        assert t.total.item() == pytest.approx(expected, rel=1e-13)

    def test_zero_weight_terms_stay_off_tape(self, rng, small_fx):
        x = Tensor(img(rng, 48, 48), requires_grad=True)
        y = Tensor(img(rng, 48, 48))
        with GradientTape():
            t = loss_terms(x, y, LossConfig(alpha=1.0, beta=1.0), small_fx)
        assert t.feature.tape_id is None and t.msssim.tape_id is None
        assert t.l1.tape_id is not None

    def test_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            LossConfig(alpha=1.5)
        with pytest.raises(InvalidArgumentError):
            LossConfig(window=10)
        with pytest.raises(InvalidArgumentError):
            LossConfig(msssim_scales=0)


class TestFeatureExtractor:
    def test_output_shape(self, small_fx, rng):
        out = small_fx(Tensor(img(rng, 16, 20)))
        assert out.shape == (1, 16, 4, 5)

    def test_needs_multiple_of_four(self, small_fx):
        with pytest.raises(InvalidShapeError):
            small_fx(Tensor(np.zeros((1, 3, 18, 16))))

    def test_zero_for_identical(self, small_fx, rng):
        x = Tensor(img(rng, 16, 16))
        assert feature_loss(x, x, small_fx).item() == 0.0

    def test_seeded(self):
        a = FeatureExtractor(seed=4, widths=(4, 8)).to_bytes()
        assert a == FeatureExtractor(seed=4, widths=(4, 8)).to_bytes()
        assert a != FeatureExtractor(seed=5, widths=(4, 8)).to_bytes()

    def test_llfx_round_trip(self, tmp_path):
        fx = FeatureExtractor(seed=2, widths=(4, 8))
        path = tmp_path / "fx.llfx"
        fx.save(path)
        back = FeatureExtractor.load(path)
        assert back.to_bytes() == path.read_bytes()
        for (w0, b0), (w1, b1) in zip(fx.layers, back.layers):
            np.testing.assert_array_equal(w1.data, w0.data.astype(np.float32))
            np.testing.assert_array_equal(b1.data, b0.data.astype(np.float32))

    def test_llfx_layout(self):
        buf = FeatureExtractor(seed=0, widths=(2, 3)).to_bytes()
        assert buf[:4] == b"LLFX"
        shapes = [(2, 3, 3, 3), (2, 2, 3, 3), (3, 2, 3, 3), (3, 3, 3, 3)]
        expected = 6 + sum(16 + 4 * (math.prod(s) + s[0]) for s in shapes)
        assert len(buf) == expected

    @pytest.mark.parametrize("mutate", [lambda b: b"ABCD" + b[4:], lambda b: b[:-3], lambda b: b[:30]])
    def test_llfx_corrupt(self, mutate):
        buf = FeatureExtractor(seed=0, widths=(2, 3)).to_bytes()
        with pytest.raises((FormatError, InvalidShapeError)):
            FeatureExtractor.from_bytes(mutate(buf))

    def test_input_norm_is_affine_preprocessing(self, rng):
        x = img(rng, 8, 8)
        mean, std = np.array([0.4, 0.5, 0.6]), np.array([0.2, 0.25, 0.3])
        plain = FeatureExtractor(seed=1, widths=(4, 4))
        normed = FeatureExtractor(seed=1, widths=(4, 4), input_norm=(mean, std))
        z = (x - mean[None, :, None, None]) / std[None, :, None, None]
        np.testing.assert_allclose(normed(Tensor(x)).data, plain(Tensor(z)).data, atol=1e-12)


class TestPSNR:
    def test_closed_form(self, rng):
        x = rng.random((1, 3, 8, 8)) * 0.8
        assert psnr(x + 0.1, x) == pytest.approx(20.0, abs=1e-9)
        y = rng.random(x.shape)
        assert psnr(x, y) == pytest.approx(10 * math.log10(1 / np.mean((x - y) ** 2)), abs=1e-12)

    def test_identical_capped(self, rng):
        x = rng.random((1, 3, 4, 4))
        assert psnr(x, x) == 99.0
        assert psnr(x, x, cap=None) == math.inf


@pytest.mark.parametrize("name", ["l1", "ssim", "msssim", "feature", "total"])
def test_loss_gradients(name, rng, small_fx):
    h = 44 if name in ("msssim", "total") else 16
    p = Tensor(rng.random((1, 3, h, h)), requires_grad=True)
    t = Tensor(rng.random((1, 3, h, h)))
    fns = {
        "l1": lambda: l1_loss(p, t),
        "ssim": lambda: ssim(p, t, LossConfig()).mean,
        "msssim": lambda: msssim_loss(p, t, LossConfig(msssim_scales=3)),
        "feature": lambda: feature_loss(p, t, small_fx),
        "total": lambda: total_loss(p, t, LossConfig(alpha=0.6, beta=0.5, msssim_scales=3), small_fx),
    }
    idx = rng.choice(p.size, size=40, replace=False)
    assert check_gradients(fns[name], [p], indices=[idx]) < 1e-4
