"""End-to-end acceptance checks, one test class per criterion.

A per-criterion PASS/FAIL line is printed in the terminal summary (see
conftest.py) and by each test itself when run with ``-s``.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from lowlight import nn
from lowlight.ablation import VARIANTS, run_ablation
from lowlight.contrast import DehazeParams, dark_channel, dehaze, enhance_contrast
from lowlight.gradcheck import check_gradients
from lowlight.images import RgbImage, lightness, mean_lightness
from lowlight.losses import (
    FeatureExtractor,
    LossConfig,
    feature_loss,
    l1_loss,
    ms_ssim,
    msssim_loss,
    pixel_loss,
    psnr,
    ssim,
    total_loss,
)
from lowlight.net import (
    Checkpoint,
    NetSpec,
    build,
    decode_checkpoint,
    encode_checkpoint,
    forward,
)
from lowlight.raw import (
    CFA,
    NoiseParams,
    decode_llrw,
    encode_llrw,
    pack_bayer,
    pack_xtrans,
    synthesize_pair,
    unpack_bayer,
    unpack_xtrans,
)
from lowlight.synth import dark_scene, make_pairs, smooth_scene
from lowlight.tensor import Tensor
from lowlight.train import TrainConfig, TrainingPair, train

import oracles

INSTANCES = 20


def report(n, ok, detail):
    print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


# 1 -------------------------------------------------------------------


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def _probe(rng, tensors, k=12):
    return [rng.choice(t.size, size=min(k, t.size), replace=False) for t in tensors]


def _weighted(out, rng):
    # a random linear read-out makes every output entry matter
    w = Tensor(rng.normal(size=out.shape))
    return (out * w).sum()


def _layer_cases():
    """(name, builder) where builder(rng) -> (fn, inputs)."""

    def unary(op, positive=False):
        def make(rng):
            h, w = 2 * rng.integers(1, 4, size=2)
            a = _t(rng, 1, 2, h, w)
            if positive:
                a.data[...] = np.abs(a.data) + 0.5
            return (lambda: _weighted(op(a), rng_fixed(rng)), [a])

        return make

    def binary(op, positive_b=False):
        def make(rng):
            a, b = _t(rng, 1, 2, 3, 4), _t(rng, 1, 2, 3, 4)
            if positive_b:
                b.data[...] = np.abs(b.data) + 0.5
            return (lambda: _weighted(op(a, b), rng_fixed(rng)), [a, b])

        return make

    def conv(stride, padding):
        def make(rng):
            cin, cout = rng.integers(1, 4, size=2)
            k = int(rng.choice([1, 3]))
            x = _t(rng, 1, cin, 6, 7)
            wt, b = _t(rng, cout, cin, k, k), _t(rng, cout)
            return (lambda: _weighted(nn.conv2d(x, wt, b, stride, padding), rng_fixed(rng)), [x, wt, b])

        return make

    def tconv(rng):
        cin, cout = rng.integers(1, 4, size=2)
        x = _t(rng, 1, cin, 3, 4)
        wt, b = _t(rng, cin, cout, 2, 2), _t(rng, cout)
        return (lambda: _weighted(nn.transpose_conv2d(x, wt, b), rng_fixed(rng)), [x, wt, b])

    def shuffle(rng):
        r = int(rng.integers(2, 4))
        x = _t(rng, 1, 3 * r * r, 2, 3)
        return (lambda: _weighted(nn.pixel_shuffle(x, r), rng_fixed(rng)), [x])

    def unshuffle(rng):
        r = int(rng.integers(2, 4))
        x = _t(rng, 1, 2, 2 * r, 3 * r)
        return (lambda: _weighted(nn.pixel_unshuffle(x, r), rng_fixed(rng)), [x])

    def concat(rng):
        a, b = _t(rng, 1, 2, 3, 3), _t(rng, 1, 3, 3, 3)
        return (lambda: _weighted(nn.concat_channels(a, b), rng_fixed(rng)), [a, b])

    def crop(rng):
        x = _t(rng, 1, 2, 6, 7)
        top, left = rng.integers(0, 3, size=2)
        return (lambda: _weighted(nn.crop(x, 3, 4, int(top), int(left)), rng_fixed(rng)), [x])

    def filt(rng):
        x = _t(rng, 1, 2, 7, 8)
        k = rng.random((3, 3))
        return (lambda: _weighted(nn.filter2d(x, k), rng_fixed(rng)), [x])

    def sep(rng):
        x = _t(rng, 1, 2, 7, 8)
        kr, kc = rng.random(3), rng.random(5)
        return (lambda: _weighted(nn.separable_filter2d(x, kr, kc), rng_fixed(rng)), [x])

    def reduce(op):
        def make(rng):
            a = _t(rng, 1, 2, 3, 4)
            return (lambda: op(a) * 1.7, [a])

        return make

    def reshape(rng):
        a = _t(rng, 1, 2, 3, 4)
        return (lambda: _weighted(a.reshape(1, 6, 4), rng_fixed(rng)), [a])

    return [
        ("add", binary(lambda a, b: a + b)),
        ("sub", binary(lambda a, b: a - b)),
        ("mul", binary(lambda a, b: a * b)),
        ("div", binary(lambda a, b: a / b, positive_b=True)),
        ("neg", unary(lambda a: -a)),
        ("power", unary(lambda a: a**2.5, positive=True)),
        ("abs", unary(lambda a: a.abs())),
        ("sum", reduce(lambda a: a.sum())),
        ("mean", reduce(lambda a: a.mean())),
        ("reshape", reshape),
        ("conv2d", conv(1, 0)),
        ("conv2d_pad", conv(1, 1)),
        ("conv2d_stride", conv(2, 1)),
        ("transpose_conv2d", tconv),
        ("maxpool2", unary(nn.maxpool2)),
        ("avgpool2", unary(nn.avgpool2)),
        ("leaky_relu", unary(nn.leaky_relu)),
        ("relu", unary(nn.relu)),
        ("concat_channels", concat),
        ("pixel_shuffle", shuffle),
        ("pixel_unshuffle", unshuffle),
        ("crop", crop),
        ("filter2d", filt),
        ("separable_filter2d", sep),
    ]


class _Seeded:
    """Generator wrapper carrying a per-instance read-out seed."""

    def __init__(self, seed):
        self._g = np.random.default_rng(seed)
        self.readout_seed = seed + 7919

    def __getattr__(self, name):
        return getattr(self._g, name)


def rng_fixed(rng):
    # same read-out weights on every fn() call of one instance
    return np.random.default_rng(rng.readout_seed)


_FX = FeatureExtractor(seed=0)
# composites with ReLUs inside, where a finite-difference stencil can straddle a kink
_RELU_COMPOSITES = {"feature", "total", "unet"}


def _loss_cases():
    def make(kind):
        def build_case(rng):
            h = 44 if kind in ("msssim", "pixel", "total") else 16
            p = Tensor(rng.random((1, 3, h, h)), requires_grad=True)
            t = Tensor(rng.random((1, 3, h, h)))
            cfg = LossConfig(alpha=0.6, beta=0.5, msssim_scales=3)
            fns = {
                "l1": lambda: l1_loss(p, t),
                "ssim": lambda: ssim(p, t, cfg).mean,
                "msssim": lambda: msssim_loss(p, t, cfg),
                "feature": lambda: feature_loss(p, t, _FX),
                "pixel": lambda: pixel_loss(p, t, cfg),
                "total": lambda: total_loss(p, t, cfg, _FX),
            }
            return fns[kind], [p]

        return build_case

    def network(rng):
        params = build(NetSpec(4, 2, 2, 2), int(rng.integers(100)))
        x = Tensor(rng.random((1, 4, 4, 4)), requires_grad=True)
        t = Tensor(rng.random((1, 3, 8, 8)))
        plist = [x] + params.parameters()[:2] + params.parameters()[-2:]
        return (lambda: l1_loss(forward(params, x), t) + ((forward(params, x) - t) ** 2.0).mean()), plist

    return [(k, make(k)) for k in ("l1", "ssim", "msssim", "feature", "pixel", "total")] + [("unet", network)]


@pytest.mark.criterion(1, "gradient correctness")
class TestGradients:
    results: dict = {}
    started: float = 0.0

    @pytest.fixture(scope="class", autouse=True)
    @classmethod
    def _clock(cls):
        cls.started = time.time()

    @pytest.mark.parametrize("name, case", _layer_cases(), ids=[n for n, _ in _layer_cases()])
    def test_layer(self, name, case):
        worst = 0.0
        for i in range(INSTANCES):
            rng = _Seeded(1000 + i)
            fn, inputs = case(rng)
            worst = max(worst, check_gradients(fn, inputs, eps=1e-5, indices=_probe(rng, inputs)))
        self.results[name] = worst
        assert worst < 1e-5, f"{name}: relative error {worst:.2e}"

    @pytest.mark.parametrize("name, case", _loss_cases(), ids=[n for n, _ in _loss_cases()])
    def test_composite(self, name, case):
        worst, dropped = 0.0, 0
        for i in range(INSTANCES):
            rng = _Seeded(2000 + i)
            fn, inputs = case(rng)
            if name in _RELU_COMPOSITES:
                probes = []
                for t, cand in zip(inputs, _probe(rng, inputs, 16)):
                    idx, d = oracles.kink_free_probes(fn, t, cand)
                    probes.append(idx)
                    dropped += d
            else:
                probes = _probe(rng, inputs, 8)
            worst = max(worst, check_gradients(fn, inputs, eps=1e-5, indices=probes))
        self.results[name] = worst
        print(f"{name}: worst {worst:.1e}, {dropped} kink-straddling probes redrawn")
        assert worst < 1e-4, f"{name}: relative error {worst:.2e}"

    def test_budget(self):
        elapsed = time.time() - self.started
        worst = max(self.results.values()) if self.results else float("nan")
        report(1, elapsed < 120, f"{len(self.results)} ops x {INSTANCES} instances, worst {worst:.1e}, {elapsed:.0f}s")
        assert elapsed < 120


# 2 -------------------------------------------------------------------


@pytest.mark.criterion(2, "metric oracles")
class TestMetricOracles:
    def test_against_naive_formula(self):
        rng = np.random.default_rng(77)
        worst_s = worst_m = 0.0
        for _ in range(50):
            h, w = rng.integers(64, 129, size=2)
            x, y = rng.random((3, h, w)), rng.random((3, h, w))
            if rng.random() < 0.5:  # correlated pairs exercise the high-similarity regime
                y = np.clip(x + 0.1 * rng.normal(size=x.shape), 0, 1)
            cfg = LossConfig(msssim_scales=3)
            s = ssim(Tensor(x[None]), Tensor(y[None]), cfg).mean.item()
            m = ms_ssim(Tensor(x[None]), Tensor(y[None]), cfg).item()
            worst_s = max(worst_s, abs(s - oracles.ssim(x, y, maps=oracles.ssim_maps_windowed)))
            worst_m = max(worst_m, abs(m - oracles.ms_ssim(x, y, 3, maps=oracles.ssim_maps_windowed)))
        report(2, max(worst_s, worst_m) < 1e-6, f"50 pairs, SSIM err {worst_s:.1e}, MS-SSIM err {worst_m:.1e}")
        assert worst_s < 1e-6 and worst_m < 1e-6

    def test_self_similarity(self):
        rng = np.random.default_rng(78)
        for _ in range(10):
            x = Tensor(rng.random((1, 3, 64, 80)))
            assert abs(ssim(x, x).mean.item() - 1.0) < 1e-9

    def test_psnr_formula(self):
        rng = np.random.default_rng(79)
        for _ in range(10):
            x, y = rng.random((1, 3, 32, 32)), rng.random((1, 3, 32, 32))
            assert abs(psnr(x, y) - 10 * np.log10(1.0 / np.mean((x - y) ** 2))) < 1e-9


# 3 -------------------------------------------------------------------


@pytest.mark.criterion(3, "structural round trips")
class TestRoundTrips:
    def test_bayer(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            h, w = 2 * rng.integers(1, 20, size=2)
            a = Tensor(rng.random((1, 1, h, w)))
            assert np.array_equal(unpack_bayer(pack_bayer(a)).data, a.data)

    def test_xtrans(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            h, w = 6 * rng.integers(1, 6, size=2)
            a = Tensor(rng.random((1, 1, h, w)))
            assert np.array_equal(unpack_xtrans(pack_xtrans(a)).data, a.data)

    @pytest.mark.parametrize("r", [2, 3, 4])
    def test_pixel_shuffle(self, r):
        rng = np.random.default_rng(r)
        x = Tensor(rng.random((1, 3 * r * r, 5, 4)))
        assert np.array_equal(nn.pixel_unshuffle(nn.pixel_shuffle(x, r), r).data, x.data)
        y = Tensor(rng.random((1, 2, 5 * r, 4 * r)))
        assert np.array_equal(nn.pixel_shuffle(nn.pixel_unshuffle(y, r), r).data, y.data)

    def test_checkpoint(self):
        rng = np.random.default_rng(3)
        params = build(NetSpec.desk(), 5)
        ck = Checkpoint(params, 9, 90, [rng.normal(size=p.shape) for p in params.parameters()],
                        [rng.random(p.shape) for p in params.parameters()])
        buf = encode_checkpoint(ck)
        back = decode_checkpoint(buf)
        assert encode_checkpoint(back) == buf
        assert all(np.array_equal(a.data, b.data) for a, b in zip(params.parameters(), back.params.parameters()))

    @pytest.mark.parametrize("cfa", [CFA.bayer(), CFA.xtrans()])
    def test_llrw(self, cfa):
        raw, _ = synthesize_pair(smooth_scene(36, 36, 1), cfa, 50.0, NoiseParams(), 4)
        buf = encode_llrw(raw)
        back = decode_llrw(buf)
        assert np.array_equal(back.samples, raw.samples) and back.cfa == raw.cfa
        assert encode_llrw(back) == buf

    def test_llfx(self):
        buf = FeatureExtractor(seed=3).to_bytes()
        assert FeatureExtractor.from_bytes(buf).to_bytes() == buf
        report(3, True, "Bayer, X-Trans, shuffle, LLCK, LLRW, LLFX all bit-exact")


# 4 -------------------------------------------------------------------

# Network seed pinned for this check; see README "Overfit check".
OVERFIT_NET_SEED = 1


@pytest.mark.slow
@pytest.mark.criterion(4, "overfit reproduction")
def test_overfit_single_pair():
    clean = smooth_scene(64, 64, seed=0, edges=0)
    raw, target = synthesize_pair(clean, CFA.bayer(), 100.0, NoiseParams.disabled(), 0)
    pair = TrainingPair(raw, target, 100.0)
    cfg = TrainConfig(epochs=2000, crop_size=64, seed=OVERFIT_NET_SEED, augment=False)
    assert cfg.lr_initial == 1e-4 and cfg.lr_after == 1e-5 and cfg.switch_epoch == 1000
    start = time.time()
    res = train([pair], cfg, NetSpec.desk())
    elapsed = time.time() - start
    pred = np.clip(forward(res.params, Tensor(pair.packed())).data, 0.0, 1.0)
    score = psnr(pred, target.data)
    final_total = res.history[-1].total
    ok = score >= 35.0 and final_total < 0.02 and elapsed < 600 and len(res.history) == 2000
    report(4, ok, f"PSNR {score:.2f} dB, total loss {final_total:.4f}, {len(res.history)} iterations, {elapsed:.0f}s")
    assert len(res.history) == 2000
    assert score >= 35.0
    assert final_total < 0.02
    assert elapsed < 600


# 5 -------------------------------------------------------------------


@pytest.mark.slow
@pytest.mark.criterion(5, "ablation ordering")
def test_final_mix_beats_feature_only():
    pairs = make_pairs(10, 64, seed=0)
    cfg = TrainConfig(epochs=60, crop_size=32, seed=0, lr_initial=1e-3, lr_after=1e-4,
                      loss=LossConfig(msssim_scales=2))
    chosen = [v for v in VARIANTS if v.name in ("final", "feature")]
    rows = {r.name: r.psnr for r in run_ablation(pairs, cfg, NetSpec.desk(), variants=chosen)}
    ok = rows["final"] > rows["feature"]
    report(5, ok, f"final {rows['final']:.2f} dB vs feature-only {rows['feature']:.2f} dB")
    assert ok


# 6 -------------------------------------------------------------------


@pytest.mark.criterion(6, "architecture invariant")
def test_full_scale_layer_inventory():
    spec = NetSpec.full()
    inventory = spec.layer_shapes()
    encoder = [n for n, _, _ in inventory if n.startswith("enc")]
    decoder = [n for n, _, _ in inventory if not n.startswith("enc")]
    params = build(spec)
    ok = len(inventory) == 23 and len(encoder) == 10 and len(decoder) == 13 and params.conv_layer_count() == 23
    report(6, ok, f"{len(inventory)} conv layers ({len(encoder)} encoder + {len(decoder)} decoder)")
    assert ok
    assert params.parameter_count() == oracles.param_count(4, 5, 32, 2)


# 7 -------------------------------------------------------------------


@pytest.mark.criterion(7, "contrast procedure")
class TestContrast:
    def test_dark_fixtures_brighten(self):
        gains = []
        for s in range(10):
            img = dark_scene(48, 48, seed=s, gain=0.3 + 0.03 * s)
            assert np.mean(lightness(img) < 0.5) >= 0.75
            before, after = mean_lightness(img), mean_lightness(enhance_contrast(img))
            gains.append(after - before)
        report(7, min(gains) > 0, f"10/10 dark fixtures brighter, smallest gain {min(gains):.4f}")
        assert min(gains) > 0

    def test_dark_channel_exact(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            h, w = rng.integers(15, 40, size=2)
            patch = int(rng.choice([1, 3, 7, 15]))
            a = rng.random((3, h, w))
            assert np.array_equal(dark_channel(a, patch), oracles.dark_channel(a, patch))

    def test_haze_recovery(self):
        J = smooth_scene(64, 64, seed=3).data.copy()
        J -= J.min(axis=1, keepdims=True)
        J[..., :8, :8] = 1.0
        hazy = J * 0.5 + 0.5
        out = dehaze(RgbImage(Tensor(hazy)), DehazeParams(omega=1.0, patch_size=7)).data
        assert np.mean(np.abs(out - J)) < 0.05


# 8 -------------------------------------------------------------------


@pytest.mark.criterion(8, "determinism and resume")
class TestDeterminism:
    @pytest.fixture(scope="class")
    @classmethod
    def setup(cls):
        pairs = make_pairs(3, 32, seed=8)
        cfg = TrainConfig(epochs=6, crop_size=16, seed=2, loss=LossConfig(msssim_scales=1))
        return pairs, cfg, NetSpec(4, 2, 4, 2), FeatureExtractor(seed=0, widths=(8, 16))

    def test_bit_reproducible(self, setup):
        pairs, cfg, spec, fx = setup
        a, b = train(pairs, cfg, spec, fx=fx), train(pairs, cfg, spec, fx=fx)
        assert a.history == b.history
        assert encode_checkpoint(a.checkpoint()) == encode_checkpoint(b.checkpoint())

    def test_resume_bit_exact(self, setup):
        pairs, cfg, spec, fx = setup
        full = train(pairs, cfg, spec, fx=fx)
        for cut in (1, 3, 5):
            head = train(pairs, replace(cfg, epochs=cut, lr_switch_epoch=cfg.switch_epoch), spec, fx=fx)
            ck = decode_checkpoint(encode_checkpoint(head.checkpoint()))
            tail = train(pairs, cfg, spec, fx=fx, resume=ck)
            assert head.history + tail.history == full.history
            assert encode_checkpoint(tail.checkpoint()) == encode_checkpoint(full.checkpoint())
        report(8, True, "seeded runs identical; resume at epochs 1, 3, 5 matches bit for bit")
