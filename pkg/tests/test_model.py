import numpy as np
import pytest

from decrackle.dsp import StftConfig
from decrackle.model import (
    DiscriminatorSet,
    EncoderBlock,
    GeneratorConfig,
    MultiScaleDenoiser,
    ScaleGenerator,
    StftDiscriminator,
    WaveDiscriminator,
)
from decrackle.nn import Tensor
from decrackle.nn import functional as F

TINY = GeneratorConfig(
    scales=1,
    base_window=256,
    base_hop=64,
    channels=(4, 8, 8),
    downsample=("freq", "time+freq", "freq"),
    seed=3,
)

TINY2 = GeneratorConfig(
    scales=2,
    base_window=512,
    base_hop=128,
    channels=(4, 8, 8),
    downsample=("freq", "time+freq", "freq"),
    seed=4,
)

DESK = GeneratorConfig()  # scales=2, 2048/512 base, desk channels


def rand_wave(n, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-0.5, 0.5, size=(1, n)).astype(dtype))


class TestEncoderBlock:
    def test_freq_only_stride(self):
        rng = np.random.default_rng(0)
        block = EncoderBlock(2, 4, "freq", rng)
        x = Tensor(rng.normal(size=(1, 2, 16, 32)).astype(np.float32))
        out, skip = block(x)
        assert out.shape == (1, 4, 16, 16)
        assert skip.shape == (1, 4, 16, 32)

    def test_time_freq_stride(self):
        rng = np.random.default_rng(1)
        block = EncoderBlock(2, 4, "time+freq", rng)
        x = Tensor(rng.normal(size=(1, 2, 16, 32)).astype(np.float32))
        out, _ = block(x)
        assert out.shape == (1, 4, 8, 16)

    def test_divisibility_enforced(self):
        block = EncoderBlock(2, 4, "time+freq", np.random.default_rng(2))
        x = Tensor(np.zeros((1, 2, 15, 32), dtype=np.float32))
        with pytest.raises(ValueError, match="divisible"):
            block(x)

    def test_zero_weights_give_bias_only(self):
        rng = np.random.default_rng(3)
        block = EncoderBlock(2, 4, "freq", rng)
        block.conv.zero_output()
        block.down.zero_output()
        x = Tensor(rng.normal(size=(1, 2, 8, 16)).astype(np.float32))
        out, _ = block(x)
        assert np.all(out.data == 0)  # zero bias too

    def test_finite_for_random_input(self):
        rng = np.random.default_rng(4)
        block = EncoderBlock(2, 8, "time+freq", rng)
        out, _ = block(Tensor(rng.normal(size=(2, 2, 8, 16)).astype(np.float32)))
        assert np.all(np.isfinite(out.data))


class TestDecoderBlock:
    def test_shortcut_isolation_matching_channels(self):
        from decrackle.model import DecoderBlock

        rng = np.random.default_rng(5)
        block = DecoderBlock(8, 8, "time+freq", rng)
        assert block.project is None  # equal channels: no projection
        block.conv.zero_output()
        x = Tensor(rng.normal(size=(1, 8, 4, 8)).astype(np.float32))
        skip = Tensor(rng.normal(size=(1, 8, 8, 16)).astype(np.float32))
        out = block(x, skip)
        expected = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
        assert np.abs(out.data - expected).max() < 1e-6

    def test_projection_present_when_channels_differ(self):
        from decrackle.model import DecoderBlock

        rng = np.random.default_rng(6)
        assert DecoderBlock(8, 4, "freq", rng).project is not None
        assert DecoderBlock(8, 8, "freq", rng).project is None

    def test_mirror_stride_shapes(self):
        from decrackle.model import DecoderBlock

        rng = np.random.default_rng(7)
        block = DecoderBlock(8, 4, "time+freq", rng)
        x = Tensor(rng.normal(size=(1, 8, 8, 16)).astype(np.float32))
        skip = Tensor(rng.normal(size=(1, 8, 16, 32)).astype(np.float32))
        assert block(x, skip).shape == (1, 4, 16, 32)


class TestScaleGenerator:
    def test_unet_mirror_symmetry(self):
        gen = ScaleGenerator(TINY, np.random.default_rng(8))
        x = Tensor(np.random.default_rng(9).normal(size=(1, 2, 8, 32)).astype(np.float32))
        # walk the blocks manually, checking each decoder output shape
        inputs = []
        z = x
        skips = []
        for block in gen.encoder:
            inputs.append(z.shape)
            z, skip = block(z)
            skips.append(skip)
        for block, skip, shape in zip(gen.decoder, reversed(skips), reversed(inputs)):
            z = block(z, skip)
            assert z.shape == shape

    def test_residual_identity_default_init(self):
        gen = ScaleGenerator(TINY, np.random.default_rng(10))
        x = rand_wave(1000, seed=11)
        out = gen(x)
        assert np.array_equal(out.data, x.data)

    def test_not_identity_after_perturbation(self):
        gen = ScaleGenerator(TINY, np.random.default_rng(12))
        last = gen.decoder[len(gen.decoder) - 1]
        last.conv.bias.data = np.full_like(last.conv.bias.data, 0.1)
        x = rand_wave(1000, seed=13)
        out = gen(x)
        assert not np.allclose(out.data, x.data)
        assert np.all(np.isfinite(out.data))

    @pytest.mark.parametrize("n", [8192, 44100, 220500])
    def test_length_preserved(self, n):
        cfg = GeneratorConfig(scales=1, channels=(8, 16, 16, 16))
        gen = ScaleGenerator(cfg, np.random.default_rng(14))
        x = rand_wave(n, seed=15)
        assert gen(x).shape == (1, n)

    def test_too_short_raises(self):
        gen = ScaleGenerator(TINY, np.random.default_rng(16))
        with pytest.raises(ValueError, match="too short"):
            gen(Tensor(np.zeros((1, 64), dtype=np.float32)))


class TestMultiScale:
    def test_k1_matches_scale_forward(self):
        model = MultiScaleDenoiser(TINY)
        x = rand_wave(1200, seed=17)
        direct = model.generators[0](x)
        combined, inters = model.forward(x)
        assert np.array_equal(combined.data, direct.data)
        assert len(inters) == 1

    def test_zero_residual_stack_is_identity(self):
        model = MultiScaleDenoiser(TINY2)
        x = rand_wave(2000, seed=18)
        out, inters = model.forward(x)
        assert np.array_equal(out.data, x.data)
        for inter in inters:
            assert np.array_equal(inter.data, x.data)

    def test_k2_uses_halved_window(self):
        assert DESK.stft_config() == StftConfig(1024, 256)
        assert GeneratorConfig(scales=1).stft_config() == StftConfig(2048, 512)
        assert GeneratorConfig(scales=3).stft_config() == StftConfig(512, 128)

    def test_intermediates_count_and_order(self):
        model = MultiScaleDenoiser(TINY2)
        last = model.generators[0].decoder[len(model.generators[0].decoder) - 1]
        last.conv.bias.data = np.full_like(last.conv.bias.data, 0.05)
        x = rand_wave(2000, seed=19)
        out, inters = model.forward(x)
        assert len(inters) == 2
        assert np.array_equal(inters[-1].data, out.data)
        # coarse-scale composite unchanged by the fine-scale perturbation
        assert np.array_equal(inters[0].data, x.data)

    def test_save_load_round_trip(self, tmp_path):
        model = MultiScaleDenoiser(TINY2)
        gen = model.generators[1]
        gen.encoder[0].conv.bias.data += 0.25
        path = tmp_path / "model.ckpt"
        model.save(path, extra={"step": 7})
        loaded = MultiScaleDenoiser.load(path)
        x = rand_wave(2000, seed=20)
        assert np.array_equal(loaded.forward(x)[0].data, model.forward(x)[0].data)

    def test_param_count_matches_closed_form(self):
        model = MultiScaleDenoiser(DESK)
        chans = (2,) + DESK.channels

        def conv_params(cin, cout, kh, kw):
            return cout * cin * kh * kw + cout + cout  # direction + gain + bias

        def convT_params(cin, cout, kh, kw):
            return cin * cout * kh * kw + cin + cout  # gain is per axis-0 slice

        per_scale = 0
        for i, mode in enumerate(DESK.downsample):
            kh, kw = (3, 4) if mode == "freq" else (4, 4)
            per_scale += conv_params(chans[i], chans[i + 1], 3, 3)
            per_scale += conv_params(chans[i + 1], chans[i + 1], kh, kw)
        for i, mode in reversed(list(enumerate(DESK.downsample))):
            kh, kw = (3, 4) if mode == "freq" else (4, 4)
            cin, cout = chans[i + 1], chans[i]
            per_scale += convT_params(cin, cin, kh, kw)
            per_scale += conv_params(2 * cin, cout, 3, 3)
            if cin != cout:
                per_scale += conv_params(cin, cout, 1, 1)
        assert model.param_count() == DESK.scales * per_scale

    def test_bypass_phase_residual_shares_input_phase(self):
        cfg = GeneratorConfig(
            scales=1, base_window=256, base_hop=64,
            channels=(4, 8), downsample=("freq", "time+freq"),
            bypass_phase=True, seed=5,
        )
        gen = ScaleGenerator(cfg, np.random.default_rng(21))
        last = gen.decoder[len(gen.decoder) - 1]
        last.conv.bias.data = np.full_like(last.conv.bias.data, 0.3)
        x = rand_wave(1000, seed=22)
        spec = F.stft_tensor(x, cfg.stft_cfg if hasattr(cfg, "stft_cfg") else cfg.stft_config())
        image = F.complex_modulus(spec)
        residual_mag = gen.unet(image)
        residual_spec = F.scale_by_unit_phase(residual_mag, spec.data)
        z = spec.data[:, 0] + 1j * spec.data[:, 1]
        r = residual_spec.data[:, 0] + 1j * residual_spec.data[:, 1]
        mask = np.abs(z) > 1e-6
        # residual rotated by the conjugate unit phase must be purely real
        unit = z[mask] / np.abs(z[mask])
        rotated = r[mask] * np.conj(unit)
        assert np.abs(rotated.imag).max() < 1e-5 * max(1.0, np.abs(r).max())

    def test_bypass_phase_identity_at_init(self):
        cfg = GeneratorConfig(
            scales=1, base_window=256, base_hop=64,
            channels=(4, 8), downsample=("freq", "time+freq"),
            bypass_phase=True, seed=6,
        )
        gen = ScaleGenerator(cfg, np.random.default_rng(23))
        x = rand_wave(900, seed=24)
        assert np.array_equal(gen(x).data, x.data)


class TestStftDiscriminator:
    def test_2d_logit_map_not_pooled(self):
        disc = StftDiscriminator(TINY, rng=np.random.default_rng(25))
        x = rand_wave(8000, seed=26)  # "1 s" at 8 kHz
        logits = disc(x)
        assert logits.data.ndim == 3
        assert logits.data[0].size > 1
        assert np.all(np.isfinite(logits.data))

    def test_time_axis_grows_with_duration(self):
        disc = StftDiscriminator(TINY, rng=np.random.default_rng(27))
        t1 = disc(rand_wave(4000, seed=28)).shape[1]
        t2 = disc(rand_wave(8000, seed=28)).shape[1]
        assert abs(t2 - 2 * t1) <= 1


class TestWaveDiscriminator:
    def test_1d_logits_span_time(self):
        disc = WaveDiscriminator(rng=np.random.default_rng(29))
        logits = disc(rand_wave(8000, seed=30))
        assert logits.data.ndim == 2
        assert logits.shape[1] > 1
        assert np.all(np.isfinite(logits.data))

    def test_translation_covariance(self):
        disc = WaveDiscriminator(rng=np.random.default_rng(31))
        rng = np.random.default_rng(32)
        base = rng.uniform(-0.5, 0.5, size=16384 + 256).astype(np.float32)
        a = disc(Tensor(base[None, :16384])).data[0]
        b = disc(Tensor(base[None, 256 : 256 + 16384])).data[0]
        # shifting the input by the total stride shifts logits by one
        lo, hi = 16, len(a) - 16
        scale = np.abs(a).std() + 1e-6
        assert np.abs(a[lo + 1 : hi + 1] - b[lo:hi]).max() < 0.05 * max(1.0, scale)


class TestDiscriminatorSet:
    def test_one_pair_per_scale(self):
        ds = DiscriminatorSet(TINY2)
        assert len(ds.wave) == 2
        assert len(ds.stft) == 2
        x = rand_wave(2000, seed=33)
        wave_logits, stft_logits = ds.scale_logits(0, x)
        assert wave_logits.data.ndim == 2
        assert stft_logits.data.ndim == 3
