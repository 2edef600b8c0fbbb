"""The denoiser architecture: per-scale spectrogram U-Net residual
generators composed coarse-to-fine, plus the two discriminator families.

Each scale generator works on the complex STFT image (real/imag as a
2-channel picture), runs a symmetric encoder/decoder with skip
connections, converts the result back to a waveform and adds it to its
input. Scale k sees the audio down-sampled by 2^k, so the (halved-per-
scale) analysis window of the coarsest scale spans the same receptive
field as the single-scale window at full resolution.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .audio import AudioClip
from .dsp import StftConfig
from .nn import (
    Conv1d,
    Conv2d,
    ConvTranspose2d,
    LayerNorm,
    Module,
    ModuleList,
    Tensor,
    load_checkpoint,
    save_checkpoint,
    validate_kernel_stride,
)
from .nn import functional as F

FREQ_ONLY = "freq"
TIME_FREQ = "time+freq"


@dataclass(frozen=True)
class GeneratorConfig:
    """Multi-scale generator hyperparameters.

    The analysis window/hop are halved once per added scale (everywhere),
    so the coarsest scale keeps a receptive field of base_window input
    samples. Channel/downsample schedules drive the U-Net blocks; the desk-
    scale defaults are small enough to train on a laptop CPU.
    """

    scales: int = 2
    base_window: int = 2048
    base_hop: int = 512
    channels: tuple = (16, 32, 64, 64)
    downsample: tuple = (FREQ_ONLY, TIME_FREQ, TIME_FREQ, FREQ_ONLY)
    bypass_phase: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.scales < 1:
            raise ValueError("scales must be >= 1")
        if len(self.channels) != len(self.downsample):
            raise ValueError("channels and downsample schedules must align")
        if any(d not in (FREQ_ONLY, TIME_FREQ) for d in self.downsample):
            raise ValueError(f"unknown downsample modes in {self.downsample}")
        if self.stft_config().window_size < 8:
            raise ValueError("too many scales for the base window")

    def stft_config(self) -> StftConfig:
        shift = self.scales - 1
        return StftConfig(self.base_window >> shift, self.base_hop >> shift)

    def stride_products(self):
        t = 2 ** sum(1 for d in self.downsample if d == TIME_FREQ)
        f = 2 ** len(self.downsample)
        return t, f

    def min_input_length(self) -> int:
        half = self.stft_config().window_size // 2
        return (half + 1) * 2 ** (self.scales - 1)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "GeneratorConfig":
        raw = json.loads(text)
        raw["channels"] = tuple(raw["channels"])
        raw["downsample"] = tuple(raw["downsample"])
        return cls(**raw)


def _block_geometry(mode: str):
    if mode == FREQ_ONLY:
        return (3, 4), (1, 2)
    return (4, 4), (2, 2)


class EncoderBlock(Module):
    """3x3 conv then a strided conv (both ELU + weight norm); no shortcut,
    the U-Net skip path already carries this block's input forward."""

    def __init__(self, c_in, c_out, mode, rng):
        super().__init__()
        kernel, stride = _block_geometry(mode)
        validate_kernel_stride(kernel, stride)
        self.stride = stride
        self.conv = Conv2d(c_in, c_out, (3, 3), rng=rng)
        self.down = Conv2d(c_out, c_out, kernel, stride=stride, rng=rng)

    def __call__(self, x: Tensor):
        """Returns (downsampled output, pre-downsample skip features)."""
        h, w = x.shape[2], x.shape[3]
        if h % self.stride[0] or w % self.stride[1]:
            raise ValueError(
                f"encoder input {h}x{w} not divisible by stride {self.stride}"
            )
        skip = F.elu(self.conv(x))
        return F.elu(self.down(skip)), skip


class DecoderBlock(Module):
    """Transposed-conv up-sampling, skip concat, 3x3 conv; plus a shortcut
    of nearest-neighbor up-sampling (1x1-projected only when the channel
    count changes)."""

    def __init__(self, c_in, c_out, mode, rng, final=False):
        super().__init__()
        kernel, stride = _block_geometry(mode)
        validate_kernel_stride(kernel, stride)
        self.stride = stride
        self.final = final
        self.up = ConvTranspose2d(c_in, c_in, kernel, stride=stride, rng=rng)
        self.conv = Conv2d(2 * c_in, c_out, (3, 3), rng=rng)
        self.project = Conv2d(c_in, c_out, (1, 1), rng=rng) if c_in != c_out else None

    def __call__(self, x: Tensor, skip: Tensor) -> Tensor:
        up = F.elu(self.up(x))
        if up.shape != skip.shape:
            raise ValueError(
                f"decoder mirror mismatch: up-sampled {up.shape} vs skip {skip.shape}"
            )
        path = self.conv(F.concat_channels([up, skip]))
        if not self.final:
            path = F.elu(path)
        shortcut = F.nearest_upsample(x, self.stride)
        if self.project is not None:
            shortcut = self.project(shortcut)
        return path + shortcut

    def zero_output_layers(self):
        """Zero the conv path and projection: the block then emits exactly 0."""
        self.conv.zero_output()
        if self.project is None:
            raise ValueError(
                "residual-identity init needs a projection (equal channel "
                "counts leave a non-zero nearest-neighbor shortcut)"
            )
        self.project.zero_output()


class ScaleGenerator(Module):
    """One scale: residual = istft(UNet(stft(x))), output = x + residual."""

    def __init__(self, cfg: GeneratorConfig, rng):
        super().__init__()
        self.cfg = cfg
        self.stft_cfg = cfg.stft_config()
        self.image_channels = 1 if cfg.bypass_phase else 2
        chans = (self.image_channels,) + tuple(cfg.channels)
        enc = ModuleList()
        dec = ModuleList()
        for i, mode in enumerate(cfg.downsample):
            enc.append(EncoderBlock(chans[i], chans[i + 1], mode, rng))
        for i, mode in reversed(list(enumerate(cfg.downsample))):
            dec.append(
                DecoderBlock(chans[i + 1], chans[i], mode, rng, final=(i == 0))
            )
        self.encoder = enc
        self.decoder = dec
        self.decoder[len(self.decoder) - 1].zero_output_layers()

    def unet(self, image: Tensor) -> Tensor:
        t_div, f_div = self.cfg.stride_products()
        h, w = image.shape[2], image.shape[3]
        pad_h = (-h) % t_div
        pad_w = (-w) % f_div
        x = F.pad_end_reflect(image, pad_h, pad_w)
        skips = []
        for block in self.encoder:
            x, skip = block(x)
            skips.append(skip)
        for block, skip in zip(self.decoder, reversed(skips)):
            x = block(x, skip)
        return F.crop2d(x, h, w)

    def __call__(self, x: Tensor) -> Tensor:
        n = x.shape[1]
        spec = F.stft_tensor(x, self.stft_cfg)
        if self.cfg.bypass_phase:
            image = F.complex_modulus(spec)
            residual_mag = self.unet(image)
            residual_spec = F.scale_by_unit_phase(residual_mag, spec.data)
        else:
            residual_spec = self.unet(spec)
        residual = F.istft_tensor(residual_spec, self.stft_cfg, n)
        return x + residual


class MultiScaleDenoiser(Module):
    """Composite of per-scale generators, applied coarsest first."""

    def __init__(self, cfg: GeneratorConfig, rng=None):
        super().__init__()
        self.cfg = cfg
        rng = rng or np.random.default_rng(cfg.seed)
        self.generators = ModuleList(
            [ScaleGenerator(cfg, rng) for _ in range(cfg.scales)]
        )

    def forward(self, x: Tensor):
        """Returns (final output, composite outputs in application order).

        composites[j] is the full-resolution signal after applying scales
        K-1 .. K-1-j; the last entry is the final output.
        """
        if x.shape[1] < self.cfg.min_input_length():
            raise ValueError(
                f"input too short: {x.shape[1]} samples < minimum "
                f"{self.cfg.min_input_length()}"
            )
        composites = []
        z = x
        for k in reversed(range(self.cfg.scales)):
            d = z
            for _ in range(k):
                d = F.downsample2_tensor(d)
            out_k = self.generators[k](d)
            residual = out_k - d
            for _ in range(k):
                residual = F.upsample2_tensor(residual)
            residual = F.fit_length(residual, z.shape[1])
            z = z + residual
            composites.append(z)
        return z, composites

    def __call__(self, x: Tensor):
        return self.forward(x)[0]

    def denoise_clip(self, clip: AudioClip) -> AudioClip:
        x = Tensor(clip.samples.astype(np.float32)[None, :])
        out = self.forward(x)[0]
        return AudioClip(out.data[0].astype(np.float64), clip.sample_rate)

    def zero_residuals(self):
        for gen in self.generators:
            gen.decoder[len(gen.decoder) - 1].zero_output_layers()

    def save(self, path, extra: dict | None = None):
        hp = {"generator_config": asdict(self.cfg)}
        if extra:
            hp.update(extra)
        save_checkpoint(path, self.state_arrays(), hp)

    @classmethod
    def load(cls, path) -> "MultiScaleDenoiser":
        hp, arrays = load_checkpoint(path)
        raw = hp["generator_config"]
        raw["channels"] = tuple(raw["channels"])
        raw["downsample"] = tuple(raw["downsample"])
        model = cls(GeneratorConfig(**raw))
        # training checkpoints bundle optimizer state under prefixes
        if any(k.startswith("model.") for k in arrays):
            arrays = {
                k[len("model."):]: v for k, v in arrays.items()
                if k.startswith("model.")
            }
        model.load_state_arrays(arrays)
        return model


# ---------------------------------------------------------------------------
# Discriminators
# ---------------------------------------------------------------------------

class StftDiscriminator(Module):
    """Generator-encoder topology on the 2-channel STFT image with layer
    norm and LeakyReLU(0.3); emits a 2D time-frequency logit map."""

    def __init__(self, cfg: GeneratorConfig, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        self.stft_cfg = cfg.stft_config()
        chans = (2,) + tuple(cfg.channels)
        convs = ModuleList()
        norms = ModuleList()
        self.strides = []
        for i, mode in enumerate(cfg.downsample):
            kernel, stride = _block_geometry(mode)
            validate_kernel_stride(kernel, stride)
            convs.append(Conv2d(chans[i], chans[i + 1], (3, 3),
                                use_weight_norm=False, rng=rng))
            norms.append(LayerNorm(chans[i + 1]))
            convs.append(Conv2d(chans[i + 1], chans[i + 1], kernel, stride=stride,
                                use_weight_norm=False, rng=rng))
            norms.append(LayerNorm(chans[i + 1]))
            self.strides.append(stride)
        self.convs = convs
        self.norms = norms
        self.head = Conv2d(chans[-1], 1, (3, 3), use_weight_norm=False, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        """x: [N, L] waveform at this discriminator's scale -> [N, F', B']."""
        image = F.stft_tensor(x, self.stft_cfg)
        t_div, f_div = self.cfg.stride_products()
        z = F.pad_end_reflect(image, (-image.shape[2]) % t_div,
                              (-image.shape[3]) % f_div)
        for conv, norm in zip(self.convs, self.norms):
            z = F.leaky_relu(norm(conv(z)), 0.3)
        return _squeeze_channel(self.head(z))


class WaveDiscriminator(Module):
    """MelGAN-topology 1D stack at reduced width: channels only double per
    down-sampling layer; layer norm and LeakyReLU(0.3); 1D logit output."""

    def __init__(self, base_channels: int = 8, n_downsample: int = 4, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        convs = ModuleList()
        norms = ModuleList()
        convs.append(Conv1d(1, base_channels, 15, rng=rng))
        norms.append(LayerNorm(base_channels))
        nf = base_channels
        for _ in range(n_downsample):
            groups = max(1, nf // 4)
            convs.append(Conv1d(nf, nf * 2, 41, stride=4, groups=groups, rng=rng))
            norms.append(LayerNorm(nf * 2))
            nf *= 2
        convs.append(Conv1d(nf, nf, 5, rng=rng))
        norms.append(LayerNorm(nf))
        self.convs = convs
        self.norms = norms
        self.head = Conv1d(nf, 1, 3, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        """x: [N, L] waveform -> [N, T'] logit sequence."""
        z = _unsqueeze_channel(x)
        for conv, norm in zip(self.convs, self.norms):
            z = conv(z)
            if z.shape[2] == 0:
                raise ValueError(
                    f"input too short for the waveform discriminator "
                    f"({x.shape[1]} samples)"
                )
            z = F.leaky_relu(norm(z), 0.3)
        return _squeeze_channel(self.head(z))


def _unsqueeze_channel(x: Tensor) -> Tensor:
    """[N, L] -> [N, 1, L]."""
    from .nn.tensor import make_op

    def backward(g, x=x):
        x._accumulate(g[:, 0, :].copy())

    return make_op(x.data[:, None, :], (x,), backward)


def _squeeze_channel(x: Tensor) -> Tensor:
    """[N, 1, ...] -> [N, ...] (single-channel logit maps)."""
    from .nn.tensor import make_op

    def backward(g, x=x):
        x._accumulate(g[:, None].copy())

    return make_op(x.data[:, 0].copy(), (x,), backward)


class DiscriminatorSet(Module):
    """One waveform and one STFT discriminator per generator scale."""

    def __init__(self, cfg: GeneratorConfig, base_wave_channels: int = 8, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(cfg.seed + 1)
        self.cfg = cfg
        self.wave = ModuleList(
            [WaveDiscriminator(base_wave_channels, rng=rng) for _ in range(cfg.scales)]
        )
        self.stft = ModuleList(
            [StftDiscriminator(cfg, rng=rng) for _ in range(cfg.scales)]
        )

    def scale_logits(self, k: int, x: Tensor):
        return self.wave[k](x), self.stft[k](x)
