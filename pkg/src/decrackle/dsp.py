"""Deterministic signal-processing primitives shared across the toolkit.

Everything here is a pure function of its inputs: STFT analysis and
least-squares overlap-add synthesis, 2x resampling through a half-band
filter, Butterworth band-pass filtering, rolling standard deviation and
SNR measurement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as _sig

from .audio import AudioClip

_COLA_RTOL = 1e-6


# ---------------------------------------------------------------------------
# Windows and STFT configuration
# ---------------------------------------------------------------------------

def make_window(name: str, length: int) -> np.ndarray:
    """Analysis window by identifier ("hann" is periodic)."""
    if name == "hann":
        n = np.arange(length)
        return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / length))
    if name in ("rect", "rectangular"):
        return np.ones(length)
    raise ValueError(f"unknown window {name!r}")


@dataclass(frozen=True)
class StftConfig:
    """STFT framing: window size, hop, and window function identifier."""

    window_size: int
    hop_size: int
    window: str = "hann"

    def __post_init__(self):
        w, h = self.window_size, self.hop_size
        if w < 8 or w % 2:
            raise ValueError(f"window_size must be even and >= 8, got {w}")
        if h < 1 or h > w:
            raise ValueError(f"hop_size must be in [1, window_size], got {h}")
        if w % h:
            raise ValueError(f"hop_size {h} must divide window_size {w}")
        make_window(self.window, w)  # validates the identifier

    @property
    def bins(self) -> int:
        return self.window_size // 2 + 1

    def window_values(self) -> np.ndarray:
        return make_window(self.window, self.window_size)

    def is_cola(self) -> bool:
        """True when shifted squared windows sum to a constant at this hop."""
        wsq = self.window_values() ** 2
        folded = wsq.reshape(self.window_size // self.hop_size, self.hop_size).sum(axis=0)
        peak = folded.max()
        return peak > 0 and (folded.max() - folded.min()) <= _COLA_RTOL * peak


@dataclass(frozen=True)
class Spectrogram:
    """Complex time-frequency matrix [frames, bins] plus its framing metadata.

    source_length and padded record how the analysis framed the signal so
    that synthesis can restore the exact original length.
    """

    values: np.ndarray
    config: StftConfig
    sample_rate: int
    source_length: int
    padded: bool = True

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError(f"spectrogram values must be 2-D, got {values.shape}")
        if values.shape[1] != self.config.bins:
            raise ValueError(
                f"bin count {values.shape[1]} inconsistent with window "
                f"{self.config.window_size} (expected {self.config.bins})"
            )
        if values.size and not np.all(np.isfinite(values)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "values", values.astype(np.complex128, copy=False))

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# STFT / inverse STFT
# ---------------------------------------------------------------------------

def frame_signal(x: np.ndarray, window_size: int, hop_size: int) -> np.ndarray:
    """[n] -> [frames, window_size] view-copy; frames = (n - w)//h + 1."""
    n = x.shape[0]
    frames = (n - window_size) // hop_size + 1
    stride = x.strides[0]
    view = np.lib.stride_tricks.as_strided(
        x, shape=(frames, window_size), strides=(hop_size * stride, stride)
    )
    return view.copy()


def stft(clip: AudioClip, cfg: StftConfig, pad: bool = True) -> Spectrogram:
    """Short-time Fourier transform.

    With pad=True (the policy used throughout the pipeline) the signal is
    reflect-padded by window/2 on both ends plus zeros at the tail so the
    frames tile the padded signal exactly; istft then crops back to the
    original length. With pad=False the signal is framed as-is and must be
    at least one window long.
    """
    w, h = cfg.window_size, cfg.hop_size
    x = clip.samples
    n = x.shape[0]
    if pad:
        half = w // 2
        if n < 1:
            raise ValueError("input too short: empty clip")
        if n == 1:
            x = np.pad(x, (half, half), mode="edge")
        else:
            x = np.pad(x, (half, half), mode="reflect")
        tail = (-(x.shape[0] - w)) % h
        if tail:
            x = np.pad(x, (0, tail), mode="constant")
    elif n < w:
        raise ValueError(
            f"input too short: {n} samples < window {w} (pad disabled)"
        )
    frames = frame_signal(x, w, h)
    frames *= cfg.window_values()
    values = np.fft.rfft(frames, axis=1)
    return Spectrogram(values, cfg, clip.sample_rate, n, padded=pad)


def istft(spec: Spectrogram) -> AudioClip:
    """Least-squares overlap-add inverse of :func:`stft`.

    Each output sample is the window-weighted average of every frame that
    covers it, which reconstructs unmodified spectrograms exactly wherever
    window coverage is nonzero. Output length equals the analyzed clip's.
    """
    cfg = spec.config
    if not cfg.is_cola():
        raise ValueError(
            f"window {cfg.window!r} does not satisfy COLA at hop {cfg.hop_size}"
        )
    w, h = cfg.window_size, cfg.hop_size
    win = cfg.window_values()
    frames = np.fft.irfft(spec.values, n=w, axis=1)
    frames *= win

    total = w + (spec.frames - 1) * h
    out = np.zeros(total)
    wsum = np.zeros(total)
    wsq = win**2
    for i in range(spec.frames):
        start = i * h
        out[start : start + w] += frames[i]
        wsum[start : start + w] += wsq
    good = wsum > wsum.max() * 1e-10 if total else wsum
    out[good] /= wsum[good]

    n = spec.source_length
    if spec.padded:
        out = out[w // 2 : w // 2 + n]
    if out.shape[0] < n:
        out = np.pad(out, (0, n - out.shape[0]), mode="constant")
    else:
        out = out[:n]
    return AudioClip(out, spec.sample_rate)


# ---------------------------------------------------------------------------
# 2x resampling (half-band windowed sinc)
# ---------------------------------------------------------------------------

_HALFBAND_LEN = 63
_HALFBAND_DELAY = _HALFBAND_LEN // 2


def halfband_taps() -> np.ndarray:
    """63-tap Hamming-windowed sinc half-band low-pass, unit DC gain."""
    m = np.arange(_HALFBAND_LEN) - _HALFBAND_DELAY
    h = 0.5 * np.sinc(m / 2.0) * np.hamming(_HALFBAND_LEN)
    return h / h.sum()


_HB_TAPS = halfband_taps()


def _filter_same(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Zero-phase FIR: convolve and remove the group delay of symmetric taps."""
    if x.shape[0] == 0:
        return x.copy()
    full = np.convolve(x, taps)
    return full[_HALFBAND_DELAY : _HALFBAND_DELAY + x.shape[0]]


def downsample2(clip: AudioClip) -> AudioClip:
    """Halve the sample rate: half-band low-pass then keep every other sample."""
    n = len(clip)
    y = _filter_same(clip.samples, _HB_TAPS)[::2][: n // 2]
    return AudioClip(y, clip.sample_rate // 2)


def upsample2(clip: AudioClip) -> AudioClip:
    """Double the sample rate: zero-stuff then interpolate with the half-band filter."""
    n = len(clip)
    z = np.zeros(2 * n)
    z[::2] = clip.samples
    y = _filter_same(z, 2.0 * _HB_TAPS)
    return AudioClip(y, clip.sample_rate * 2)


# ---------------------------------------------------------------------------
# Band-pass filtering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BandPassSpec:
    """Butterworth band-pass edges in Hz and design order."""

    low_cut: float
    high_cut: float
    order: int = 4

    def validate(self, sample_rate: int) -> None:
        if not (0 < self.low_cut < self.high_cut < sample_rate / 2):
            raise ValueError(
                f"band [{self.low_cut}, {self.high_cut}] Hz invalid for "
                f"sample rate {sample_rate}"
            )
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")


def bandpass(clip: AudioClip, spec: BandPassSpec) -> AudioClip:
    """Causal Butterworth band-pass as a cascade of second-order sections."""
    spec.validate(clip.sample_rate)
    sos = _sig.butter(
        spec.order,
        [spec.low_cut, spec.high_cut],
        btype="bandpass",
        fs=clip.sample_rate,
        output="sos",
    )
    return clip.with_samples(_sig.sosfilt(sos, clip.samples))


# ---------------------------------------------------------------------------
# Rolling statistics and SNR
# ---------------------------------------------------------------------------

def rolling_std(clip: AudioClip, window_seconds: float = 0.1) -> np.ndarray:
    """Population standard deviation over a trailing window.

    Entry i covers samples [max(0, i - w + 1), i]; the first w - 1 entries
    use the shrinking prefix so the output has the clip's full length.
    """
    n = len(clip)
    if n == 0:
        return np.zeros(0)
    w = max(1, int(round(window_seconds * clip.sample_rate)))
    if w == 1:
        return np.zeros(n)
    # Shift by the global mean and accumulate in extended precision: the
    # windowed variance is shift-invariant and the cumulative-sum trick
    # cancels catastrophically on near-silent windows otherwise.
    x = clip.samples - clip.samples.mean()
    xl = x.astype(np.longdouble)
    c1 = np.concatenate(([0.0], np.cumsum(xl)))
    c2 = np.concatenate(([0.0], np.cumsum(xl * xl)))
    idx = np.arange(n)
    start = np.maximum(0, idx - w + 1)
    count = idx - start + 1
    s1 = c1[idx + 1] - c1[start]
    s2 = c2[idx + 1] - c2[start]
    var = (s2 - s1 * s1 / count) / count
    out = np.sqrt(np.maximum(var, 0.0)).astype(np.float64)

    # Near-degenerate windows (the quiet segments that matter most) get an
    # exact two-pass recomputation; the threshold keeps the cumulative-sum
    # rounding error negligible everywhere else.
    thresh = 1e-3 * (1.0 + float(np.mean(x * x)))
    suspect = np.flatnonzero(out < thresh)
    if suspect.size:
        full = suspect[suspect >= w - 1]
        for lo in range(0, full.size, 4096):
            rows = full[lo : lo + 4096]
            seg = x[rows[:, None] - w + 1 + np.arange(w)]
            seg = seg - seg.mean(axis=1, keepdims=True)
            out[rows] = np.sqrt(np.mean(seg * seg, axis=1))
        for i in suspect[suspect < w - 1]:
            out[i] = np.std(x[: i + 1])
    return out


def snr_db(reference: AudioClip, estimate: AudioClip) -> float:
    """10*log10(sum(ref^2) / sum((ref - est)^2)); +inf for a zero residual."""
    if len(reference) != len(estimate):
        raise ValueError(
            f"length mismatch: reference {len(reference)} vs estimate {len(estimate)}"
        )
    ref_energy = float(np.sum(reference.samples**2))
    if ref_energy == 0.0:
        raise ValueError("reference is all-zero; SNR undefined")
    residual = float(np.sum((reference.samples - estimate.samples) ** 2))
    if residual == 0.0:
        return math.inf
    return 10.0 * math.log10(ref_energy / residual)
