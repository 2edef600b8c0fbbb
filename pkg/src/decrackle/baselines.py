"""Classical signal-processing baselines: log-spectral-amplitude MMSE
suppression and a local-statistics Wiener filter.

The log-MMSE noise spectrum is estimated from the lowest-energy frames of
the whole clip (rather than assuming the clip starts with noise), which
suits recordings where pauses can appear anywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import exp1

from .audio import AudioClip
from .dsp import Spectrogram, StftConfig, istft, stft

_GAMMA_MAX = 1e8


@dataclass(frozen=True)
class LogMmseConfig:
    stft: StftConfig = StftConfig(1024, 256)
    noise_quantile: float = 0.1
    dd_alpha: float = 0.98
    gain_floor: float = 0.01

    def __post_init__(self):
        if not 0 < self.noise_quantile < 1:
            raise ValueError("noise_quantile must be in (0, 1)")
        if not 0 <= self.dd_alpha < 1:
            raise ValueError("dd_alpha must be in [0, 1)")
        if self.gain_floor <= 0:
            raise ValueError("gain_floor must be positive")


def estimate_noise_psd(power: np.ndarray, quantile: float) -> np.ndarray:
    """Mean periodogram of the lowest-energy frames of the whole clip."""
    frame_energy = power.sum(axis=1)
    k = max(1, int(round(quantile * len(frame_energy))))
    idx = np.argsort(frame_energy, kind="stable")[:k]
    return power[idx].mean(axis=0)


def logmmse_gains(clip: AudioClip, cfg: LogMmseConfig = LogMmseConfig()):
    """Returns (spectrogram, per-frame-per-bin gain matrix in
    [gain_floor, 1]) for the log-spectral-amplitude MMSE estimator with
    decision-directed a priori SNR."""
    if len(clip) < cfg.stft.window_size:
        raise ValueError(
            f"input too short: {len(clip)} samples < window {cfg.stft.window_size}"
        )
    spec = stft(clip, cfg.stft)
    power = np.abs(spec.values) ** 2
    noise_psd = estimate_noise_psd(power, cfg.noise_quantile)

    gains = np.empty_like(power)
    prev_clean_power = None
    safe_noise = np.maximum(noise_psd, 1e-300)
    for t in range(power.shape[0]):
        gamma = np.minimum(power[t] / safe_noise, _GAMMA_MAX)
        if prev_clean_power is None:
            xi = cfg.dd_alpha + (1 - cfg.dd_alpha) * np.maximum(gamma - 1.0, 0.0)
        else:
            xi = (
                cfg.dd_alpha * prev_clean_power / safe_noise
                + (1 - cfg.dd_alpha) * np.maximum(gamma - 1.0, 0.0)
            )
        v = xi / (1.0 + xi) * gamma
        gain = xi / (1.0 + xi) * np.exp(0.5 * exp1(np.maximum(v, 1e-50)))
        gain = np.clip(gain, cfg.gain_floor, 1.0)
        gains[t] = gain
        prev_clean_power = (gain**2) * power[t]
    return spec, gains


def logmmse_denoise(clip: AudioClip, cfg: LogMmseConfig = LogMmseConfig()) -> AudioClip:
    """Suppression via log-MMSE spectral gains; input phase is reused."""
    spec, gains = logmmse_gains(clip, cfg)
    out = Spectrogram(
        gains * spec.values, spec.config, spec.sample_rate,
        spec.source_length, spec.padded,
    )
    return istft(out)


@dataclass(frozen=True)
class WienerConfig:
    window_len: int = 3
    noise_power: float | None = None

    def __post_init__(self):
        if self.window_len < 1 or self.window_len % 2 == 0:
            raise ValueError("window_len must be odd and >= 1")


def wiener_denoise(clip: AudioClip, cfg: WienerConfig = WienerConfig()) -> AudioClip:
    """Local mean/variance Wiener filter:
    out = mu + max(var - noise, 0) / max(var, noise) * (x - mu).

    Local statistics use reflected edges so constant inputs pass through
    unchanged; the noise power defaults to the mean local variance.
    """
    x = clip.samples
    n = len(x)
    if n == 0:
        return clip.with_samples(x.copy())
    w = min(cfg.window_len, 2 * n - 1)
    half = w // 2
    if half:
        xp = np.pad(x, (half, half), mode="reflect")
    else:
        xp = x
    kernel = np.ones(w) / w
    mean = np.convolve(xp, kernel, mode="valid")
    var = np.convolve(xp * xp, kernel, mode="valid") - mean**2
    var = np.maximum(var, 0.0)
    noise = float(np.mean(var)) if cfg.noise_power is None else float(cfg.noise_power)
    denom = np.maximum(var, noise)
    gain = np.divide(
        np.maximum(var - noise, 0.0), denom,
        out=np.zeros_like(var), where=denom > 0,
    )
    return clip.with_samples(mean + gain * (x - mean))
