"""Denoising toolkit for historical music recordings."""

from .audio import AudioClip, load_wav, save_wav
from .dsp import BandPassSpec, Spectrogram, StftConfig, bandpass, istft, snr_db, stft

__all__ = [
    "AudioClip",
    "load_wav",
    "save_wav",
    "BandPassSpec",
    "Spectrogram",
    "StftConfig",
    "bandpass",
    "istft",
    "snr_db",
    "stft",
]

__version__ = "0.1.0"
