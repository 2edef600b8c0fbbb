"""Mono audio clips and WAV file I/O.

Supported WAV flavours: PCM 16-bit, PCM 24-bit and IEEE float32. Stereo
(or any multichannel) input is downmixed by averaging channels. Sample
rates are carried through unchanged.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_FORMAT_PCM = 1
_FORMAT_IEEE_FLOAT = 3
_FORMAT_EXTENSIBLE = 0xFFFE


class AudioError(Exception):
    """Raised for malformed audio files or invalid clip construction."""


@dataclass(frozen=True)
class AudioClip:
    """A mono waveform with its sample rate.

    Samples are dimensionless amplitudes, nominally in [-1, 1], stored as
    float64. All samples must be finite and the sample rate positive.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"clip samples must be 1-D, got shape {samples.shape}")
        if samples.size and not np.all(np.isfinite(samples)):
            raise AudioError("clip contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        """Clip duration in seconds."""
        return len(self) / self.sample_rate

    def rms(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples**2)))

    def with_samples(self, samples: np.ndarray) -> "AudioClip":
        """New clip with the same sample rate and different samples."""
        return AudioClip(samples, self.sample_rate)


# ---------------------------------------------------------------------------
# WAV reading
# ---------------------------------------------------------------------------

def load_wav(path) -> AudioClip:
    """Read a WAV file as a mono AudioClip.

    Multichannel audio is downmixed by averaging channels. PCM samples are
    scaled to [-1, 1); float data is taken as-is.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise AudioError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    frames = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise AudioError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            frames = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None or frames is None:
        raise AudioError(f"{path}: missing fmt or data chunk")
    fmt_tag, channels, rate, _byte_rate, _block_align, bits = fmt
    if fmt_tag == _FORMAT_EXTENSIBLE:
        # Sub-format GUID starts with the effective format tag.
        raise AudioError(f"{path}: WAVE_FORMAT_EXTENSIBLE is not supported")
    if channels < 1:
        raise AudioError(f"{path}: invalid channel count {channels}")

    if fmt_tag == _FORMAT_PCM and bits == 16:
        x = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0
    elif fmt_tag == _FORMAT_PCM and bits == 24:
        raw = np.frombuffer(frames, dtype=np.uint8)
        raw = raw[: (len(raw) // 3) * 3].reshape(-1, 3)
        vals = (
            raw[:, 0].astype(np.int32)
            | (raw[:, 1].astype(np.int32) << 8)
            | (raw[:, 2].astype(np.int32) << 16)
        )
        vals = np.where(vals >= 1 << 23, vals - (1 << 24), vals)
        x = vals.astype(np.float64) / float(1 << 23)
    elif fmt_tag == _FORMAT_IEEE_FLOAT and bits == 32:
        x = np.frombuffer(frames, dtype="<f4").astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported format tag={fmt_tag} bits={bits}")

    if channels > 1:
        x = x[: (len(x) // channels) * channels].reshape(-1, channels).mean(axis=1)
    if x.size and not np.all(np.isfinite(x)):
        raise AudioError(f"{path}: non-finite samples")
    return AudioClip(x, rate)


# ---------------------------------------------------------------------------
# WAV writing
# ---------------------------------------------------------------------------

def save_wav(path, clip: AudioClip, encoding: str = "float32") -> None:
    """Write a mono AudioClip as WAV.

    encoding: "float32" (default), "pcm16" or "pcm24". PCM encodings clip
    to [-1, 1] and round.
    """
    x = clip.samples
    if encoding == "float32":
        fmt_tag, bits = _FORMAT_IEEE_FLOAT, 32
        payload = x.astype("<f4").tobytes()
    elif encoding == "pcm16":
        fmt_tag, bits = _FORMAT_PCM, 16
        q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        payload = q.tobytes()
    elif encoding == "pcm24":
        fmt_tag, bits = _FORMAT_PCM, 24
        q = np.clip(np.round(x * float(1 << 23)), -(1 << 23), (1 << 23) - 1).astype(np.int64)
        q = np.where(q < 0, q + (1 << 24), q).astype(np.uint32)
        b = np.empty((len(q), 3), dtype=np.uint8)
        b[:, 0] = q & 0xFF
        b[:, 1] = (q >> 8) & 0xFF
        b[:, 2] = (q >> 16) & 0xFF
        payload = b.tobytes()
    else:
        raise ValueError(f"unknown encoding {encoding!r}")

    block_align = bits // 8
    byte_rate = clip.sample_rate * block_align
    fmt_chunk = struct.pack(
        "<HHIIHH", fmt_tag, 1, clip.sample_rate, byte_rate, block_align, bits
    )
    pad = b"\x00" if len(payload) & 1 else b""
    riff_size = 4 + (8 + len(fmt_chunk)) + (8 + len(payload) + len(pad))
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", riff_size) + b"WAVE")
        fh.write(b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk)
        fh.write(b"data" + struct.pack("<I", len(payload)) + payload)
        fh.write(pad)
