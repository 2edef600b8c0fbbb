"""Synthetic desk-scale corpus: band-limited tone mixtures as "clean music"
and constructed old-recording files whose quiet gaps carry hiss and
crackle for the noise miner. Small enough to train on in minutes."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import signal as _sig

from .audio import AudioClip, save_wav
from .noisebank import NoiseExtractionConfig, scan_corpus
from .pairs import PairSynthesisConfig, build_dataset

TOY_SAMPLE_RATE = 2000
TOY_CLIP_SECONDS = 2.0


def tone_mixture(seconds, sample_rate, rng, n_tones=(3, 5), band=(100.0, 600.0),
                 note_seconds=(0.4, 0.9), rest_prob=0.12):
    """A music-like clip: a sequence of short "chords" (random partial sets)
    with attack/decay envelopes and occasional rests. Every note draws
    fresh frequencies so no two clips share a spectrum."""
    n = int(round(seconds * sample_rate))
    x = np.zeros(n)
    pos = 0
    while pos < n:
        dur = int(rng.uniform(*note_seconds) * sample_rate)
        dur = min(dur, n - pos)
        if dur < 8:
            break
        if rng.uniform() >= rest_prob:
            t = np.arange(dur) / sample_rate
            attack = min(dur, max(2, int(0.03 * sample_rate)))
            env = np.ones(dur)
            env[:attack] = np.linspace(0, 1, attack)
            env *= np.exp(-t / rng.uniform(0.8, 2.0))
            note = np.zeros(dur)
            for _ in range(int(rng.integers(n_tones[0], n_tones[1] + 1))):
                freq = rng.uniform(*band)
                note += rng.uniform(0.3, 1.0) * np.sin(
                    2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi)
                )
            x[pos : pos + dur] += env * note
        pos += dur
    peak = np.abs(x).max()
    if peak > 0:
        x *= 0.5 / peak
    return AudioClip(x, sample_rate)


def surface_noise(n, sample_rate, rng, amp=1.0):
    """Shellac-style noise floor: hiss whose color and level drift from
    moment to moment, plus crackle arriving in bursts. Deliberately
    non-stationary, like the noise on real records (and unlike what
    stationary-spectrum suppressors assume)."""
    hiss = np.empty(n)
    pos = 0
    while pos < n:
        seg = min(n - pos, int(rng.uniform(0.3, 0.7) * sample_rate))
        white = rng.normal(0.0, 0.35, size=seg + 64)
        b, a = _sig.butter(2, rng.uniform(0.15, 0.9))
        colored = _sig.lfilter(b, a, white)[64:]
        hiss[pos : pos + seg] = rng.uniform(0.4, 1.6) * colored
        pos += seg
    crackle = np.zeros(n)
    n_bursts = max(1, int(n / sample_rate * 6))
    for _ in range(n_bursts):
        start = int(rng.integers(0, n))
        for _ in range(int(rng.integers(1, 7))):
            p = start + int(rng.integers(0, int(0.05 * sample_rate) + 1))
            if p < n:
                crackle[p] = rng.uniform(-1.0, 1.0) * rng.uniform(1.0, 2.5)
    return amp * (hiss + crackle)


def old_recording(seconds, sample_rate, rng, n_gaps=4, gap_range=(0.2, 0.4),
                  floor_amp=0.015, music_rest_prob=0.12):
    """Loud music with quiet noise-floor gaps, as found on old records.

    music_rest_prob=0 makes the musical part gap-free, so the planted
    gaps are the only quasi-silent spans (useful for recall fixtures)."""
    n = int(round(seconds * sample_rate))
    x = tone_mixture(seconds, sample_rate, rng,
                     rest_prob=music_rest_prob).samples.copy()
    x += surface_noise(n, sample_rate, rng, amp=floor_amp)
    placed = []
    spans = []
    tries = 0
    while len(placed) < n_gaps and tries < 200:
        tries += 1
        dur = rng.uniform(*gap_range)
        start = rng.uniform(0.1, seconds - dur - 0.1)
        if any(abs(start - p) < 0.8 for p in placed):
            continue
        a = int(start * sample_rate)
        b = a + int(dur * sample_rate)
        x[a:b] = surface_noise(b - a, sample_rate, rng, amp=floor_amp)
        placed.append(start)
        spans.append((a / sample_rate, (b - a) / sample_rate))
    return AudioClip(x, sample_rate), sorted(spans)


def make_toy_corpus(root, n_clean_files=13, clean_seconds=8.0,
                    n_noise_files=4, noise_seconds=10.0,
                    sample_rate=TOY_SAMPLE_RATE, seed=0):
    """Writes {root}/clean_src/*.wav and {root}/old_records/*.wav."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    clean_dir = root / "clean_src"
    noise_dir = root / "old_records"
    clean_dir.mkdir(parents=True, exist_ok=True)
    noise_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_clean_files):
        clip = tone_mixture(clean_seconds, sample_rate, rng)
        save_wav(clean_dir / f"toy_clean_{i:02d}.wav", clip)
    for i in range(n_noise_files):
        clip, _ = old_recording(noise_seconds, sample_rate, rng)
        save_wav(noise_dir / f"toy_record_{i:02d}.wav", clip)
    return clean_dir, noise_dir


def toy_pair_config(seed=0) -> PairSynthesisConfig:
    # heavy noise (3-12 dB) leaves the denoiser plenty of headroom
    return PairSynthesisConfig(
        low_cut_range=(40.0, 80.0),
        high_cut_range=(820.0, 950.0),
        snr_range=(3.0, 12.0),
        clip_seconds=TOY_CLIP_SECONDS,
        seed=seed,
    )


def build_toy_dataset(root, n_pairs=50, seed=0):
    """Full toy pipeline: corpus, noise mining, pair synthesis.

    Returns (manifest, noise_bank). The band edges sit inside the 1 kHz
    toy Nyquist and the SNR range is noisy enough that denoising has
    headroom to show up in ΔSNR.
    """
    root = Path(root)
    clean_dir, noise_dir = make_toy_corpus(root, seed=seed)
    bank = scan_corpus(
        sorted(noise_dir.glob("*.wav")),
        NoiseExtractionConfig(),
        out_dir=root / "noise_bank",
    )
    if len(bank) == 0:
        raise RuntimeError("toy corpus mining produced no noise segments")
    manifest = build_dataset(
        clean_dir, bank, toy_pair_config(seed), n_pairs, root / "dataset"
    )
    return manifest, bank
