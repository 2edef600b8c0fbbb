"""Synthesis of time-aligned <clean, noisy> training pairs.

The degradation recipe: band-pass the clean clip with randomly drawn
cutoffs, then add a mined noise segment (extended to clip length) scaled
so the band-passed-clean-to-noise ratio hits a randomly drawn target SNR.
The stored clean target stays unfiltered, so models learn to undo the
band-limiting as well.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioClip, load_wav, save_wav
from .dsp import BandPassSpec, bandpass, snr_db
from .noisebank import NoiseBank, NoiseExtensionConfig, extend_noise

log = logging.getLogger(__name__)

SILENCE_RMS_DBFS = -60.0


@dataclass(frozen=True)
class PairSynthesisConfig:
    """Sampling ranges for the degradation parameters."""

    low_cut_range: tuple = (50.0, 150.0)
    high_cut_range: tuple = (5000.0, 10000.0)
    snr_range: tuple = (10.0, 30.0)
    clip_seconds: float = 5.0
    seed: int = 0

    def __post_init__(self):
        for name in ("low_cut_range", "high_cut_range", "snr_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} must be ordered, got ({lo}, {hi})")
        if self.low_cut_range[1] >= self.high_cut_range[0]:
            raise ValueError("low_cut_range must sit below high_cut_range")
        if self.clip_seconds <= 0:
            raise ValueError("clip_seconds must be positive")


@dataclass(frozen=True)
class TrainingPair:
    """Aligned clean target and degraded input, plus the mix bookkeeping."""

    clean: AudioClip
    noisy: AudioClip
    mix_snr: float
    noise_id: str
    low_cut: float
    high_cut: float

    def __post_init__(self):
        if len(self.clean) != len(self.noisy):
            raise ValueError("clean and noisy clips must have equal length")


def make_pair(
    clean: AudioClip, bank: NoiseBank, cfg: PairSynthesisConfig, pair_id: int = 0
) -> TrainingPair:
    """Create one pair; bit-deterministic given (cfg.seed, pair_id)."""
    if len(bank) == 0:
        raise ValueError("noise bank is empty")
    if float(np.sum(clean.samples**2)) == 0.0:
        raise ValueError("clean clip is silent; target SNR undefined")

    rng = np.random.default_rng((cfg.seed, pair_id))
    low = float(rng.uniform(*cfg.low_cut_range))
    high = float(rng.uniform(*cfg.high_cut_range))
    target_snr = float(rng.uniform(*cfg.snr_range))

    filtered = bandpass(clean, BandPassSpec(low, high))
    filtered_energy = float(np.sum(filtered.samples**2))
    if filtered_energy == 0.0:
        raise ValueError("band-passed clean clip is silent; target SNR undefined")

    noise = None
    seg_idx = -1
    candidates = list(range(len(bank)))
    while candidates:
        seg_idx = candidates[int(rng.integers(0, len(candidates)))]
        seg = bank.segments[seg_idx]
        ext_seed = int(rng.integers(0, 2**32))
        if float(np.sum(seg.samples.samples**2)) == 0.0:
            log.warning("noise segment %d is silent; resampling another", seg_idx)
            candidates.remove(seg_idx)
            continue
        noise = extend_noise(seg, len(clean), NoiseExtensionConfig(seed=ext_seed))
        break
    if noise is None:
        raise ValueError("noise bank contains only silent segments")

    noise_energy = float(np.sum(noise.samples**2))
    gain = float(np.sqrt(filtered_energy / (noise_energy * 10.0 ** (target_snr / 10.0))))
    noisy = AudioClip(filtered.samples + gain * noise.samples, clean.sample_rate)
    return TrainingPair(
        clean=clean,
        noisy=noisy,
        mix_snr=target_snr,
        noise_id=f"{bank.segments[seg_idx].source_id}:{seg_idx}",
        low_cut=low,
        high_cut=high,
    )


# ---------------------------------------------------------------------------
# Dataset building
# ---------------------------------------------------------------------------

def _cut_windows(path: Path, clip_seconds: float):
    """Non-overlapping windows of one clean file, silence discarded."""
    clip = load_wav(path)
    n = int(round(clip_seconds * clip.sample_rate))
    silence = 10.0 ** (SILENCE_RMS_DBFS / 20.0)
    windows = []
    for k in range(len(clip) // n):
        w = AudioClip(clip.samples[k * n : (k + 1) * n], clip.sample_rate)
        if w.rms() >= silence:
            windows.append((path.stem, k, w))
    return windows


def build_dataset(
    clean_dir,
    bank: NoiseBank,
    cfg: PairSynthesisConfig,
    n_pairs: int,
    out_dir,
    test_fraction: float = 0.2,
) -> list[dict]:
    """Cut clean audio into clips, synthesize pairs, and write the dataset.

    Layout: {out_dir}/clean/*.wav and {out_dir}/noisy/*.wav (float32) plus
    manifest.jsonl with one entry per pair. The train/test split is made
    by source recording so no source appears on both sides.
    """
    out_dir = Path(out_dir)
    clean_paths = sorted(Path(clean_dir).glob("*.wav"))
    windows = []
    for path in clean_paths:
        windows.extend(_cut_windows(path, cfg.clip_seconds))
    if len(windows) < n_pairs:
        raise ValueError(
            f"insufficient clean audio: requested {n_pairs} pairs but only "
            f"{len(windows)} usable {cfg.clip_seconds:g}s windows are available"
        )

    sources = sorted({src for src, _, _ in windows})
    rng = np.random.default_rng((cfg.seed, 0xD5))
    shuffled = list(sources)
    rng.shuffle(shuffled)
    n_test = max(1, int(round(test_fraction * len(sources)))) if len(sources) > 1 else 0
    test_sources = set(shuffled[:n_test])

    (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    (out_dir / "noisy").mkdir(parents=True, exist_ok=True)
    manifest = []
    for pair_id in range(n_pairs):
        src, win_idx, clean = windows[pair_id]
        pair = make_pair(clean, bank, cfg, pair_id=pair_id)
        name = f"pair_{pair_id:06d}.wav"
        save_wav(out_dir / "clean" / name, pair.clean, encoding="float32")
        save_wav(out_dir / "noisy" / name, pair.noisy, encoding="float32")
        manifest.append(
            {
                "pair_id": pair_id,
                # relative to the manifest: relocatable and hash-stable
                "clean_path": f"clean/{name}",
                "noisy_path": f"noisy/{name}",
                "mix_snr": pair.mix_snr,
                "low_cut": pair.low_cut,
                "high_cut": pair.high_cut,
                "noise_id": pair.noise_id,
                "source": src,
                "window": win_idx,
                "split": "test" if src in test_sources else "train",
            }
        )

    with open(out_dir / "manifest.jsonl", "w") as fh:
        for entry in manifest:
            fh.write(json.dumps(entry) + "\n")
    return _resolve_paths(manifest, out_dir)


def _resolve_paths(manifest: list[dict], root) -> list[dict]:
    out = []
    for entry in manifest:
        entry = dict(entry)
        for key in ("clean_path", "noisy_path"):
            p = Path(entry[key])
            if not p.is_absolute():
                entry[key] = str(Path(root) / p)
        out.append(entry)
    return out


def load_manifest(path) -> list[dict]:
    """Manifest entries with audio paths resolved to absolute ones."""
    path = Path(path)
    with open(path) as fh:
        entries = [json.loads(line) for line in fh if line.strip()]
    return _resolve_paths(entries, path.parent)


def bucket_by_snr(manifest: list[dict]) -> dict:
    """Tertiles by mix SNR: lowest-SNR third is the "high"-noise bucket.

    Bucket sizes differ by at most one; ties broken by pair id for
    determinism.
    """
    if not manifest:
        raise ValueError("manifest is empty")
    entries = sorted(manifest, key=lambda e: (e["mix_snr"], e["pair_id"]))
    n = len(entries)
    base, rem = divmod(n, 3)
    sizes = [base + (1 if i < rem else 0) for i in range(3)]
    out = {}
    pos = 0
    for name, size in zip(("high", "medium", "low"), sizes):
        out[name] = entries[pos : pos + size]
        pos += size
    return out


def measure_pair_snr(entry: dict) -> float:
    """Re-measure a stored pair's SNR against its band-passed clean clip."""
    clean = load_wav(entry["clean_path"])
    noisy = load_wav(entry["noisy_path"])
    filtered = bandpass(clean, BandPassSpec(entry["low_cut"], entry["high_cut"]))
    return snr_db(filtered, noisy)
