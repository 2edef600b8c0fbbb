"""Mining noise-only segments from historical recordings.

Old records contain short pauses in the music where only the medium's own
noise is audible. This module finds those quasi-silent spans with an
adaptive energy threshold, extends them to arbitrary length by
overlap-and-add with per-replica phase perturbation and circular shifts,
and scans whole directories into a reusable noise bank.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, load_wav, save_wav
from .dsp import StftConfig, istft, rolling_std, stft


@dataclass(frozen=True)
class NoiseExtractionConfig:
    """Quiet-segment mining parameters.

    quantile sets the adaptive threshold (the q-th quantile of the rolling
    standard deviation, per recording); min_duration drops spans shorter
    than T seconds; std_window is the rolling window in seconds.
    """

    quantile: float = 0.005
    min_duration: float = 0.1
    std_window: float = 0.1

    def __post_init__(self):
        if not 0 < self.quantile < 1:
            raise ValueError(f"quantile must be in (0, 1), got {self.quantile}")
        if self.min_duration <= 0:
            raise ValueError("min_duration must be positive")
        if self.std_window <= 0:
            raise ValueError("std_window must be positive")


@dataclass(frozen=True)
class NoiseSegment:
    """One mined noise-only span with its provenance."""

    samples: AudioClip
    source_id: str
    start: float
    duration: float


@dataclass(frozen=True)
class NoiseExtensionConfig:
    """Overlap-and-add extension parameters for tiling a short segment."""

    overlap_fraction: float = 0.2
    phase_noise_variance: float = 0.1
    shift: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.overlap_fraction < 1:
            raise ValueError("overlap_fraction must be in [0, 1)")
        if self.phase_noise_variance < 0:
            raise ValueError("phase_noise_variance must be >= 0")


# ---------------------------------------------------------------------------
# Quiet-segment search
# ---------------------------------------------------------------------------

def find_quiet_segments(
    clip: AudioClip, cfg: NoiseExtractionConfig = NoiseExtractionConfig(),
    source_id: str = "",
) -> list[NoiseSegment]:
    """Find maximal noise-only spans of at least min_duration seconds.

    A sample belongs to a quiet span when at least one rolling-std window
    covering it falls strictly below the adaptive threshold (the
    per-recording quantile of all rolling-std values). Returned segments
    are non-overlapping and sorted by start time.
    """
    n = len(clip)
    w = max(1, int(round(cfg.std_window * clip.sample_rate)))
    if n < w:
        return []
    stds = rolling_std(clip, cfg.std_window)
    tau = float(np.quantile(stds, cfg.quantile))
    quiet_windows = stds < tau  # strict: plateaus exactly at tau are kept out
    if not quiet_windows.any():
        return []

    # Mark every sample covered by a quiet window (window i covers
    # [i - w + 1, i]), then take maximal contiguous spans of the mask.
    covered = np.zeros(n, dtype=bool)
    ends = np.flatnonzero(quiet_windows)
    starts = np.maximum(0, ends - w + 1)
    deltas = np.zeros(n + 1, dtype=np.int64)
    np.add.at(deltas, starts, 1)
    np.add.at(deltas, ends + 1, -1)
    covered = np.cumsum(deltas[:-1]) > 0

    edges = np.diff(covered.astype(np.int8))
    span_starts = list(np.flatnonzero(edges == 1) + 1)
    span_ends = list(np.flatnonzero(edges == -1) + 1)
    if covered[0]:
        span_starts.insert(0, 0)
    if covered[-1]:
        span_ends.append(n)

    min_len = int(round(cfg.min_duration * clip.sample_rate))
    segments = []
    for a, b in zip(span_starts, span_ends):
        if b - a < min_len:
            continue
        segments.append(
            NoiseSegment(
                samples=AudioClip(clip.samples[a:b].copy(), clip.sample_rate),
                source_id=source_id,
                start=a / clip.sample_rate,
                duration=(b - a) / clip.sample_rate,
            )
        )
    return segments


# ---------------------------------------------------------------------------
# Overlap-and-add extension
# ---------------------------------------------------------------------------

def _pow2_at_most(n: int) -> int:
    p = 1
    while p * 2 <= n:
        p *= 2
    return p


def _perturb_replica(
    samples: np.ndarray, sample_rate: int, cfg: NoiseExtensionConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """One altered copy: STFT phase jitter plus a circular time shift."""
    out = samples
    n = out.shape[0]
    if n >= 8:
        w = min(256, _pow2_at_most(n))
        spec = stft(AudioClip(out, sample_rate), StftConfig(w, w // 4))
        noise = rng.normal(
            0.0, np.sqrt(cfg.phase_noise_variance), size=spec.values.shape
        )
        perturbed = spec.values * np.exp(1j * noise)
        out = istft(
            type(spec)(perturbed, spec.config, spec.sample_rate,
                       spec.source_length, spec.padded)
        ).samples
    if cfg.shift:
        out = np.roll(out, int(rng.integers(0, n)))
    return out


def extend_noise(
    seg: NoiseSegment, target_len: int,
    cfg: NoiseExtensionConfig = NoiseExtensionConfig(),
) -> AudioClip:
    """Tile a noise segment to exactly target_len samples.

    Replicas are laid out with an overlap of overlap_fraction of the
    segment length and joined by equal-gain linear crossfades (ramps sum
    to one). Each replica is independently phase-perturbed and circularly
    shifted first, which breaks the artificial periodicity a plain tiling
    would produce.
    """
    n = len(seg.samples)
    if n == 0:
        raise ValueError("cannot extend an empty noise segment")
    if target_len < 1:
        raise ValueError(f"target_len must be >= 1, got {target_len}")
    rng = np.random.default_rng(cfg.seed)
    sr = seg.samples.sample_rate

    overlap = int(round(cfg.overlap_fraction * n))
    overlap = min(overlap, n - 1)
    stride = n - overlap
    n_replicas = 1
    while (n_replicas - 1) * stride + n < target_len:
        n_replicas += 1

    env = np.ones(n)
    if overlap > 0:
        ramp = np.arange(1, overlap + 1) / (overlap + 1)
        head = env.copy()
        head[-overlap:] = 1.0 - ramp  # fade-out only: nothing precedes replica 0
        tail = env.copy()
        tail[:overlap] = ramp
        mid = tail.copy()
        mid[-overlap:] *= 1.0 - ramp
    else:
        head = mid = tail = env

    total = (n_replicas - 1) * stride + n
    out = np.zeros(total)
    for r in range(n_replicas):
        replica = _perturb_replica(seg.samples.samples, sr, cfg, rng)
        if n_replicas == 1:
            gains = env
        elif r == 0:
            gains = head
        elif r == n_replicas - 1:
            gains = tail
        else:
            gains = mid
        start = r * stride
        out[start : start + n] += gains * replica
    return AudioClip(out[:target_len], sr)


# ---------------------------------------------------------------------------
# Corpus scanning / noise bank
# ---------------------------------------------------------------------------

@dataclass
class NoiseBank:
    """Mined segments plus the manifest describing them."""

    segments: list[NoiseSegment]
    manifest_path: Path | None = None
    skipped: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.segments)


def scan_corpus(
    paths: list,
    cfg: NoiseExtractionConfig = NoiseExtractionConfig(),
    out_dir=None,
    threads: int = 1,
) -> NoiseBank:
    """Run find_quiet_segments over audio files and build a noise bank.

    Unreadable files are recorded as skipped and processing continues.
    When out_dir is given, each segment is written as a float32 WAV next
    to a JSON-lines manifest (one object per segment: id, source,
    start_s, duration_s, rms, path). Results are deterministic and
    ordered by input path regardless of thread count.
    """
    paths = [Path(p) for p in paths]
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    def mine(path: Path):
        try:
            clip = load_wav(path)
        except Exception as exc:  # malformed file: skip, keep scanning
            return ("skipped", path, str(exc))
        return ("ok", path, find_quiet_segments(clip, cfg, source_id=path.stem))

    if threads > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(mine, paths))
    else:
        results = [mine(p) for p in paths]

    bank = NoiseBank(segments=[], skipped=[])
    manifest_lines = []
    seg_index = 0
    for status, path, payload in results:
        if status == "skipped":
            entry = {"source": str(path), "skipped": True, "error": payload}
            bank.skipped.append(entry)
            manifest_lines.append(entry)
            continue
        for seg in payload:
            seg_id = f"noise_{seg_index:06d}"
            seg_index += 1
            wav_name = None
            if out_dir is not None:
                wav_name = f"{seg_id}.wav"
                save_wav(out_dir / wav_name, seg.samples, encoding="float32")
            manifest_lines.append(
                {
                    "id": seg_id,
                    "source": seg.source_id,
                    "start_s": seg.start,
                    "duration_s": seg.duration,
                    "rms": seg.samples.rms(),
                    # relative to the manifest so the bank is relocatable
                    # and runs are hash-reproducible across directories
                    "path": wav_name,
                }
            )
            bank.segments.append(seg)

    if out_dir is not None:
        manifest = Path(out_dir) / "noise_manifest.jsonl"
        with open(manifest, "w") as fh:
            for line in manifest_lines:
                fh.write(json.dumps(line) + "\n")
        bank.manifest_path = manifest
    return bank


def load_noise_bank(manifest_path) -> NoiseBank:
    """Rebuild a NoiseBank from a manifest written by scan_corpus."""
    manifest_path = Path(manifest_path)
    segments = []
    skipped = []
    with open(manifest_path) as fh:
        for line in fh:
            entry = json.loads(line)
            if entry.get("skipped"):
                skipped.append(entry)
                continue
            wav_path = Path(entry["path"])
            if not wav_path.is_absolute():
                wav_path = manifest_path.parent / wav_path
            clip = load_wav(wav_path)
            segments.append(
                NoiseSegment(
                    samples=clip,
                    source_id=entry["source"],
                    start=entry["start_s"],
                    duration=entry["duration_s"],
                )
            )
    return NoiseBank(segments=segments, manifest_path=manifest_path, skipped=skipped)
