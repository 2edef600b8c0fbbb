"""Command-line entry point for the whole pipeline.

Exit codes: 0 success, 1 runtime failure, 2 usage error. A JSON config
file can pre-set any long flag (explicit flags win). Machine-readable
artifacts go to files; stdout carries progress only.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import subprocess
import sys
import tempfile
from pathlib import Path

from . import __version__

log = logging.getLogger("decrackle")


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=None, help="global RNG seed")
    parser.add_argument("--config", type=str, default=None,
                        help="JSON file with default flag values")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: CPU count)")
    parser.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decrackle",
        description="Historical music denoising toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-noise", help="mine noise from quiet segments")
    _add_common(p)
    p.add_argument("--input-dir", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--quantile", type=float, default=None)
    p.add_argument("--min-duration-ms", type=float, default=None)
    p.add_argument("--std-window-ms", type=float, default=None)

    p = sub.add_parser("synth-dataset", help="build aligned clean/noisy pairs")
    _add_common(p)
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--noise-bank", required=True,
                   help="noise manifest written by extract-noise")
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clip-seconds", type=float, default=None)
    p.add_argument("--snr-range", type=float, nargs=2, default=None)
    p.add_argument("--low-cut-range", type=float, nargs=2, default=None)
    p.add_argument("--high-cut-range", type=float, nargs=2, default=None)

    p = sub.add_parser("train", help="train the denoiser")
    _add_common(p)
    p.add_argument("--dataset", required=True, help="dataset manifest.jsonl")
    p.add_argument("--out-run", required=True)
    p.add_argument("--scales", type=int, default=None)
    p.add_argument("--adv-weight", "--lambda", dest="adv_weight", type=float,
                   default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--crop-seconds", type=float, default=None)
    p.add_argument("--bypass-phase", action="store_true")
    p.add_argument("--resume", type=str, default=None)

    p = sub.add_parser("denoise", help="run a trained model on a WAV file")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)

    p = sub.add_parser("baseline", help="run a classical baseline on a WAV file")
    _add_common(p)
    p.add_argument("--method", required=True, choices=["logmmse", "wiener"])
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)

    p = sub.add_parser("evaluate", help="objective evaluation over a dataset")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", required=True,
                   help="identity | logmmse | wiener | checkpoint:<path>")
    p.add_argument("--report", required=True, help="output JSON path")
    p.add_argument("--embedding-cmd", type=str, default=None,
                   help="external program: <cmd> ref.wav other.wav -> distance")

    p = sub.add_parser("make-toy-corpus", help="generate the synthetic desk corpus")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=50)

    return parser


def _apply_config_file(args: argparse.Namespace) -> None:
    """Fill unset (None) attributes from the JSON config, if given."""
    if not getattr(args, "config", None):
        return
    with open(args.config) as fh:
        values = json.load(fh)
    for key, value in values.items():
        attr = key.replace("-", "_")
        if getattr(args, attr, None) is None:
            setattr(args, attr, value)


def _pick(value, default):
    return default if value is None else value


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def cmd_extract_noise(args) -> int:
    from .noisebank import NoiseExtractionConfig, scan_corpus

    input_dir = Path(args.input_dir)
    if not input_dir.is_dir():
        raise UsageError(f"--input-dir {input_dir} is not a directory")
    try:
        cfg = NoiseExtractionConfig(
            quantile=_pick(args.quantile, 0.005),
            min_duration=_pick(args.min_duration_ms, 100.0) / 1000.0,
            std_window=_pick(args.std_window_ms, 100.0) / 1000.0,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    paths = sorted(input_dir.glob("*.wav"))
    if not paths:
        log.warning("no WAV files found in %s", input_dir)
    bank = scan_corpus(paths, cfg, out_dir=args.output_dir,
                       threads=_pick(args.threads, os.cpu_count() or 1))
    print(f"extracted {len(bank)} noise segments from {len(paths)} files "
          f"({len(bank.skipped)} skipped)")
    print(f"manifest: {bank.manifest_path}")
    return 0


def cmd_synth_dataset(args) -> int:
    from .noisebank import load_noise_bank
    from .pairs import PairSynthesisConfig, build_dataset

    try:
        cfg = PairSynthesisConfig(
            low_cut_range=tuple(_pick(args.low_cut_range, (50.0, 150.0))),
            high_cut_range=tuple(_pick(args.high_cut_range, (5000.0, 10000.0))),
            snr_range=tuple(_pick(args.snr_range, (10.0, 30.0))),
            clip_seconds=_pick(args.clip_seconds, 5.0),
            seed=_pick(args.seed, 0),
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    bank = load_noise_bank(args.noise_bank)
    manifest = build_dataset(args.clean_dir, bank, cfg, args.pairs, args.out)
    print(f"wrote {len(manifest)} pairs under {args.out}")
    return 0


def cmd_train(args) -> int:
    from .model import GeneratorConfig
    from .pairs import load_manifest
    from .train import LossWeights, TrainingConfig, TrainingDiverged, train

    try:
        gen_cfg = GeneratorConfig(
            scales=_pick(args.scales, 2),
            bypass_phase=bool(getattr(args, "bypass_phase", False)),
            seed=_pick(args.seed, 0),
        )
        weights = LossWeights(adv_weight=_pick(args.adv_weight, 0.01))
        train_cfg = TrainingConfig(
            steps=_pick(args.steps, 2000),
            batch_size=_pick(args.batch_size, 4),
            crop_seconds=_pick(args.crop_seconds, 1.0),
            seed=_pick(args.seed, 0),
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    manifest = load_manifest(args.dataset)
    try:
        result = train(manifest, gen_cfg, weights, train_cfg,
                       out_dir=args.out_run, resume_from=args.resume)
    except TrainingDiverged as exc:
        log.error("%s; last good checkpoint: %s", exc, exc.last_checkpoint)
        return 1
    vals = [m["val_delta_snr"] for m in result.metrics
            if m["val_delta_snr"] is not None]
    if vals:
        print(f"final validation SNR gain: {vals[-1]:+.2f} dB")
    print(f"final checkpoint: {result.final_checkpoint}")
    return 0


def cmd_denoise(args) -> int:
    from .audio import load_wav, save_wav
    from .model import MultiScaleDenoiser

    model = MultiScaleDenoiser.load(args.checkpoint)
    clip = load_wav(args.input)
    out = model.denoise_clip(clip)
    save_wav(args.output, out)
    print(f"wrote {args.output} ({len(out)} samples at {out.sample_rate} Hz)")
    return 0


def cmd_baseline(args) -> int:
    from .audio import load_wav, save_wav
    from .baselines import logmmse_denoise, wiener_denoise

    clip = load_wav(args.input)
    if args.method == "logmmse":
        out = logmmse_denoise(clip)
    else:
        out = wiener_denoise(clip)
    save_wav(args.output, out)
    print(f"wrote {args.output}")
    return 0


def _make_denoise_fn(method: str):
    if method == "identity":
        return lambda clip: clip
    if method == "logmmse":
        from .baselines import logmmse_denoise

        return logmmse_denoise
    if method == "wiener":
        from .baselines import wiener_denoise

        return wiener_denoise
    if method.startswith("checkpoint:"):
        from .model import MultiScaleDenoiser

        model = MultiScaleDenoiser.load(method.split(":", 1)[1])
        return model.denoise_clip
    raise UsageError(f"unknown method {method!r}")


def _external_embedding(cmd: str):
    from .audio import save_wav

    def embedding_fn(ref, other):
        with tempfile.TemporaryDirectory() as tmp:
            ref_path = Path(tmp) / "ref.wav"
            other_path = Path(tmp) / "other.wav"
            save_wav(ref_path, ref)
            save_wav(other_path, other)
            proc = subprocess.run(
                [cmd, str(ref_path), str(other_path)],
                capture_output=True, text=True, check=True,
            )
        return float(proc.stdout.strip().splitlines()[-1])

    return embedding_fn


def cmd_evaluate(args) -> int:
    from .evaluate import eval_objective, render_report_table
    from .pairs import load_manifest

    manifest = load_manifest(args.manifest)
    denoise_fn = _make_denoise_fn(args.method)
    embedding_fn = _external_embedding(args.embedding_cmd) if args.embedding_cmd else None
    report = eval_objective(manifest, denoise_fn, method=args.method,
                            embedding_fn=embedding_fn)
    Path(args.report).write_text(report.to_json())
    print(render_report_table([report]))
    if report.failed:
        print(f"({len(report.failed)} pairs failed and were excluded)")
    print(f"report written to {args.report}")
    return 0


def cmd_make_toy_corpus(args) -> int:
    from .toydata import build_toy_dataset

    manifest, bank = build_toy_dataset(args.out, n_pairs=args.pairs,
                                       seed=_pick(args.seed, 0))
    print(f"toy dataset ready: {len(manifest)} pairs, {len(bank)} noise segments")
    print(f"manifest: {Path(args.out) / 'dataset' / 'manifest.jsonl'}")
    return 0


class UsageError(Exception):
    pass


_COMMANDS = {
    "extract-noise": cmd_extract_noise,
    "synth-dataset": cmd_synth_dataset,
    "train": cmd_train,
    "denoise": cmd_denoise,
    "baseline": cmd_baseline,
    "evaluate": cmd_evaluate,
    "make-toy-corpus": cmd_make_toy_corpus,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        _apply_config_file(args)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        parser.exit(2, f"{parser.prog}: error: {exc}\n")
    except BrokenPipeError:
        return 1
    except Exception as exc:  # runtime failure: report and exit 1
        if getattr(args, "verbose", False):
            raise
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
