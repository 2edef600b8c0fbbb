"""Losses, optimizer and the adversarial training loop.

The generator objective is an L1 reconstruction loss between clean and
output spectrograms at every scale, optionally plus hinge adversarial
terms from per-scale waveform and spectrogram discriminators. With the
adversarial weight at zero the discriminators are never even built.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audio import load_wav
from .dsp import snr_db
from .model import DiscriminatorSet, GeneratorConfig, MultiScaleDenoiser
from .nn import constant, load_checkpoint, save_checkpoint
from .nn import functional as F

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    """adv_weight is the classic "lambda": 0 disables discriminators."""

    adv_weight: float = 0.01

    def __post_init__(self):
        if self.adv_weight < 0:
            raise ValueError("adv_weight must be >= 0")


@dataclass
class ScalePyramid:
    """Per-scale clean targets and generator outputs, finest scale first."""

    clean: list        # y_k as constant Tensors [N, L_k]
    output: list       # yhat_k as graph Tensors [N, L_k]

    @property
    def scales(self) -> int:
        return len(self.clean)


def build_pyramid(y: np.ndarray, composites: list) -> ScalePyramid:
    """y: clean batch [N, L]; composites: multiscale_forward outputs in
    application order (coarsest-applied first). yhat_k is the composite
    after scales K-1..k, down-sampled k times; y_k likewise."""
    K = len(composites)
    clean = []
    output = []
    yk = constant(y, dtype=composites[0].dtype)
    for k in range(K):
        yh = composites[K - 1 - k]
        for _ in range(k):
            yh = F.downsample2_tensor(yh)
        dk = yk
        for _ in range(k):
            dk = F.downsample2_tensor(dk)
        clean.append(dk)
        output.append(yh)
    return ScalePyramid(clean=clean, output=output)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def rec_loss(pyramid: ScalePyramid, cfg: GeneratorConfig) -> Tensor:
    """Sum over scales of ||spec(y_k) - spec(yhat_k)||_1 / bin count,
    averaged over the batch; the L1 of a complex bin is |re| + |im|."""
    stft_cfg = cfg.stft_config()
    total = None
    for yk, yh in zip(pyramid.clean, pyramid.output):
        if yk.shape != yh.shape:
            raise ValueError(f"pyramid shape mismatch: {yk.shape} vs {yh.shape}")
        target = F.stft_tensor(yk, stft_cfg).detach()
        got = F.stft_tensor(yh, stft_cfg)
        n = target.shape[0]
        bins = target.shape[2] * target.shape[3]
        term = (got - target).abs().sum() * (1.0 / (bins * n))
        total = term if total is None else total + term
    return total


def disc_loss(disc_set: DiscriminatorSet, pyramid: ScalePyramid):
    """Hinge losses for the discriminators: real logits pushed above +1,
    fake (detached) logits below -1; averaged over logits, summed over
    scales. Returns (wave loss, stft loss)."""
    wave_total = None
    stft_total = None
    for k in range(pyramid.scales):
        real = pyramid.clean[k]
        fake = pyramid.output[k].detach()
        for domain, disc in (("wave", disc_set.wave[k]), ("stft", disc_set.stft[k])):
            term = F.relu(1.0 - disc(real)).mean() + F.relu(1.0 + disc(fake)).mean()
            if domain == "wave":
                wave_total = term if wave_total is None else wave_total + term
            else:
                stft_total = term if stft_total is None else stft_total + term
    return wave_total, stft_total


def gen_adv_loss(disc_set: DiscriminatorSet, pyramid: ScalePyramid) -> Tensor:
    """Generator hinge: every fake logit pushed above +1, gradients flowing
    through the generator outputs."""
    total = None
    for k in range(pyramid.scales):
        fake = pyramid.output[k]
        term = (
            F.relu(1.0 - disc_set.wave[k](fake)).mean()
            + F.relu(1.0 - disc_set.stft[k](fake)).mean()
        )
        total = term if total is None else total + term
    return total


def total_gen_loss(rec: Tensor, adv: Tensor | None, weights: LossWeights) -> Tensor:
    if weights.adv_weight == 0 or adv is None:
        return rec
    return rec + weights.adv_weight * adv


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Bias-corrected Adam over a fixed list of (name, Tensor) parameters."""

    def __init__(self, named_params, lr=1e-4, beta1=0.5, beta2=0.9, eps=1e-8):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name, p in self.named_params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            p.data = p.data - (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self, prefix: str) -> dict:
        out = {f"{prefix}step": np.array([self.step_count], dtype=np.int64)}
        for name, _ in self.named_params:
            out[f"{prefix}m.{name}"] = self.m[name]
            out[f"{prefix}v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, state: dict, prefix: str):
        self.step_count = int(state[f"{prefix}step"][0])
        for name, _ in self.named_params:
            self.m[name] = state[f"{prefix}m.{name}"].astype(self.m[name].dtype)
            self.v[name] = state[f"{prefix}v.{name}"].astype(self.v[name].dtype)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 2000
    batch_size: int = 4
    crop_seconds: float = 1.0
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    val_every: int = 200
    val_pairs: int = 8
    checkpoint_every: int = 0  # 0: only at validation points and the end
    seed: int = 0


class TrainingDiverged(RuntimeError):
    def __init__(self, step, last_checkpoint):
        super().__init__(f"loss diverged at step {step}")
        self.step = step
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainResult:
    metrics: list
    final_checkpoint: Path
    checkpoints: list
    diverged: bool = False


def _load_split(manifest: list[dict]):
    train = [e for e in manifest if e.get("split", "train") == "train"]
    val = [e for e in manifest if e.get("split") == "test"]
    if not val:
        n_val = max(1, len(train) // 10)
        val = train[-n_val:]
        train = train[:-n_val] or val
    return train, val


class _PairCache:
    def __init__(self, entries):
        self.entries = entries
        self._cache = {}

    def __len__(self):
        return len(self.entries)

    def get(self, i):
        if i not in self._cache:
            e = self.entries[i]
            self._cache[i] = (
                load_wav(e["clean_path"]).samples,
                load_wav(e["noisy_path"]).samples,
            )
        return self._cache[i]


def _make_batch(cache, rng, batch_size, crop):
    xs = np.empty((batch_size, crop), dtype=np.float32)
    ys = np.empty((batch_size, crop), dtype=np.float32)
    for b in range(batch_size):
        clean, noisy = cache.get(int(rng.integers(0, len(cache))))
        if len(clean) < crop:
            raise ValueError(
                f"clip length {len(clean)} shorter than crop {crop} samples"
            )
        off = int(rng.integers(0, len(clean) - crop + 1))
        ys[b] = clean[off : off + crop]
        xs[b] = noisy[off : off + crop]
    return xs, ys


def validation_delta_snr(model: MultiScaleDenoiser, entries, limit=8) -> float:
    deltas = []
    for e in entries[:limit]:
        clean = load_wav(e["clean_path"])
        noisy = load_wav(e["noisy_path"])
        denoised = model.denoise_clip(noisy)
        base = snr_db(clean, noisy)
        got = snr_db(clean, denoised)
        if np.isfinite(base) and np.isfinite(got):
            deltas.append(got - base)
    return float(np.mean(deltas)) if deltas else float("nan")


def train(
    manifest: list[dict],
    gen_config: GeneratorConfig,
    weights: LossWeights = LossWeights(),
    train_config: TrainingConfig = TrainingConfig(),
    out_dir="runs/default",
    resume_from=None,
) -> TrainResult:
    """Alternating discriminator/generator updates, one of each per step.

    Deterministic for a fixed seed in serial mode: batch composition is
    seeded by (seed, step) and parameters by the generator config seed.
    Emits {out_dir}/{step}.ckpt checkpoints, a metrics.jsonl log and the
    configuration actually used.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_entries, val_entries = _load_split(manifest)
    if not train_entries:
        raise ValueError("manifest has no training pairs")
    cache = _PairCache(train_entries)
    sample_rate = load_wav(train_entries[0]["clean_path"]).sample_rate
    crop = int(round(train_config.crop_seconds * sample_rate))

    model = MultiScaleDenoiser(gen_config)
    adversarial = weights.adv_weight > 0
    discs = DiscriminatorSet(gen_config) if adversarial else None

    opt_g = Adam(model.named_parameters(), lr=train_config.lr,
                 beta1=train_config.beta1, beta2=train_config.beta2,
                 eps=train_config.eps)
    opt_d = None
    if adversarial:
        opt_d = Adam(discs.named_parameters(), lr=train_config.lr,
                     beta1=train_config.beta1, beta2=train_config.beta2,
                     eps=train_config.eps)

    start_step = 0
    if resume_from is not None:
        hp, arrays = load_checkpoint(resume_from)
        start_step = int(hp.get("step", 0))
        model.load_state_arrays(
            {k[len("model."):]: v for k, v in arrays.items() if k.startswith("model.")}
        )
        opt_g.load_state_arrays(arrays, "opt_g.")
        if adversarial and any(k.startswith("disc.") for k in arrays):
            discs.load_state_arrays(
                {k[len("disc."):]: v for k, v in arrays.items() if k.startswith("disc.")}
            )
            opt_d.load_state_arrays(arrays, "opt_d.")

    with open(out_dir / "config.json", "w") as fh:
        json.dump(
            {
                "generator_config": asdict(gen_config),
                "training_config": asdict(train_config),
                "loss_weights": asdict(weights),
            },
            fh,
            indent=2,
        )

    def save(step) -> Path:
        arrays = {f"model.{k}": v for k, v in model.state_arrays().items()}
        arrays.update(opt_g.state_arrays("opt_g."))
        if adversarial:
            arrays.update({f"disc.{k}": v for k, v in discs.state_arrays().items()})
            arrays.update(opt_d.state_arrays("opt_d."))
        path = out_dir / f"{step}.ckpt"
        save_checkpoint(
            path, arrays,
            {"generator_config": asdict(gen_config), "step": step},
        )
        return path

    metrics = []
    metrics_path = out_dir / "metrics.jsonl"
    metrics_fh = open(metrics_path, "a")
    checkpoints = [save(start_step)]

    def finish():
        metrics_fh.close()
        return TrainResult(
            metrics=metrics,
            final_checkpoint=checkpoints[-1],
            checkpoints=checkpoints,
        )

    for step in range(start_step, train_config.steps):
        rng = np.random.default_rng((train_config.seed, step))
        xs, ys = _make_batch(cache, rng, train_config.batch_size, crop)
        x = constant(xs)

        model.zero_grad()
        _, composites = model.forward(x)
        pyramid = build_pyramid(ys, composites)

        row = {"step": step + 1, "L_rec": None, "L_adv_G": None,
               "L_D_wave": None, "L_D_stft": None, "val_delta_snr": None}

        if adversarial:
            discs.zero_grad()
            d_wave, d_stft = disc_loss(discs, pyramid)
            (d_wave + d_stft).backward()
            opt_d.step()
            row["L_D_wave"] = float(d_wave.data)
            row["L_D_stft"] = float(d_stft.data)

            discs.zero_grad()  # generator step must not inherit D gradients
            adv = gen_adv_loss(discs, pyramid)
            row["L_adv_G"] = float(adv.data)
        else:
            adv = None

        rec = rec_loss(pyramid, gen_config)
        row["L_rec"] = float(rec.data)
        loss = total_gen_loss(rec, adv, weights)
        if not np.isfinite(loss.data):
            log.error("training diverged at step %d", step + 1)
            metrics_fh.close()
            raise TrainingDiverged(step + 1, checkpoints[-1])
        model.zero_grad()
        loss.backward()
        opt_g.step()

        is_val = train_config.val_every and (step + 1) % train_config.val_every == 0
        if is_val or step + 1 == train_config.steps:
            row["val_delta_snr"] = validation_delta_snr(
                model, val_entries, train_config.val_pairs
            )
            checkpoints.append(save(step + 1))
        elif train_config.checkpoint_every and (step + 1) % train_config.checkpoint_every == 0:
            checkpoints.append(save(step + 1))

        metrics.append(row)
        metrics_fh.write(json.dumps(row) + "\n")
        metrics_fh.flush()

    if train_config.steps > start_step and checkpoints[-1].name != f"{train_config.steps}.ckpt":
        checkpoints.append(save(train_config.steps))
    return finish()
