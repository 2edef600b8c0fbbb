"""Objective and subjective evaluation.

Objective: SNR gain of a denoiser over the noisy input, per noise bucket
and overall, with repeated-training aggregation (mean +/- standard
error). Subjective: MUSHRA-style 0-100 score differences against a
reference condition with Gaussian 95% confidence intervals, and a
two-sided Wilcoxon signed-rank test (exact for small samples).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .audio import load_wav
from .dsp import snr_db
from .pairs import bucket_by_snr

BUCKET_NAMES = ("low", "medium", "high")


# ---------------------------------------------------------------------------
# Objective evaluation
# ---------------------------------------------------------------------------

@dataclass
class BucketStats:
    mean: float | None
    n: int
    saturated: int = 0


@dataclass
class EvalReport:
    method: str
    overall: BucketStats
    buckets: dict
    failed: list = field(default_factory=list)
    embedding_delta: dict | None = None

    def to_json(self) -> str:
        def enc(o):
            if isinstance(o, (BucketStats,)):
                return o.__dict__
            raise TypeError(o)

        return json.dumps(self.__dict__, default=enc, indent=2)


def _delta_stats(deltas: list) -> BucketStats:
    finite = [d for d in deltas if math.isfinite(d)]
    saturated = sum(1 for d in deltas if math.isinf(d))
    mean = float(np.mean(finite)) if finite else None
    return BucketStats(mean=mean, n=len(finite), saturated=saturated)


def eval_objective(manifest: list[dict], denoise_fn, method: str = "model",
                   embedding_fn=None) -> EvalReport:
    """SNR gain of denoise_fn per pair: snr(clean, denoised) - snr(clean,
    noisy), aggregated in SNR buckets and overall. Pairs that fail to load
    or denoise are reported and excluded; infinite gains (perfect
    reconstruction) are counted separately."""
    entries = [e for e in manifest if e.get("split", "test") == "test"] or manifest
    buckets = bucket_by_snr(entries)
    deltas = {}
    emb_deltas = {}
    failed = []
    for entry in sorted(entries, key=lambda e: e["pair_id"]):
        try:
            clean = load_wav(entry["clean_path"])
            noisy = load_wav(entry["noisy_path"])
            denoised = denoise_fn(noisy)
            base = snr_db(clean, noisy)
            got = snr_db(clean, denoised)
        except Exception as exc:
            failed.append({"pair_id": entry["pair_id"], "error": str(exc)})
            continue
        deltas[entry["pair_id"]] = got - base
        if embedding_fn is not None:
            emb_deltas[entry["pair_id"]] = (
                embedding_fn(clean, noisy) - embedding_fn(clean, denoised)
            )

    def collect(ids):
        return [deltas[i] for i in ids if i in deltas]

    bucket_stats = {
        name: _delta_stats(collect([e["pair_id"] for e in buckets[name]]))
        for name in BUCKET_NAMES
    }
    report = EvalReport(
        method=method,
        overall=_delta_stats(list(deltas.values())),
        buckets=bucket_stats,
        failed=failed,
    )
    if embedding_fn is not None:
        report.embedding_delta = {
            "overall": float(np.mean(list(emb_deltas.values()))) if emb_deltas else None,
            **{
                name: (
                    float(np.mean([emb_deltas[e["pair_id"]] for e in buckets[name]
                                   if e["pair_id"] in emb_deltas]))
                    if any(e["pair_id"] in emb_deltas for e in buckets[name])
                    else None
                )
                for name in BUCKET_NAMES
            },
        }
    return report


# ---------------------------------------------------------------------------
# Repeated-training aggregation
# ---------------------------------------------------------------------------

def format_measurement(mean, se, precision: int = 1) -> str:
    if mean is None:
        return "n/a"
    if se is None:
        return f"{mean:.{precision}f}"
    return f"{mean:.{precision}f} ± {se:.{precision}f}"


def run_repeated_eval(run_fn, n_runs: int = 10, base_seed: int = 0) -> dict:
    """run_fn(seed) returns {metric: value}; aggregates mean and standard
    error (std/sqrt(n), sample std) across runs. Failed runs are recorded
    and excluded, with n adjusted."""
    per_metric = {}
    failures = []
    completed = 0
    for r in range(n_runs):
        try:
            result = run_fn(base_seed + r)
        except Exception as exc:
            failures.append({"run": r, "error": str(exc)})
            continue
        completed += 1
        for k, v in result.items():
            per_metric.setdefault(k, []).append(float(v))
    summary = {}
    for k, values in per_metric.items():
        mean = float(np.mean(values))
        se = (
            float(np.std(values, ddof=1) / math.sqrt(len(values)))
            if len(values) > 1
            else None
        )
        summary[k] = {
            "mean": mean,
            "se": se,
            "n": len(values),
            "formatted": format_measurement(mean, se),
        }
    return {"metrics": summary, "runs_completed": completed, "failures": failures}


def render_report_table(reports: list[EvalReport]) -> str:
    """Aligned-column text table: one row per method, SNR-gain columns for
    the three noise buckets plus the full set."""
    header = ["method", "low", "medium", "high", "all"]
    rows = [header]
    for rep in reports:
        row = [rep.method]
        for name in BUCKET_NAMES:
            stats = rep.buckets[name]
            row.append("n/a" if stats.mean is None else f"{stats.mean:.1f}")
        row.append("n/a" if rep.overall.mean is None else f"{rep.overall.mean:.1f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Subjective scores
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RatingRecord:
    session_id: str
    rater_id: str
    item_id: str
    condition: str
    score: int
    timestamp: float = 0.0

    def __post_init__(self):
        if not (isinstance(self.score, (int, np.integer)) and 0 <= self.score <= 100):
            raise ValueError(f"score must be an integer in [0, 100], got {self.score!r}")


def load_rating_records(path) -> list[RatingRecord]:
    records = []
    seen = set()
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            rec = RatingRecord(
                session_id=raw["session_id"],
                rater_id=raw["rater_id"],
                item_id=raw["item_id"],
                condition=raw["condition"],
                score=int(raw["score"]),
                timestamp=raw.get("timestamp", 0.0),
            )
            key = (rec.rater_id, rec.item_id, rec.condition)
            if key in seen:
                raise ValueError(f"duplicate rating for {key}")
            seen.add(key)
            records.append(rec)
    return records


def score_differences(records: list[RatingRecord], reference_condition: str) -> dict:
    """Per-condition mean score difference against the reference plus a 95%
    Gaussian confidence interval (1.96 * sample std / sqrt(n)).

    Differences are paired per (rater, item); every pair must include a
    reference score."""
    by_pair = {}
    for rec in records:
        by_pair.setdefault((rec.rater_id, rec.item_id), {})[rec.condition] = rec.score
    missing = sorted(
        f"{rater}/{item}" for (rater, item), conds in by_pair.items()
        if reference_condition not in conds
    )
    if missing:
        raise ValueError(
            f"missing reference condition {reference_condition!r} for: "
            + ", ".join(missing)
        )
    conditions = sorted({rec.condition for rec in records})
    out = {}
    for cond in conditions:
        diffs = [
            conds[cond] - conds[reference_condition]
            for conds in by_pair.values()
            if cond in conds
        ]
        if not diffs:
            continue
        arr = np.asarray(diffs, dtype=np.float64)
        mean = float(arr.mean())
        if len(arr) > 1:
            half = 1.96 * float(arr.std(ddof=1)) / math.sqrt(len(arr))
        else:
            half = 0.0
        out[cond] = {"mean": mean, "ci95": half, "n": len(arr)}
    return out


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test
# ---------------------------------------------------------------------------

def _rankdata_average(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_cdf_leq(doubled_ranks: np.ndarray, target: int) -> float:
    """P(W <= target/2) where W sums a uniformly random subset of the
    (possibly tied, half-integer) ranks; doubled to keep integer sums."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for d in doubled_ranks.astype(np.int64):
        counts[d:] += counts[: total + 1 - d]
    return float(counts[: target + 1].sum() / 2.0 ** len(doubled_ranks))


EXACT_LIMIT = 25


def wilcoxon_signed_rank(a, b) -> dict:
    """Two-sided paired test. Zero differences are dropped (Wilcoxon
    convention), ties get average ranks. Exact enumeration over sign
    assignments for n <= 25; normal approximation with tie and continuity
    corrections beyond."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in length: {a.shape} vs {b.shape}")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise ValueError("degenerate sample: all differences are zero")
    if n < 5:
        raise ValueError(f"need at least 5 nonzero differences, got {n}")
    ranks = _rankdata_average(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    statistic = min(w_plus, w_minus)

    if n <= EXACT_LIMIT:
        doubled = np.round(2 * ranks).astype(np.int64)
        p = 2.0 * _exact_cdf_leq(doubled, int(round(2 * statistic)))
        branch = "exact"
    else:
        mu = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        tie_term = float(((tie_counts**3 - tie_counts) / 48.0).sum())
        sigma = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0 - tie_term)
        z = (statistic - mu + 0.5) / sigma
        p = 2.0 * 0.5 * math.erfc(-z / math.sqrt(2.0))
        branch = "normal"
    return {
        "statistic": statistic,
        "p_value": min(1.0, p),
        "n": n,
        "branch": branch,
    }
