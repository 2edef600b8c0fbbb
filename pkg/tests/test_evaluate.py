import itertools
import math

import numpy as np
import pytest

from decrackle.audio import AudioClip, load_wav, save_wav
from decrackle.evaluate import (
    RatingRecord,
    eval_objective,
    format_measurement,
    load_rating_records,
    render_report_table,
    run_repeated_eval,
    score_differences,
    wilcoxon_signed_rank,
)

SR = 2000


@pytest.fixture(scope="module")
def small_manifest(tmp_path_factory):
    """Six trivially constructed pairs with known SNRs, written as WAVs."""
    root = tmp_path_factory.mktemp("eval_ds")
    rng = np.random.default_rng(0)
    manifest = []
    t = np.arange(SR) / SR
    for i, target_snr in enumerate([8.0, 10.0, 12.0, 14.0, 16.0, 18.0]):
        clean = 0.5 * np.sin(2 * np.pi * (200 + 40 * i) * t)
        noise = rng.normal(size=SR)
        noise *= np.sqrt(np.sum(clean**2) / (np.sum(noise**2) * 10 ** (target_snr / 10)))
        cp = root / f"clean_{i}.wav"
        np_ = root / f"noisy_{i}.wav"
        save_wav(cp, AudioClip(clean, SR))
        save_wav(np_, AudioClip(clean + noise, SR))
        manifest.append(
            {"pair_id": i, "clean_path": str(cp), "noisy_path": str(np_),
             "mix_snr": target_snr, "split": "test"}
        )
    return manifest


class TestEvalObjective:
    def test_identity_denoiser_gives_zero(self, small_manifest):
        report = eval_objective(small_manifest, lambda clip: clip, method="identity")
        assert report.overall.mean == 0.0
        for name in ("low", "medium", "high"):
            assert report.buckets[name].mean == 0.0
        assert report.overall.n == 6

    def test_oracle_denoiser_saturates(self, small_manifest):
        def oracle(noisy):
            # map the noisy clip back to its clean counterpart by identity
            for e in small_manifest:
                cand = load_wav(e["noisy_path"])
                if np.array_equal(cand.samples, noisy.samples):
                    return load_wav(e["clean_path"])
            raise AssertionError("unknown clip")

        report = eval_objective(small_manifest, oracle, method="oracle")
        assert report.overall.saturated == 6
        assert report.overall.n == 0
        assert report.overall.mean is None

    def test_bucket_means_match_brute_force(self, small_manifest):
        def mild(noisy):
            return noisy.with_samples(noisy.samples * 0.99)

        report = eval_objective(small_manifest, mild, method="mild")
        from decrackle.dsp import snr_db
        from decrackle.pairs import bucket_by_snr

        deltas = {}
        for e in small_manifest:
            clean = load_wav(e["clean_path"])
            noisy = load_wav(e["noisy_path"])
            den = mild(noisy)
            deltas[e["pair_id"]] = snr_db(clean, den) - snr_db(clean, noisy)
        buckets = bucket_by_snr(small_manifest)
        for name in ("low", "medium", "high"):
            expect = np.mean([deltas[e["pair_id"]] for e in buckets[name]])
            assert abs(report.buckets[name].mean - expect) < 1e-9

    def test_shuffle_invariance(self, small_manifest):
        rng = np.random.default_rng(1)
        shuffled = list(small_manifest)
        rng.shuffle(shuffled)
        a = eval_objective(small_manifest, lambda c: c)
        b = eval_objective(shuffled, lambda c: c)
        assert a.overall.__dict__ == b.overall.__dict__

    def test_failures_recorded_and_excluded(self, small_manifest):
        broken = [dict(e) for e in small_manifest]
        broken[2]["noisy_path"] = "/nonexistent/file.wav"
        report = eval_objective(broken, lambda c: c)
        assert len(report.failed) == 1
        assert report.failed[0]["pair_id"] == 2
        assert report.overall.n == 5

    def test_embedding_hook(self, small_manifest):
        def embedding_fn(a, b):
            return float(np.mean((a.samples - b.samples) ** 2))

        report = eval_objective(small_manifest, lambda c: c, embedding_fn=embedding_fn)
        assert report.embedding_delta["overall"] == pytest.approx(0.0)

    def test_table_rendering(self, small_manifest):
        report = eval_objective(small_manifest, lambda c: c, method="identity")
        table = render_report_table([report])
        assert "identity" in table
        assert "low" in table and "all" in table


class TestRepeatedEval:
    def test_single_run_has_no_se(self):
        out = run_repeated_eval(lambda seed: {"delta": 3.4}, n_runs=1)
        m = out["metrics"]["delta"]
        assert m["se"] is None
        assert m["formatted"] == "3.4"

    def test_constant_metric_zero_se(self):
        out = run_repeated_eval(lambda seed: {"delta": 3.4}, n_runs=5)
        m = out["metrics"]["delta"]
        assert m["formatted"] == "3.4 ± 0.0"

    def test_mean_and_se_match_brute_force(self):
        values = {}

        def run(seed):
            v = float(np.sin(seed * 12.9898) * 4.0)
            values[seed] = v
            return {"delta": v}

        out = run_repeated_eval(run, n_runs=6, base_seed=10)
        vals = [values[10 + r] for r in range(6)]
        m = out["metrics"]["delta"]
        assert m["mean"] == pytest.approx(np.mean(vals))
        assert m["se"] == pytest.approx(np.std(vals, ddof=1) / math.sqrt(6))

    def test_failed_run_excluded(self):
        def run(seed):
            if seed == 2:
                raise RuntimeError("boom")
            return {"delta": 1.0}

        out = run_repeated_eval(run, n_runs=4, base_seed=0)
        assert out["runs_completed"] == 3
        assert out["metrics"]["delta"]["n"] == 3
        assert len(out["failures"]) == 1


class TestScoreDifferences:
    def records(self, table):
        recs = []
        for (rater, item, cond), score in table.items():
            recs.append(RatingRecord("s", rater, item, cond, score))
        return recs

    def test_all_equal_scores(self):
        table = {}
        for rater, item in itertools.product("ab", "xy"):
            table[(rater, item, "ref")] = 50
            table[(rater, item, "m1")] = 50
        out = score_differences(self.records(table), "ref")
        assert out["m1"]["mean"] == 0.0
        assert out["m1"]["ci95"] == 0.0
        assert out["ref"]["mean"] == 0.0

    def test_known_diffs(self):
        table = {}
        for i, d in enumerate([10, 20, 30]):
            table[("r", f"i{i}", "ref")] = 40
            table[("r", f"i{i}", "m1")] = 40 + d
        out = score_differences(self.records(table), "ref")
        assert out["m1"]["mean"] == pytest.approx(20.0)
        assert out["m1"]["ci95"] == pytest.approx(1.96 * 10.0 / math.sqrt(3))

    def test_order_invariance(self):
        rng = np.random.default_rng(2)
        table = {}
        for rater, item in itertools.product("abc", "xyz"):
            table[(rater, item, "ref")] = int(rng.integers(0, 60))
            table[(rater, item, "m1")] = int(rng.integers(20, 101))
        recs = self.records(table)
        out1 = score_differences(recs, "ref")
        out2 = score_differences(list(reversed(recs)), "ref")
        assert out1 == out2

    def test_missing_reference_reported(self):
        table = {("r1", "i1", "ref"): 10, ("r1", "i1", "m1"): 30,
                 ("r2", "i1", "m1"): 40}
        with pytest.raises(ValueError, match="r2/i1"):
            score_differences(self.records(table), "ref")

    def test_score_validation(self):
        with pytest.raises(ValueError):
            RatingRecord("s", "r", "i", "c", 101)
        with pytest.raises(ValueError):
            RatingRecord("s", "r", "i", "c", -1)

    def test_load_rejects_duplicates(self, tmp_path):
        import json

        path = tmp_path / "ratings.jsonl"
        rec = {"session_id": "s", "rater_id": "r", "item_id": "i",
               "condition": "c", "score": 10}
        path.write_text(json.dumps(rec) + "\n" + json.dumps(rec) + "\n")
        with pytest.raises(ValueError, match="duplicate"):
            load_rating_records(path)


def brute_exact_wilcoxon(d):
    """Enumerate all 2^n sign assignments (the definition of the exact test)."""
    d = np.asarray(d, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    ranks = np.empty(n)
    order = np.argsort(np.abs(d), kind="stable")
    sorted_abs = np.abs(d)[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    w_plus = ranks[d > 0].sum()
    w_minus = ranks[d < 0].sum()
    stat = min(w_plus, w_minus)
    count = 0
    for mask in range(2**n):
        s = sum(ranks[k] for k in range(n) if (mask >> k) & 1)
        if s <= stat + 1e-12:
            count += 1
    return stat, min(1.0, 2.0 * count / 2**n)


class TestWilcoxon:
    def test_identical_samples_degenerate(self):
        with pytest.raises(ValueError, match="degenerate"):
            wilcoxon_signed_rank([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])

    def test_six_positive_diffs(self):
        a = np.array([1, 2, 3, 4, 5, 6], dtype=float)
        out = wilcoxon_signed_rank(a, np.zeros(6))
        assert out["statistic"] == 0.0
        assert out["p_value"] == pytest.approx(2 / 64)
        assert out["branch"] == "exact"

    @pytest.mark.parametrize("n", [5, 6, 7, 8, 9, 10])
    def test_exact_matches_enumeration(self, n):
        rng = np.random.default_rng(n)
        for trial in range(5):
            d = rng.integers(-8, 9, size=n).astype(float)
            d[d == 0] = 1.0
            out = wilcoxon_signed_rank(d, np.zeros(n))
            stat, p = brute_exact_wilcoxon(d)
            assert out["statistic"] == pytest.approx(stat)
            assert out["p_value"] == pytest.approx(p)

    def test_exact_and_normal_agree_at_boundary(self):
        rng = np.random.default_rng(11)
        for trial in range(10):
            d = rng.normal(0.3, 1.0, size=25)  # continuous: no ties
            exact = wilcoxon_signed_rank(d, np.zeros(25))
            assert exact["branch"] == "exact"
            # force the approximate branch on the same data
            import decrackle.evaluate as ev

            old = ev.EXACT_LIMIT
            ev.EXACT_LIMIT = 0
            try:
                approx = wilcoxon_signed_rank(d, np.zeros(25))
            finally:
                ev.EXACT_LIMIT = old
            assert approx["branch"] == "normal"
            assert abs(exact["p_value"] - approx["p_value"]) < 0.01

    def test_p_in_unit_interval_and_symmetric(self):
        rng = np.random.default_rng(12)
        a = rng.normal(size=12)
        b = rng.normal(size=12)
        out_ab = wilcoxon_signed_rank(a, b)
        out_ba = wilcoxon_signed_rank(b, a)
        assert 0 < out_ab["p_value"] <= 1
        assert out_ab["p_value"] == pytest.approx(out_ba["p_value"])
        assert out_ab["statistic"] == pytest.approx(out_ba["statistic"])

    def test_normal_branch_large_n(self):
        rng = np.random.default_rng(13)
        a = rng.normal(0.5, 1, size=60)
        out = wilcoxon_signed_rank(a, np.zeros(60))
        assert out["branch"] == "normal"
        assert 0 < out["p_value"] <= 1

    def test_too_few_nonzero(self):
        with pytest.raises(ValueError, match="at least 5"):
            wilcoxon_signed_rank([1, 2, 0, 0, 0], [0, 0, 0, 0, 0])


class TestFormatting:
    def test_format_measurement(self):
        assert format_measurement(3.42, 0.04) == "3.4 ± 0.0"
        assert format_measurement(3.42, None) == "3.4"
        assert format_measurement(None, None) == "n/a"
