import json
import math
from pathlib import Path

import numpy as np
import pytest

from coalshap import (
    SampleGroup,
    ShapleyMatrix,
    SubjectVector,
    adjust_pvalues,
    consistency_battery,
    dagostino_k2,
    dunn,
    kruskal_wallis,
    levene,
    paired_mean_ci,
    skewness,
    t_cdf,
    t_quantile,
)
from coalshap.errors import (
    DegenerateSample,
    DomainError,
    InsufficientGroups,
    SampleTooSmall,
)

CORPUS = json.loads((Path(__file__).parent / "data" / "stats_corpus.json").read_text())
TOL = 1e-8


def as_groups(raw):
    return [SampleGroup(label=f"g{i}", values=np.array(g)) for i, g in enumerate(raw)]


class TestDistributionHelpers:
    def test_t_cdf_symmetry(self):
        for df in (1, 5, 30):
            for t in (0.3, 1.7, 4.2):
                assert t_cdf(t, df) + t_cdf(-t, df) == pytest.approx(1.0, abs=1e-14)

    def test_t_quantile_inverts_cdf(self):
        for df in (2, 7, 40):
            for p in (0.6, 0.9, 0.975, 0.995):
                q = t_quantile(p, df)
                assert t_cdf(q, df) == pytest.approx(p, abs=1e-10)

    def test_t_quantile_known_value(self):
        # t_{0.975, 10} = 2.2281388519649385 (standard table value)
        assert t_quantile(0.975, 10) == pytest.approx(2.2281388519649385, abs=1e-9)

    def test_t_quantile_domain(self):
        with pytest.raises(DomainError):
            t_quantile(1.0, 5)


class TestSkewness:
    def test_symmetric_is_zero(self):
        assert skewness([1, 2, 3, 4, 5]) == pytest.approx(0.0, abs=1e-12)

    def test_too_small(self):
        with pytest.raises(SampleTooSmall):
            skewness([1.0, 2.0])

    def test_degenerate(self):
        with pytest.raises(DegenerateSample):
            skewness([3.0, 3.0, 3.0])


class TestKruskalWallis:
    def test_hand_anchor_exact(self):
        # (1,2,3),(4,5,6),(7,8,9): rank sums 6, 15, 24 give H = 7.2 exactly
        report = kruskal_wallis(as_groups([[1, 2, 3], [4, 5, 6], [7, 8, 9]]))
        assert report.statistic == pytest.approx(7.2, abs=1e-12)
        assert report.df == (2,)

    def test_identical_groups_h_zero(self):
        report = kruskal_wallis(as_groups([[1, 2, 3], [1, 2, 3]]))
        assert report.statistic == pytest.approx(0.0, abs=1e-12)
        assert report.p_value == 1.0

    def test_all_constant(self):
        report = kruskal_wallis(as_groups([[5, 5, 5], [5, 5, 5]]))
        assert report.statistic == 0.0 and report.p_value == 1.0

    def test_monotone_transform_invariance(self, rng):
        raw = [rng.normal(size=8).tolist() for _ in range(3)]
        a = kruskal_wallis(as_groups(raw))
        b = kruskal_wallis(as_groups([[math.exp(v) for v in g] for g in raw]))
        assert a.statistic == pytest.approx(b.statistic, abs=1e-10)

    def test_insufficient(self):
        with pytest.raises(InsufficientGroups):
            kruskal_wallis(as_groups([[1, 2]]))
        with pytest.raises(InsufficientGroups):
            kruskal_wallis(as_groups([[1], [2], [3]]))


class TestLevene:
    def test_bad_centering(self):
        with pytest.raises(ValueError):
            levene(as_groups([[1, 2, 3], [4, 5, 6]]), centering="mode")

    def test_equal_spread_not_rejected(self):
        report = levene(as_groups([[1, 2, 3], [11, 12, 13]]), alpha=0.05)
        assert report.statistic == pytest.approx(0.0, abs=1e-12)
        assert not report.reject


class TestAdjustments:
    def test_none_identity(self):
        p = [0.01, 0.2, 0.9]
        assert adjust_pvalues(p, "none").tolist() == p

    def test_bonferroni(self):
        assert adjust_pvalues([0.01, 0.2, 0.5], "bonferroni").tolist() == [
            0.03,
            0.6000000000000001,
            1.0,
        ]

    def test_holm_at_least_raw_and_monotone(self, rng):
        p = rng.random(12)
        adj = adjust_pvalues(p, "holm")
        assert np.all(adj >= p)
        assert np.all(adj <= np.minimum(1.0, p.size * p))
        order = np.argsort(p)
        assert np.all(np.diff(adj[order]) >= -1e-15)

    def test_unknown(self):
        with pytest.raises(ValueError):
            adjust_pvalues([0.5], "fdr")


class TestDunn:
    def test_antisymmetry(self, rng):
        raw = [rng.normal(size=7).tolist() for _ in range(3)]
        fwd = dunn(as_groups(raw), adjustment="none")
        rev = dunn(as_groups(raw[::-1]), adjustment="none")
        # reversed index r maps to original index 2 - r, and swapping the pair
        # order flips the sign of z
        pairs = [(0, 1), (0, 2), (1, 2)]
        z_fwd = dict(zip(pairs, (r.statistic for r in fwd)))
        for (a, b), report in zip(pairs, rev):
            assert report.statistic == pytest.approx(
                -z_fwd[(2 - b, 2 - a)], abs=1e-12
            )

    def test_pair_count(self):
        reports = dunn(as_groups([[1, 2, 3], [4, 5, 6], [7, 8, 9], [2, 4, 6]]))
        assert len(reports) == 6
        for r in reports:
            assert 0.0 <= r.p_value <= 1.0
            assert r.p_adjusted >= r.p_value - 1e-15


class TestPairedCi:
    def test_zero_difference(self):
        ci = paired_mean_ci([1, 2, 3], [1, 2, 3])
        assert ci.lo == ci.hi == 0.0

    def test_contains_mean_and_shrinks_with_n(self, rng):
        base = rng.normal(0.5, 1.0, size=400)
        small = paired_mean_ci(base[:25], np.zeros(25))
        large = paired_mean_ci(base, np.zeros(400))
        assert small.lo <= np.mean(base[:25]) <= small.hi
        assert (large.hi - large.lo) < (small.hi - small.lo)

    def test_width_scales_inverse_sqrt_n(self):
        # same sample variance at n and 4n: width ratio ~ 2 (up to t critical)
        x1 = np.tile([0.0, 1.0], 20)
        x2 = np.tile([0.0, 1.0], 80)
        w1 = paired_mean_ci(x1, np.zeros(40))
        w2 = paired_mean_ci(x2, np.zeros(160))
        ratio = (w1.hi - w1.lo) / (w2.hi - w2.lo)
        assert ratio == pytest.approx(2.0, rel=0.05)  # t critical adds a few %

    def test_shape_guard(self):
        from coalshap.errors import LengthMismatch

        with pytest.raises(LengthMismatch):
            paired_mean_ci([1, 2, 3], [1, 2])


@pytest.mark.parametrize("idx", range(len(CORPUS)))
class TestCorpusParity:
    """Frozen-oracle parity: every statistic matches scipy-derived values."""

    def test_levene(self, idx):
        rec = CORPUS[idx]
        for centering in ("mean", "median"):
            want_w, want_p = rec[f"levene_{centering}"]
            got = levene(as_groups(rec["groups"]), centering=centering)
            assert got.statistic == pytest.approx(want_w, abs=TOL)
            assert got.p_value == pytest.approx(want_p, abs=TOL)

    def test_kruskal_wallis(self, idx):
        rec = CORPUS[idx]
        want_h, want_p = rec["kruskal_wallis"]
        got = kruskal_wallis(as_groups(rec["groups"]))
        assert got.statistic == pytest.approx(want_h, abs=TOL)
        assert got.p_value == pytest.approx(want_p, abs=TOL)

    @pytest.mark.parametrize("adjustment", ["none", "bonferroni", "holm"])
    def test_dunn(self, idx, adjustment):
        rec = CORPUS[idx]
        got = dunn(as_groups(rec["groups"]), adjustment=adjustment)
        want = rec["dunn"]
        assert len(got) == len(want["pairs"])
        for report, z, p_raw, p_adj in zip(
            got, want["z"], want["p_raw"], want[f"p_{adjustment}"]
        ):
            assert report.statistic == pytest.approx(z, abs=TOL)
            assert report.p_value == pytest.approx(p_raw, abs=TOL)
            assert report.p_adjusted == pytest.approx(p_adj, abs=TOL)

    def test_normality_and_skewness(self, idx):
        rec = CORPUS[idx]
        if "dagostino_k2" not in rec:
            pytest.skip("first group below n=20")
        want_k2, want_p = rec["dagostino_k2"]
        got = dagostino_k2(np.array(rec["groups"][0]))
        assert got.statistic == pytest.approx(want_k2, abs=TOL)
        assert got.p_value == pytest.approx(want_p, abs=TOL)
        assert skewness(rec["groups"][0]) == pytest.approx(rec["skewness"], abs=TOL)

    def test_paired_ci(self, idx):
        rec = CORPUS[idx]
        if "paired_ci_95" not in rec:
            pytest.skip("no equal-length pair")
        want_lo, want_hi = rec["paired_ci_95"]
        got = paired_mean_ci(rec["groups"][0], rec["groups"][1], level=0.95)
        assert got.lo == pytest.approx(want_lo, abs=TOL)
        assert got.hi == pytest.approx(want_hi, abs=TOL)


def make_matrix(metric, model, fold, shift=0.0, n_subjects=6, seed=0):
    rng = np.random.default_rng((seed, hash((metric, model, fold)) & 0xFFFF))
    vecs = [
        SubjectVector(
            values=rng.normal(shift, 0.05, 4),
            subject_id=f"s{j}",
            metric=metric,
            model_id=model,
            fold=fold,
        )
        for j in range(n_subjects)
    ]
    return ShapleyMatrix.from_subject_vectors(("t1n", "t1c", "t2w", "t2f"), vecs)


class TestBattery:
    def test_across_folds_combo_count(self):
        mats = [
            make_matrix(metric, model, f"f{f}")
            for metric in ("dice", "hd95")
            for model in ("m1", "m2", "m3", "m4")
            for f in range(5)
        ]
        ledger = consistency_battery(mats, "across_folds")
        combos = {(e.metric, e.report.groups, e.contrast) for e in ledger.tests}
        keyed = {
            (r["metric"], r["contrast"], r["groups"])
            for r in ledger.test_rows()
            if r["test"] == "kruskal_wallis"
        }
        assert len(keyed) == 2 * 4 * 4  # metric x model x contrast
        assert not ledger.skipped

    def test_across_models_detects_shift(self):
        mats = []
        for model, shift in (("m1", 0.0), ("m2", 0.0), ("m3", 5.0)):
            mats.append(make_matrix("dice", model, "f0", shift=shift, n_subjects=12))
        ledger = consistency_battery(mats, "across_models", alpha=0.01)
        kw = [e.report for e in ledger.tests if e.report.test_name == "kruskal_wallis"]
        assert kw and all(r.reject for r in kw)
        dunn_reports = [e.report for e in ledger.tests if e.report.test_name.startswith("dunn")]
        assert dunn_reports  # post-hoc ran after rejection
        assert ledger.cis  # paired CIs for shared subjects

    def test_across_models_null_mostly_accepts(self):
        mats = [
            make_matrix("dice", model, "f0", n_subjects=10, seed=m)
            for m, model in enumerate(("m1", "m2", "m3"))
        ]
        ledger = consistency_battery(mats, "across_models", alpha=0.01)
        kw = [e.report for e in ledger.tests if e.report.test_name == "kruskal_wallis"]
        assert sum(r.reject for r in kw) == 0

    def test_single_group_skipped(self):
        ledger = consistency_battery([make_matrix("dice", "m1", "f0")], "across_folds")
        assert not ledger.tests
        assert len(ledger.skipped) == 4  # one per contrast

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            consistency_battery([], "sideways")

    def test_rows_serialize_with_repr_floats(self):
        mats = [make_matrix("dice", "m1", f"f{f}") for f in range(3)]
        ledger = consistency_battery(mats, "across_folds")
        for row in ledger.test_rows():
            assert float(row["p_raw"]) == pytest.approx(float(row["p_raw"]))
            assert row["reject"] in (0, 1)
