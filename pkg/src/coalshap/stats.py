"""Nonparametric consistency testing over Shapley matrices.

Primitives: Levene / Brown-Forsythe homogeneity of variance, Kruskal-Wallis
with midrank tie correction, Dunn's pairwise post-hoc z tests, D'Agostino K2
normality, and paired-difference Student-t confidence intervals. The battery
runs these over contrast series grouped across folds or across models and
emits a serializable ledger.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special as sp

from .errors import (
    DegenerateSample,
    DomainError,
    InsufficientGroups,
    LengthMismatch,
    SampleTooSmall,
)

# --- distribution tails ----------------------------------------------------


def ln_gamma(x: float) -> float:
    if x <= 0:
        raise DomainError(f"ln_gamma needs x > 0, got {x}")
    return float(sp.gammaln(x))


def reg_inc_beta(a: float, b: float, x: float) -> float:
    if a <= 0 or b <= 0:
        raise DomainError(f"reg_inc_beta needs a, b > 0, got {a}, {b}")
    if not 0 <= x <= 1:
        raise DomainError(f"reg_inc_beta needs 0 <= x <= 1, got {x}")
    return float(sp.betainc(a, b, x))


def reg_inc_gamma(s: float, x: float) -> float:
    if s <= 0:
        raise DomainError(f"reg_inc_gamma needs s > 0, got {s}")
    if x < 0:
        raise DomainError(f"reg_inc_gamma needs x >= 0, got {x}")
    return float(sp.gammainc(s, x))


def normal_cdf(z: float) -> float:
    return float(sp.ndtr(z))


def chi2_sf(x: float, df: float) -> float:
    if x < 0:
        return 1.0
    return float(sp.gammaincc(df / 2.0, x / 2.0))


def f_sf(x: float, df1: float, df2: float) -> float:
    if x <= 0:
        return 1.0
    return reg_inc_beta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * x))


def t_cdf(t: float, df: float) -> float:
    if df <= 0:
        raise DomainError(f"t_cdf needs df > 0, got {df}")
    x = df / (df + t * t)
    tail = 0.5 * reg_inc_beta(df / 2.0, 0.5, x)
    return 1.0 - tail if t >= 0 else tail


def t_quantile(p: float, df: float, tol: float = 1e-12) -> float:
    """Inverse Student-t CDF by bisection on the incomplete-beta CDF."""
    if not 0 < p < 1:
        raise DomainError(f"t_quantile needs 0 < p < 1, got {p}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_quantile(1.0 - p, df, tol)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, df) < p:
        hi *= 2.0
        if hi > 1e18:
            raise DomainError(f"t_quantile failed to bracket p={p}, df={df}")
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --- sample statistics -----------------------------------------------------


def skewness(x) -> float:
    """Adjusted Fisher-Pearson skewness g1 * sqrt(n(n-1))/(n-2)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 3:
        raise SampleTooSmall(f"skewness needs n >= 3, got {n}")
    m2 = np.mean((x - x.mean()) ** 2)
    if m2 == 0:
        raise DegenerateSample("zero variance")
    m3 = np.mean((x - x.mean()) ** 3)
    g1 = m3 / m2**1.5
    return float(g1 * math.sqrt(n * (n - 1)) / (n - 2))


@dataclass(frozen=True)
class SampleGroup:
    """One test unit: a labeled vector of Shapley values."""

    label: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise ValueError(f"group {self.label!r} needs a finite 1-D vector")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class TestReport:
    test_name: str
    statistic: float
    df: tuple  # () for z tests, (k,) for chi2, (k, m) for F
    p_value: float
    alpha: float
    groups: tuple
    p_adjusted: float | None = None

    @property
    def reject(self) -> bool:
        p = self.p_value if self.p_adjusted is None else self.p_adjusted
        return p < self.alpha


@dataclass(frozen=True)
class CiReport:
    pair: tuple  # (model_a, model_b)
    contrast: str
    fold: str
    metric: str
    level: float
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"lo {self.lo} > hi {self.hi}")


def _check_groups(groups, min_groups=2, min_each=3):
    if len(groups) < min_groups:
        raise InsufficientGroups(f"need >= {min_groups} groups, got {len(groups)}")
    for g in groups:
        if g.values.size < min_each:
            raise InsufficientGroups(
                f"group {g.label!r} has n={g.values.size} < {min_each}"
            )


def dagostino_k2(x, alpha: float = 0.01, label: str = "") -> TestReport:
    """D'Agostino-Pearson omnibus normality test (K2 = z_skew^2 + z_kurt^2)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 20:
        raise SampleTooSmall(f"dagostino_k2 needs n >= 20, got {n}")
    centered = x - x.mean()
    m2 = np.mean(centered**2)
    if m2 == 0:
        raise DegenerateSample("zero variance")
    b1 = np.mean(centered**3) / m2**1.5
    b2 = np.mean(centered**4) / m2**2

    # skewness transform (D'Agostino 1970)
    y = b1 * math.sqrt((n + 1) * (n + 3) / (6.0 * (n - 2)))
    beta2 = 3.0 * (n**2 + 27 * n - 70) * (n + 1) * (n + 3) / (
        (n - 2.0) * (n + 5) * (n + 7) * (n + 9)
    )
    w2 = -1.0 + math.sqrt(2.0 * (beta2 - 1.0))
    delta = 1.0 / math.sqrt(0.5 * math.log(w2))
    a = math.sqrt(2.0 / (w2 - 1.0))
    z1 = delta * math.log(y / a + math.sqrt((y / a) ** 2 + 1.0))

    # kurtosis transform (Anscombe-Glynn 1983)
    e_b2 = 3.0 * (n - 1) / (n + 1)
    var_b2 = 24.0 * n * (n - 2) * (n - 3) / ((n + 1) ** 2 * (n + 3) * (n + 5))
    xk = (b2 - e_b2) / math.sqrt(var_b2)
    sqrt_beta1 = (
        6.0 * (n**2 - 5 * n + 2) / ((n + 7.0) * (n + 9))
        * math.sqrt(6.0 * (n + 3) * (n + 5) / (n * (n - 2.0) * (n - 3)))
    )
    big_a = 6.0 + 8.0 / sqrt_beta1 * (
        2.0 / sqrt_beta1 + math.sqrt(1.0 + 4.0 / sqrt_beta1**2)
    )
    num = 1.0 - 2.0 / big_a
    den = 1.0 + xk * math.sqrt(2.0 / (big_a - 4.0))
    z2 = (
        (1.0 - 2.0 / (9.0 * big_a)) - np.sign(den) * abs(num / den) ** (1.0 / 3.0)
    ) / math.sqrt(2.0 / (9.0 * big_a))

    k2 = z1 * z1 + z2 * z2
    return TestReport(
        test_name="dagostino_k2",
        statistic=float(k2),
        df=(2,),
        p_value=chi2_sf(k2, 2),
        alpha=alpha,
        groups=(label,) if label else (),
    )


def levene(groups, centering: str = "mean", alpha: float = 0.01) -> TestReport:
    """Levene's W (mean centering) or Brown-Forsythe (median centering)."""
    if centering not in ("mean", "median"):
        raise ValueError(f"centering must be mean or median, got {centering!r}")
    _check_groups(groups)
    k = len(groups)
    n_total = sum(g.values.size for g in groups)
    center = np.mean if centering == "mean" else np.median
    z_groups = [np.abs(g.values - center(g.values)) for g in groups]
    z_bar = np.mean(np.concatenate(z_groups))
    between = sum(z.size * (z.mean() - z_bar) ** 2 for z in z_groups)
    within = sum(np.sum((z - z.mean()) ** 2) for z in z_groups)
    if within == 0:
        w, p = (0.0, 1.0) if between == 0 else (math.inf, 0.0)
    else:
        w = (n_total - k) / (k - 1.0) * between / within
        p = f_sf(w, k - 1, n_total - k)
    return TestReport(
        test_name=f"levene_{centering}",
        statistic=float(w),
        df=(k - 1, n_total - k),
        p_value=float(p),
        alpha=alpha,
        groups=tuple(g.label for g in groups),
    )


def _midranks(pooled: np.ndarray) -> tuple:
    """Midranks (1-based) and the tie term sum(t^3 - t)."""
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(pooled.size)
    tie_term = 0.0
    i = 0
    sorted_vals = pooled[order]
    while i < pooled.size:
        j = i
        while j + 1 < pooled.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        t = j - i + 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        tie_term += t**3 - t
        i = j + 1
    return ranks, tie_term


def kruskal_wallis(groups, alpha: float = 0.01) -> TestReport:
    """Kruskal-Wallis H with midrank ties and tie correction."""
    _check_groups(groups, min_each=1)
    sizes = [g.values.size for g in groups]
    n_total = sum(sizes)
    if n_total < 5:
        raise InsufficientGroups(f"kruskal_wallis needs total N >= 5, got {n_total}")
    pooled = np.concatenate([g.values for g in groups])
    ranks, tie_term = _midranks(pooled)
    correction = 1.0 - tie_term / (n_total**3 - n_total)
    if correction == 0:  # every value identical
        h, p = 0.0, 1.0
    else:
        offset = 0
        h = 0.0
        for size in sizes:
            r_sum = ranks[offset : offset + size].sum()
            h += r_sum * r_sum / size
            offset += size
        h = (12.0 / (n_total * (n_total + 1)) * h - 3.0 * (n_total + 1)) / correction
        p = chi2_sf(h, len(groups) - 1)
    return TestReport(
        test_name="kruskal_wallis",
        statistic=float(h),
        df=(len(groups) - 1,),
        p_value=float(p),
        alpha=alpha,
        groups=tuple(g.label for g in groups),
    )


def adjust_pvalues(p_values, method: str):
    """Multiple-comparison adjustment: none, bonferroni, or holm."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    if method == "none" or m == 0:
        return p.copy()
    if method == "bonferroni":
        return np.minimum(1.0, m * p)
    if method == "holm":
        order = np.argsort(p, kind="stable")
        adjusted = np.empty(m)
        running = 0.0
        for rank, idx in enumerate(order):
            running = max(running, (m - rank) * p[idx])
            adjusted[idx] = min(1.0, running)
        return adjusted
    raise ValueError(f"unknown adjustment {method!r}")


def dunn(groups, adjustment: str = "holm", alpha: float = 0.01):
    """Dunn's pairwise z tests on pooled midranks; returns one report per pair."""
    _check_groups(groups, min_each=1)
    sizes = [g.values.size for g in groups]
    n_total = sum(sizes)
    if n_total < 5:
        raise InsufficientGroups(f"dunn needs total N >= 5, got {n_total}")
    pooled = np.concatenate([g.values for g in groups])
    ranks, tie_term = _midranks(pooled)
    rank_means = []
    offset = 0
    for size in sizes:
        rank_means.append(ranks[offset : offset + size].mean())
        offset += size
    variance = n_total * (n_total + 1) / 12.0 - tie_term / (12.0 * (n_total - 1))
    pairs = [
        (i, j) for i in range(len(groups)) for j in range(i + 1, len(groups))
    ]
    z_values = []
    for i, j in pairs:
        if variance <= 0:
            z_values.append(0.0)
            continue
        se = math.sqrt(variance * (1.0 / sizes[i] + 1.0 / sizes[j]))
        z_values.append((rank_means[i] - rank_means[j]) / se)
    p_raw = np.array([2.0 * (1.0 - normal_cdf(abs(z))) for z in z_values])
    p_adj = adjust_pvalues(p_raw, adjustment)
    return [
        TestReport(
            test_name=f"dunn_{adjustment}",
            statistic=float(z),
            df=(),
            p_value=float(praw),
            p_adjusted=float(padj),
            alpha=alpha,
            groups=(groups[i].label, groups[j].label),
        )
        for (i, j), z, praw, padj in zip(pairs, z_values, p_raw, p_adj)
    ]


def paired_mean_ci(x, y, level: float = 0.95, **labels) -> CiReport:
    """Student-t confidence interval for the mean of per-subject differences x - y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"paired vectors must match, got {x.shape} vs {y.shape}")
    n = x.size
    if n < 2:
        raise SampleTooSmall(f"paired_mean_ci needs n >= 2, got {n}")
    if not 0 < level < 1:
        raise DomainError(f"level must be in (0, 1), got {level}")
    d = x - y
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0:
        lo = hi = mean
    else:
        t_crit = t_quantile(0.5 + level / 2.0, n - 1)
        half = t_crit * sd / math.sqrt(n)
        lo, hi = mean - half, mean + half
    return CiReport(
        pair=labels.get("pair", ("x", "y")),
        contrast=labels.get("contrast", ""),
        fold=labels.get("fold", ""),
        metric=labels.get("metric", ""),
        level=level,
        lo=lo,
        hi=hi,
        n=n,
    )


# --- the consistency battery ----------------------------------------------


@dataclass
class LedgerEntry:
    metric: str
    contrast: str
    scope: str
    report: TestReport


@dataclass
class StatsLedger:
    tests: list = field(default_factory=list)  # LedgerEntry
    cis: list = field(default_factory=list)  # CiReport
    skipped: list = field(default_factory=list)  # (metric, contrast, scope, reason)

    def test_rows(self):
        rows = []
        for entry in self.tests:
            r = entry.report
            df1 = r.df[0] if len(r.df) > 0 else ""
            df2 = r.df[1] if len(r.df) > 1 else ""
            rows.append(
                {
                    "metric": entry.metric,
                    "contrast": entry.contrast,
                    "scope": entry.scope,
                    "groups": "|".join(r.groups),
                    "test": r.test_name,
                    "statistic": repr(r.statistic),
                    "df1": df1,
                    "df2": df2,
                    "p_raw": repr(r.p_value),
                    "p_adj": repr(r.p_value if r.p_adjusted is None else r.p_adjusted),
                    "reject": int(r.reject),
                }
            )
        return rows

    def ci_rows(self):
        return [
            {
                "metric": ci.metric,
                "contrast": ci.contrast,
                "fold": ci.fold,
                "model_a": ci.pair[0],
                "model_b": ci.pair[1],
                "level": repr(ci.level),
                "lo": repr(ci.lo),
                "hi": repr(ci.hi),
                "n": ci.n,
            }
            for ci in self.cis
        ]


def consistency_battery(
    matrices,
    mode: str,
    alpha: float = 0.01,
    adjustment: str = "holm",
    ci_level: float = 0.95,
    levene_centering: str = "mean",
) -> StatsLedger:
    """Run the across-fold or across-model test battery over Shapley matrices.

    across_folds: for each (metric, model, contrast), the per-fold contrast
    series form the groups. across_models: fold is fixed instead of model,
    and paired-difference CIs are added per model pair when the differences
    pass (or are too small to run) the normality test.
    """
    if mode not in ("across_folds", "across_models"):
        raise ValueError(f"mode must be across_folds or across_models, got {mode!r}")
    ledger = StatsLedger()
    combos = {}
    for mat in matrices:
        for contrast in mat.contrasts:
            if mode == "across_folds":
                key = (mat.metric, mat.model_id, contrast)
                group_label = f"fold={mat.fold}"
            else:
                key = (mat.metric, mat.fold, contrast)
                group_label = f"model={mat.model_id}"
            combos.setdefault(key, []).append(
                (group_label, mat, contrast)
            )
    for key in sorted(combos):
        metric, fixed, contrast = key
        entries = sorted(combos[key], key=lambda e: e[0])
        scope = mode
        if len(entries) < 2:
            ledger.skipped.append(
                (metric, contrast, scope, f"only {len(entries)} group(s) for {key}")
            )
            continue
        groups = [
            SampleGroup(label=f"{label};{_fixed_tag(mode)}={fixed}", values=mat.contrast_series(contrast))
            for label, mat, contrast in entries
        ]
        try:
            ledger.tests.append(
                LedgerEntry(metric, contrast, scope, levene(groups, levene_centering, alpha))
            )
            kw = kruskal_wallis(groups, alpha)
        except InsufficientGroups as exc:
            ledger.skipped.append((metric, contrast, scope, str(exc)))
            continue
        ledger.tests.append(LedgerEntry(metric, contrast, scope, kw))
        if kw.reject:
            for report in dunn(groups, adjustment, alpha):
                ledger.tests.append(LedgerEntry(metric, contrast, scope, report))
        if mode == "across_models":
            ledger.cis.extend(
                _model_pair_cis(entries, metric, fixed, contrast, ci_level, alpha)
            )
    return ledger


def _fixed_tag(mode):
    return "model" if mode == "across_folds" else "fold"


def _model_pair_cis(entries, metric, fold, contrast, ci_level, alpha):
    cis = []
    for a in range(len(entries)):
        for b in range(a + 1, len(entries)):
            _, mat_a, _ = entries[a]
            _, mat_b, _ = entries[b]
            shared = [s for s in mat_a.subject_ids if s in set(mat_b.subject_ids)]
            if len(shared) < 2:
                continue
            x = np.array([mat_a.subject_vector(s)[mat_a.contrasts.index(contrast)] for s in shared])
            y = np.array([mat_b.subject_vector(s)[mat_b.contrasts.index(contrast)] for s in shared])
            d = x - y
            if d.size >= 20 and d.std(ddof=1) > 0:
                normality = dagostino_k2(d, alpha=alpha)
                if normality.reject:
                    continue
            cis.append(
                paired_mean_ci(
                    x,
                    y,
                    level=ci_level,
                    pair=(mat_a.model_id, mat_b.model_id),
                    contrast=contrast,
                    fold=fold,
                    metric=metric,
                )
            )
    return cis
