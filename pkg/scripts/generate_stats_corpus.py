#!/usr/bin/env python3
"""Regenerate tests/data/stats_corpus.json.

Expected values come from reference implementations that do not share code
with the package: scipy.stats for Levene / Kruskal-Wallis / normality /
t intervals, and a standalone Dunn computation built on scipy.stats.rankdata
and normal tails. Rerun only when the corpus layout changes; the frozen file
is the contract.
"""

import json
from pathlib import Path

import numpy as np
from scipy import stats as ss

OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "stats_corpus.json"


def oracle_dunn(groups):
    sizes = [len(g) for g in groups]
    pooled = np.concatenate(groups)
    n = pooled.size
    ranks = ss.rankdata(pooled, method="average")
    _, counts = np.unique(pooled, return_counts=True)
    tie_sum = float(np.sum(counts.astype(float) ** 3 - counts))
    variance = n * (n + 1) / 12.0 - tie_sum / (12.0 * (n - 1))
    means = []
    off = 0
    for size in sizes:
        means.append(ranks[off : off + size].mean())
        off += size
    pairs, z_values, p_raw = [], [], []
    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            se = np.sqrt(variance * (1.0 / sizes[i] + 1.0 / sizes[j]))
            z = 0.0 if se == 0 else (means[i] - means[j]) / se
            pairs.append([i, j])
            z_values.append(float(z))
            p_raw.append(float(2.0 * ss.norm.sf(abs(z))))
    return pairs, z_values, p_raw


def oracle_adjust(p_raw, method):
    p = np.asarray(p_raw, dtype=float)
    m = p.size
    if method == "none":
        return p.tolist()
    if method == "bonferroni":
        return np.minimum(1.0, m * p).tolist()
    order = np.argsort(p, kind="stable")
    out = np.empty(m)
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, (m - rank) * p[idx])
        out[idx] = min(1.0, running)
    return out.tolist()


def dataset_entry(groups):
    entry = {"groups": [list(map(float, g)) for g in groups]}
    for center in ("mean", "median"):
        w, p = ss.levene(*groups, center=center)
        entry[f"levene_{center}"] = [float(w), float(p)]
    h, p = ss.kruskal(*groups)
    entry["kruskal_wallis"] = [float(h), float(p)]
    pairs, z, p_raw = oracle_dunn(groups)
    entry["dunn"] = {
        "pairs": pairs,
        "z": z,
        "p_raw": p_raw,
        "p_none": oracle_adjust(p_raw, "none"),
        "p_bonferroni": oracle_adjust(p_raw, "bonferroni"),
        "p_holm": oracle_adjust(p_raw, "holm"),
    }
    first = np.asarray(groups[0], dtype=float)
    if first.size >= 20:
        k2, p = ss.normaltest(first)
        entry["dagostino_k2"] = [float(k2), float(p)]
        entry["skewness"] = float(ss.skew(first, bias=False))
    if len(groups) >= 2 and len(groups[0]) == len(groups[1]):
        d = np.asarray(groups[0], float) - np.asarray(groups[1], float)
        if d.std(ddof=1) > 0:
            lo, hi = ss.t.interval(
                0.95, d.size - 1, loc=d.mean(), scale=ss.sem(d)
            )
            entry["paired_ci_95"] = [float(lo), float(hi)]
    return entry


def main():
    rng = np.random.default_rng(20240321)
    datasets = []
    # hand-derivable anchor: H must be exactly 7.2
    datasets.append(dataset_entry([[1, 2, 3], [4, 5, 6], [7, 8, 9]]))
    # tied data
    datasets.append(dataset_entry([[1, 1, 2], [2, 3, 3]]))
    while len(datasets) < 25:
        k = int(rng.integers(2, 6))
        groups = []
        for _ in range(k):
            n = int(rng.integers(5, 60))
            kind = rng.integers(0, 3)
            if kind == 0:
                g = rng.normal(rng.normal(0, 2), rng.uniform(0.5, 3), n)
            elif kind == 1:
                g = rng.exponential(rng.uniform(0.5, 4), n)
            else:  # heavy ties
                g = rng.integers(0, 6, n).astype(float)
            groups.append(np.round(g, 3).tolist())
        if all(len(set(g)) == 1 for g in groups):
            continue
        datasets.append(dataset_entry(groups))
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(datasets, indent=1) + "\n")
    print(f"wrote {len(datasets)} datasets to {OUT}")


if __name__ == "__main__":
    main()
