"""Command-line orchestrator: validate, shapley, stats, cluster, report.

Stage outputs live under one run directory:

    <out>/run.json                     run record (timestamps live only here)
    <out>/shapley/phi_<M>_<model>_<fold>.csv   channels x subjects matrices
    <out>/shapley/shapley_long.csv     canonical long-format table
    <out>/stats/stats_ledger.csv, stats_ci.csv
    <out>/cluster/cluster_<M>_<model>.csv, silhouettes.csv
    <out>/report/report.json, report.md

Every CSV starts with a comment line carrying the manifest hash and tool
version, so byte-identical outputs certify a reproduced run.

Exit codes: 0 ok, 2 validation error, 3 partial failure above threshold,
4 internal error.
"""

from __future__ import annotations

import csv
import datetime
import hashlib
import io
import json
import os
import sys
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from .adapters import CountingAdapter, build_adapter
from .cluster import ShapleyKMeans, pca2, silhouette
from .errors import (
    CoalshapError,
    MissingStage,
    SingleCluster,
    SubjectSkipped,
    TooFewPoints,
)
from .manifest import Manifest, ManifestError, load_manifest, validate_study
from .metrics import MetricConfig, label_averaged_metric, metric_by_name
from .shapley import (
    AblationStrategy,
    Coalition,
    CoalitionCache,
    ShapleyMatrix,
    SubjectVector,
    ablate,
    exact_shapley,
    mc_shapley,
)
from .stats import consistency_battery
from .volume import read_mcv, read_seg

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PARTIAL = 3
EXIT_INTERNAL = 4

LONG_FIELDS = ("metric", "model", "fold", "subject_id", "contrast", "phi", "score_full")


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, comment: str, fieldnames, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(comment + "\n")
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(buf.getvalue())
    tmp.replace(path)


def _read_csv(path: Path):
    if not path.exists():
        raise MissingStage(str(path))
    with open(path, newline="") as fh:
        comment = fh.readline().strip()
        reader = csv.DictReader(fh)
        rows = list(reader)
    return comment, rows


def _signature_from(comment: str) -> str:
    return comment  # the comment line itself is the provenance signature


class RunRecord:
    def __init__(self, out_dir: Path):
        self.path = Path(out_dir) / "run.json"
        if self.path.exists():
            self.data = json.loads(self.path.read_text())
        else:
            self.data = {
                "run_id": uuid.uuid4().hex,
                "tool_version": __version__,
                "created": _now(),
                "stages": {},
            }

    def update_stage(self, name, **info):
        info["finished"] = _now()
        self.data["stages"][name] = info
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.data, indent=2) + "\n")
        tmp.replace(self.path)


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


# --- shapley stage ---------------------------------------------------------


def _coalition_predictions(adapter, cache, subject_id, volume, strategy):
    """All 2^n predictions for one subject, served from the cache when present."""
    n = volume.channels
    preds = {}
    for bits in range(1 << n):
        pred = cache.get(subject_id, bits) if cache else None
        if pred is None:
            coalition = Coalition(bits, n)
            pred = adapter.predict(
                subject_id, ablate(volume, coalition, strategy), coalition
            )
            if cache:
                cache.put(subject_id, bits, pred)
        preds[bits] = pred
    return preds


def _subject_vectors(manifest, adapter, cache, fold_id, subject, strategy, cfg):
    """Returns {metric_name: SubjectVector} for one subject under one model."""
    subject_id, input_rel, gt_rel = subject
    volume = read_mcv(manifest.resolve(input_rel))
    gt = read_seg(manifest.resolve(gt_rel))
    n = volume.channels
    mode = manifest.shapley["mode"]
    out = {}
    if mode == "exact":
        preds = _coalition_predictions(adapter, cache, subject_id, volume, strategy)
        for name in manifest.metrics:
            metric = metric_by_name(name)
            try:
                scores = {
                    bits: label_averaged_metric(metric, pred, gt, cfg)
                    for bits, pred in preds.items()
                }
            except SubjectSkipped:
                continue
            phi = exact_shapley(lambda c: scores[c.bits], n)
            out[name] = SubjectVector(
                values=phi,
                subject_id=subject_id,
                metric=name,
                model_id=adapter.model_id,
                fold=fold_id,
                score_full=scores[(1 << n) - 1],
            )
    else:
        for name in manifest.metrics:
            metric = metric_by_name(name)

            def value_fn(coalition):
                pred = cache.get(subject_id, coalition.bits) if cache else None
                if pred is None:
                    pred = adapter.predict(
                        subject_id, ablate(volume, coalition, strategy), coalition
                    )
                    if cache:
                        cache.put(subject_id, coalition.bits, pred)
                return label_averaged_metric(metric, pred, gt, cfg)

            try:
                phi, _ = mc_shapley(
                    value_fn,
                    n,
                    manifest.shapley["permutations"],
                    manifest.shapley["seed"],
                )
                full = value_fn(Coalition.full(n))
            except SubjectSkipped:
                continue
            out[name] = SubjectVector(
                values=phi,
                subject_id=subject_id,
                metric=name,
                model_id=adapter.model_id,
                fold=fold_id,
                score_full=full,
            )
    return out


def run_shapley(
    manifest: Manifest,
    out_dir,
    jobs: int = 1,
    strategy: AblationStrategy | None = None,
    fail_threshold: float = 0.0,
    cache_dir=None,
):
    """Compute all subject vectors; returns (matrices, failures, total_subjects)."""
    out_dir = Path(out_dir)
    if strategy is None:
        strategy = AblationStrategy.from_name(manifest.shapley["strategy"])
    cache_root = Path(
        cache_dir or os.environ.get("COALSHAP_CACHE_DIR") or out_dir / "cache"
    )
    cfg = MetricConfig()
    vectors = []  # (metric, model, fold, SubjectVector)
    failures = []
    total = 0
    for spec in manifest.models:
        resolved = spec
        if spec.kind == "store" and spec.store_dir:
            resolved = type(spec)(
                kind=spec.kind,
                model_id=spec.model_id,
                store_dir=str(manifest.resolve(spec.store_dir)),
                max_parallel=spec.max_parallel,
                timeout_s=spec.timeout_s,
            )
        adapter = CountingAdapter(build_adapter(resolved, manifest.label_set))
        cache = CoalitionCache(cache_root / spec.model_id / strategy.digest())
        workers = max(1, min(jobs, adapter.inner.max_parallel))
        try:
            for fold_id, subjects in manifest.folds:
                total += len(subjects)

                def work(subject):
                    return _subject_vectors(
                        manifest, adapter, cache, fold_id, subject, strategy, cfg
                    )

                if workers == 1:
                    results = [_safe(work, s) for s in subjects]
                else:
                    with ThreadPoolExecutor(max_workers=workers) as pool:
                        results = list(pool.map(lambda s: _safe(work, s), subjects))
                for subject, result in zip(subjects, results):
                    if isinstance(result, Exception):
                        failures.append((spec.model_id, fold_id, subject[0], result))
                    else:
                        for name, vec in result.items():
                            vectors.append(vec)
        finally:
            adapter.close()
    if total and len(failures) / total > fail_threshold:
        detail = "; ".join(f"{m}/{f}/{s}: {e}" for m, f, s, e in failures[:5])
        raise PartialFailure(len(failures), total, detail)
    matrices = _to_matrices(manifest.channels, vectors)
    _write_shapley_outputs(manifest, out_dir, matrices, vectors)
    return matrices, failures, total


class PartialFailure(CoalshapError):
    def __init__(self, failed, total, detail):
        super().__init__(f"{failed}/{total} subjects failed: {detail}")
        self.failed = failed
        self.total = total


def _safe(fn, arg):
    try:
        return fn(arg)
    except Exception as exc:  # noqa: BLE001 - counted against the threshold
        return exc


def _to_matrices(channels, vectors):
    by_key = {}
    for vec in vectors:
        by_key.setdefault((vec.metric, vec.model_id, vec.fold), []).append(vec)
    return [
        ShapleyMatrix.from_subject_vectors(channels, group)
        for key, group in sorted(by_key.items())
    ]


def _write_shapley_outputs(manifest, out_dir, matrices, vectors):
    from .manifest import tool_signature

    comment = tool_signature(manifest)
    shap_dir = Path(out_dir) / "shapley"
    for mat in matrices:
        rows = []
        for i, contrast in enumerate(mat.contrasts):
            row = {"contrast": contrast}
            for j, sid in enumerate(mat.subject_ids):
                row[sid] = _fmt(mat.values[i, j])
            rows.append(row)
        _write_csv(
            shap_dir / f"phi_{mat.metric}_{mat.model_id}_{mat.fold}.csv",
            comment,
            ("contrast",) + mat.subject_ids,
            rows,
        )
    long_rows = []
    for vec in sorted(vectors, key=lambda v: (v.metric, v.model_id, v.fold, v.subject_id)):
        for contrast, phi in zip(manifest.channels, vec.values):
            long_rows.append(
                {
                    "metric": vec.metric,
                    "model": vec.model_id,
                    "fold": vec.fold,
                    "subject_id": vec.subject_id,
                    "contrast": contrast,
                    "phi": _fmt(phi),
                    "score_full": _fmt(vec.score_full),
                }
            )
    _write_csv(shap_dir / "shapley_long.csv", comment, LONG_FIELDS, long_rows)


def load_matrices(out_dir):
    """Rebuild ShapleyMatrix objects from shapley_long.csv; returns (comment, matrices)."""
    comment, rows = _read_csv(Path(out_dir) / "shapley" / "shapley_long.csv")
    by_key = {}
    contrasts_order = []
    for row in rows:
        if row["contrast"] not in contrasts_order:
            contrasts_order.append(row["contrast"])
        key = (row["metric"], row["model"], row["fold"])
        by_key.setdefault(key, []).append(row)
    matrices = []
    for key in sorted(by_key):
        metric, model, fold = key
        per_subject = {}
        scores = {}
        for row in by_key[key]:
            per_subject.setdefault(row["subject_id"], {})[row["contrast"]] = float(
                row["phi"]
            )
            scores[row["subject_id"]] = float(row["score_full"])
        subject_ids = tuple(per_subject)
        values = np.array(
            [
                [per_subject[sid][c] for sid in subject_ids]
                for c in contrasts_order
            ]
        )
        matrices.append(
            ShapleyMatrix(
                contrasts=tuple(contrasts_order),
                subject_ids=subject_ids,
                values=values,
                metric=metric,
                model_id=model,
                fold=fold,
                scores_full=tuple(scores[sid] for sid in subject_ids),
            )
        )
    return comment, matrices


# --- stats stage -----------------------------------------------------------


def run_stats(out_dir, mode, alpha, ci_level, adjustment, levene_centering):
    comment, matrices = load_matrices(out_dir)
    ledger = consistency_battery(
        matrices,
        mode=mode,
        alpha=alpha,
        adjustment=adjustment,
        ci_level=ci_level,
        levene_centering=levene_centering,
    )
    stats_dir = Path(out_dir) / "stats"
    _write_csv(
        stats_dir / "stats_ledger.csv",
        comment,
        (
            "metric",
            "contrast",
            "scope",
            "groups",
            "test",
            "statistic",
            "df1",
            "df2",
            "p_raw",
            "p_adj",
            "reject",
        ),
        ledger.test_rows(),
    )
    _write_csv(
        stats_dir / "stats_ci.csv",
        comment,
        ("metric", "contrast", "fold", "model_a", "model_b", "level", "lo", "hi", "n"),
        ledger.ci_rows(),
    )
    return ledger


def _print_stats_summary(ledger):
    rejections = [e for e in ledger.tests if e.report.reject]
    click.echo(f"{len(ledger.tests)} tests, {len(rejections)} rejections, "
               f"{len(ledger.cis)} confidence intervals, {len(ledger.skipped)} skipped")
    if rejections:
        click.echo(f"{'metric':<8} {'contrast':<8} {'test':<18} {'p':<12} groups")
        for entry in rejections:
            r = entry.report
            p = r.p_value if r.p_adjusted is None else r.p_adjusted
            click.echo(
                f"{entry.metric:<8} {entry.contrast:<8} {r.test_name:<18} "
                f"{p:<12.4g} {'|'.join(r.groups)}"
            )
    for ci in ledger.cis:
        click.echo(
            f"CI {ci.metric}/{ci.contrast}/fold={ci.fold} "
            f"{ci.pair[0]}-{ci.pair[1]}: [{ci.lo:.4g}, {ci.hi:.4g}] (n={ci.n})"
        )


# --- cluster stage ---------------------------------------------------------


def run_cluster(out_dir, k=2, sweep=False, seed=0):
    comment, matrices = load_matrices(out_dir)
    pooled = {}  # (metric, model) -> list of (subject_id, fold, score, vector)
    for mat in matrices:
        for j, sid in enumerate(mat.subject_ids):
            score = mat.scores_full[j] if mat.scores_full else float("nan")
            pooled.setdefault((mat.metric, mat.model_id), []).append(
                (sid, mat.fold, score, mat.values[:, j], mat.contrasts)
            )
    cluster_dir = Path(out_dir) / "cluster"
    sweep_rows = []
    written = []
    for (metric, model), entries in sorted(pooled.items()):
        X = np.vstack([e[3] for e in entries])
        ks = list(range(2, 7)) if sweep else [k]
        if X.shape[0] < max(ks):
            raise TooFewPoints(
                f"{metric}/{model}: {X.shape[0]} subjects pooled, need >= {max(ks)}"
            )
        xy = pca2(X)
        labels_by_k = {}
        for kk in ks:
            est = ShapleyKMeans(k=kk, seed=seed).fit(X)
            labels_by_k[kk] = est.labels_
            if sweep:
                try:
                    score = silhouette(X, est.labels_)
                except SingleCluster:
                    score = float("nan")  # all points coincide for this k
                sweep_rows.append(
                    {
                        "metric": metric,
                        "model": model,
                        "k": kk,
                        "silhouette": _fmt(score),
                    }
                )
        contrasts = entries[0][4]
        fields = ["subject_id", "fold", "metric_score"]
        fields += [f"cluster_k{kk}" for kk in ks] if sweep else ["cluster"]
        fields += ["pc1", "pc2"] + [f"phi_{c}" for c in contrasts]
        rows = []
        for i, (sid, fold, score, vec, _) in enumerate(entries):
            row = {
                "subject_id": sid,
                "fold": fold,
                "metric_score": _fmt(score),
                "pc1": _fmt(xy[i, 0]),
                "pc2": _fmt(xy[i, 1]),
            }
            if sweep:
                for kk in ks:
                    row[f"cluster_k{kk}"] = int(labels_by_k[kk][i])
            else:
                row["cluster"] = int(labels_by_k[k][i])
            for c, phi in zip(contrasts, vec):
                row[f"phi_{c}"] = _fmt(phi)
            rows.append(row)
        path = cluster_dir / f"cluster_{metric}_{model}.csv"
        _write_csv(path, comment, fields, rows)
        written.append(path)
    if sweep:
        _write_csv(
            cluster_dir / "silhouettes.csv",
            comment,
            ("metric", "model", "k", "silhouette"),
            sweep_rows,
        )
    return written


# --- report stage ----------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_report(out_dir):
    out_dir = Path(out_dir)
    shap_path = out_dir / "shapley" / "shapley_long.csv"
    stats_ledger = out_dir / "stats" / "stats_ledger.csv"
    stats_ci = out_dir / "stats" / "stats_ci.csv"
    for stage, path in (("shapley", shap_path), ("stats", stats_ledger)):
        if not path.exists():
            raise MissingStage(stage)
    cluster_paths = sorted((out_dir / "cluster").glob("cluster_*.csv"))
    if not cluster_paths:
        raise MissingStage("cluster")

    comment, shap_rows = _read_csv(shap_path)
    _, test_rows = _read_csv(stats_ledger)
    ci_rows = _read_csv(stats_ci)[1] if stats_ci.exists() else []
    clusters = {}
    for path in cluster_paths:
        clusters[path.stem.replace("cluster_", "", 1)] = _read_csv(path)[1]

    manifest_hash = ""
    for token in comment.lstrip("# ").split():
        if token.startswith("manifest_hash="):
            manifest_hash = token.split("=", 1)[1]
    run_json = out_dir / "run.json"
    run_record = json.loads(run_json.read_text()) if run_json.exists() else {}

    for row in shap_rows:
        row["phi"] = float(row["phi"])
        row["score_full"] = float(row["score_full"])

    provenance = {
        str(p.relative_to(out_dir)): _sha256(p)
        for p in [shap_path, stats_ledger, *cluster_paths]
        + ([stats_ci] if stats_ci.exists() else [])
    }
    report = {
        "manifest_hash": manifest_hash,
        "tool_version": __version__,
        "run_record": run_record,
        "shapley": shap_rows,
        "stats": {"tests": test_rows, "cis": ci_rows},
        "clusters": clusters,
        "provenance": provenance,
    }
    report_dir = out_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    (report_dir / "report.md").write_text(_digest_md(report))
    return report


def _digest_md(report) -> str:
    lines = [
        "# Run digest",
        "",
        f"- manifest hash: `{report['manifest_hash']}`",
        f"- tool version: {report['tool_version']}",
        f"- shapley rows: {len(report['shapley'])}",
        f"- tests: {len(report['stats']['tests'])}, "
        f"rejections: {sum(int(r['reject']) for r in report['stats']['tests'])}, "
        f"confidence intervals: {len(report['stats']['cis'])}",
        "",
        "## Mean contrast attribution per model",
        "",
        "| metric | model | contrast | mean phi |",
        "|---|---|---|---|",
    ]
    sums = {}
    for row in report["shapley"]:
        key = (row["metric"], row["model"], row["contrast"])
        sums.setdefault(key, []).append(row["phi"])
    for (metric, model, contrast), values in sorted(sums.items()):
        lines.append(f"| {metric} | {model} | {contrast} | {np.mean(values):.6g} |")
    lines.append("")
    return "\n".join(lines)


# --- click wiring ----------------------------------------------------------


@click.group()
@click.version_option(__version__)
def main():
    """Contrast-level Shapley explanation pipeline."""


def _load_or_exit(manifest_path) -> Manifest:
    try:
        return load_manifest(manifest_path)
    except ManifestError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
def validate(manifest_path):
    """Check manifest, referenced files, and adapter reachability."""
    manifest = _load_or_exit(manifest_path)
    diags = validate_study(manifest)
    for diag in diags:
        click.echo(f"{diag.severity}: {diag.message}", err=diag.severity == "error")
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        click.echo(f"{len(errors)} error(s)", err=True)
        sys.exit(EXIT_VALIDATION)
    click.echo("ok")


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--jobs", default=1, show_default=True)
@click.option("--strategy", default=None, help="Override the manifest ablation strategy.")
@click.option("--seed", default=None, type=int, help="Override the manifest shapley seed.")
@click.option("--resume/--no-resume", default=True, show_default=True,
              help="Reuse cached coalition predictions.")
@click.option("--fail-threshold", default=0.0, show_default=True,
              help="Tolerated fraction of failed subjects.")
def shapley(manifest_path, out_dir, jobs, strategy, seed, resume, fail_threshold):
    """Compute Shapley matrices for every (metric, model, fold)."""
    manifest = _load_or_exit(manifest_path)
    diags = [d for d in validate_study(manifest) if d.severity == "error"]
    if diags:
        for diag in diags:
            click.echo(f"error: {diag.message}", err=True)
        sys.exit(EXIT_VALIDATION)
    if seed is not None:
        manifest.shapley["seed"] = seed
    strat = AblationStrategy.from_name(strategy or manifest.shapley["strategy"])
    out_dir = Path(out_dir)
    if not resume:
        cache_root = Path(os.environ.get("COALSHAP_CACHE_DIR") or out_dir / "cache")
        import shutil

        shutil.rmtree(cache_root, ignore_errors=True)
    record = RunRecord(out_dir)
    try:
        matrices, failures, total = run_shapley(
            manifest, out_dir, jobs=jobs, strategy=strat, fail_threshold=fail_threshold
        )
    except PartialFailure as exc:
        record.update_stage("shapley", status="failed", detail=str(exc))
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_PARTIAL)
    record.update_stage(
        "shapley",
        status="ok",
        manifest_hash=manifest.hash(),
        matrices=len(matrices),
        failed_subjects=len(failures),
        total_subjects=total,
    )
    click.echo(f"wrote {len(matrices)} matrices ({len(failures)}/{total} subjects failed)")


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Run directory containing shapley/.")
@click.option("--mode", type=click.Choice(["across_folds", "across_models"]),
              default="across_folds", show_default=True)
@click.option("--alpha", default=0.01, show_default=True)
@click.option("--ci-level", default=0.95, show_default=True)
@click.option("--adjustment", type=click.Choice(["none", "bonferroni", "holm"]),
              default="holm", show_default=True)
@click.option("--levene-centering", type=click.Choice(["mean", "median"]),
              default="mean", show_default=True)
def stats(out_dir, mode, alpha, ci_level, adjustment, levene_centering):
    """Run the consistency test battery over computed Shapley matrices."""
    try:
        ledger = run_stats(out_dir, mode, alpha, ci_level, adjustment, levene_centering)
    except MissingStage as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    RunRecord(Path(out_dir)).update_stage(
        "stats", status="ok", mode=mode, tests=len(ledger.tests), cis=len(ledger.cis)
    )
    _print_stats_summary(ledger)


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--k", default=2, show_default=True)
@click.option("--sweep", is_flag=True, help="Sweep k in [2, 6] and report silhouettes.")
@click.option("--seed", default=0, show_default=True)
def cluster(out_dir, k, sweep, seed):
    """Cluster pooled subject vectors per (metric, model)."""
    try:
        written = run_cluster(out_dir, k=k, sweep=sweep, seed=seed)
    except MissingStage as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    RunRecord(Path(out_dir)).update_stage(
        "cluster", status="ok", k=k, sweep=sweep, files=len(written)
    )
    for path in written:
        click.echo(str(path))


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
def report(out_dir):
    """Consolidate all stage outputs into report.json and report.md."""
    try:
        result = run_report(out_dir)
    except MissingStage as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    RunRecord(Path(out_dir)).update_stage("report", status="ok")
    click.echo(f"report with {len(result['shapley'])} shapley rows written")


def entrypoint():
    try:
        main(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.Abort:
        sys.exit(1)
    except SystemExit:
        raise
    except CoalshapError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INTERNAL)


if __name__ == "__main__":
    entrypoint()
