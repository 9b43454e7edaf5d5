"""Study manifest: JSON schema, loading, hashing, and validation diagnostics."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from . import __version__
from .adapters import AdapterSpec, probe
from .errors import CoalshapError
from .metrics import _REGISTRY as METRIC_REGISTRY
from .volume import read_mcv, read_seg

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["study_name", "channels", "labels", "folds", "models", "metrics"],
    "properties": {
        "study_name": {"type": "string", "minLength": 1},
        "channels": {
            "type": "array",
            "items": {"type": "string"},
            "minItems": 1,
            "uniqueItems": True,
        },
        "labels": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "name"],
                "properties": {
                    "id": {"type": "integer", "minimum": 1, "maximum": 255},
                    "name": {"type": "string"},
                },
            },
        },
        "folds": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["fold_id", "subjects"],
                "properties": {
                    "fold_id": {"type": "string"},
                    "subjects": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["subject_id", "input", "gt"],
                            "properties": {
                                "subject_id": {"type": "string"},
                                "input": {"type": "string"},
                                "gt": {"type": "string"},
                            },
                        },
                    },
                },
            },
        },
        "models": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["kind", "model_id"],
                "properties": {
                    "kind": {"enum": ["store", "subprocess", "synthetic"]},
                    "model_id": {"type": "string"},
                    "store_dir": {"type": "string"},
                    "command": {"type": "string"},
                    "max_parallel": {"type": "integer", "minimum": 1},
                    "timeout_s": {"type": "number", "exclusiveMinimum": 0},
                    "synthetic": {"type": "object"},
                },
            },
        },
        "metrics": {
            "type": "array",
            "items": {"type": "string"},
            "minItems": 1,
            "uniqueItems": True,
        },
        "shapley": {
            "type": "object",
            "properties": {
                "strategy": {
                    "enum": ["zero_fill", "constant_fill", "channel_mean_fill", "noise_fill"]
                },
                "seed": {"type": "integer"},
                "mode": {"enum": ["exact", "mc"]},
                "permutations": {"type": "integer", "minimum": 2},
            },
        },
        "stats": {
            "type": "object",
            "properties": {
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "ci_level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "adjustment": {"enum": ["none", "bonferroni", "holm"]},
                "levene_centering": {"enum": ["mean", "median"]},
            },
        },
        "cluster": {
            "type": "object",
            "properties": {
                "k": {"type": "integer", "minimum": 1},
                "sweep": {"type": "boolean"},
                "seed": {"type": "integer"},
            },
        },
    },
}

_DEFAULTS = {
    "shapley": {"strategy": "zero_fill", "seed": 0, "mode": "exact", "permutations": 200},
    "stats": {
        "alpha": 0.01,
        "ci_level": 0.95,
        "adjustment": "holm",
        "levene_centering": "mean",
    },
    "cluster": {"k": 2, "sweep": False, "seed": 0},
}


class ManifestError(CoalshapError):
    pass


@dataclass
class Manifest:
    study_name: str
    channels: tuple
    labels: dict  # id -> name
    folds: list  # [(fold_id, [(subject_id, input_path, gt_path)])]
    models: list  # AdapterSpec
    metrics: tuple
    shapley: dict
    stats: dict
    cluster: dict
    path: Path
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def label_set(self):
        return tuple(sorted(self.labels))

    def hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def resolve(self, rel: str) -> Path:
        return (self.path.parent / rel).resolve()


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    try:
        jsonschema.validate(raw, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ManifestError(f"manifest schema violation: {exc.message}") from exc

    labels = {int(l["id"]): l["name"] for l in raw["labels"]}
    if len(labels) != len(raw["labels"]):
        raise ManifestError("duplicate label ids")
    folds = []
    for fold in raw["folds"]:
        subjects = [(s["subject_id"], s["input"], s["gt"]) for s in fold["subjects"]]
        ids = [s[0] for s in subjects]
        if len(set(ids)) != len(ids):
            raise ManifestError(f"duplicate subject_ids in fold {fold['fold_id']!r}")
        folds.append((fold["fold_id"], subjects))
    if len({f[0] for f in folds}) != len(folds):
        raise ManifestError("duplicate fold_ids")
    models = []
    for m in raw["models"]:
        models.append(
            AdapterSpec(
                kind=m["kind"],
                model_id=m["model_id"],
                store_dir=m.get("store_dir"),
                command=m.get("command"),
                max_parallel=m.get("max_parallel", 1),
                timeout_s=m.get("timeout_s", 60.0),
                synthetic=m.get("synthetic", {}),
            )
        )
    if len({m.model_id for m in models}) != len(models):
        raise ManifestError("duplicate model_ids")
    for name in raw["metrics"]:
        if name not in METRIC_REGISTRY:
            raise ManifestError(f"unknown metric {name!r}")

    def merged(section):
        out = dict(_DEFAULTS[section])
        out.update(raw.get(section, {}))
        return out

    return Manifest(
        study_name=raw["study_name"],
        channels=tuple(raw["channels"]),
        labels=labels,
        folds=folds,
        models=models,
        metrics=tuple(raw["metrics"]),
        shapley=merged("shapley"),
        stats=merged("stats"),
        cluster=merged("cluster"),
        path=path,
        raw=raw,
    )


@dataclass
class Diagnostic:
    severity: str  # error | warning
    message: str


def validate_study(manifest: Manifest) -> list:
    """Check referenced files, header agreement, and adapter reachability."""
    diags = []
    for fold_id, subjects in manifest.folds:
        for subject_id, input_rel, gt_rel in subjects:
            mcv_path = manifest.resolve(input_rel)
            seg_path = manifest.resolve(gt_rel)
            for p, kind in ((mcv_path, "input MCV"), (seg_path, "ground-truth SEG")):
                if not p.exists():
                    diags.append(
                        Diagnostic("error", f"{fold_id}/{subject_id}: missing {kind}: {p}")
                    )
            if not mcv_path.exists() or not seg_path.exists():
                continue
            try:
                vol = read_mcv(mcv_path)
            except CoalshapError as exc:
                diags.append(Diagnostic("error", f"{mcv_path}: {exc}"))
                continue
            if vol.channel_names != manifest.channels:
                diags.append(
                    Diagnostic(
                        "error",
                        f"{mcv_path}: channel order {vol.channel_names} does not match "
                        f"manifest order {manifest.channels}",
                    )
                )
            try:
                gt = read_seg(seg_path)
            except CoalshapError as exc:
                diags.append(Diagnostic("error", f"{seg_path}: {exc}"))
                continue
            if gt.label_set != manifest.label_set:
                diags.append(
                    Diagnostic(
                        "error",
                        f"{seg_path}: label set {gt.label_set} does not match "
                        f"declared {manifest.label_set}",
                    )
                )
            if gt.dims != vol.dims or gt.spacing != vol.spacing:
                diags.append(
                    Diagnostic(
                        "error",
                        f"{fold_id}/{subject_id}: input dims/spacing "
                        f"{vol.dims}/{vol.spacing} vs gt {gt.dims}/{gt.spacing}",
                    )
                )
    for spec in manifest.models:
        resolved = spec
        if spec.kind == "store" and spec.store_dir:
            resolved = AdapterSpec(
                kind=spec.kind,
                model_id=spec.model_id,
                store_dir=str(manifest.resolve(spec.store_dir)),
                max_parallel=spec.max_parallel,
                timeout_s=spec.timeout_s,
            )
        report = probe(resolved, manifest.label_set)
        if not report.reachable:
            diags.append(
                Diagnostic("error", f"model {spec.model_id!r} unreachable: {report.reason}")
            )
    return diags


def tool_signature(manifest: Manifest) -> str:
    return f"# manifest_hash={manifest.hash()} tool_version={__version__}"
