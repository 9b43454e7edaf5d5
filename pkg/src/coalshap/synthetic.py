"""Synthetic study generation for tests and the bundled example study.

Each channel of a generated subject encodes one reveal region by storing the
class id at its voxels (zero elsewhere), so the union-reveal model recovers
the region from the volume alone. The ground truth is the union of the
per-channel target regions; an overlap fraction below 1 moves part of a
channel's reveal region off-target, degrading the subject's achievable score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .volume import LabelMap, MultiContrastVolume, write_mcv, write_seg

DEFAULT_CHANNELS = ("t1n", "t1c", "t2w", "t2f")


@dataclass
class SubjectSpec:
    subject_id: str
    region_sizes: tuple = (10, 20, 30, 40)
    overlap: float = 1.0  # fraction of each reveal region that hits its target
    seed: int = 0
    label: int = 1


def make_subject(spec: SubjectSpec, dims=(6, 8, 8), spacing=(1.0, 1.0, 1.0),
                 channels=DEFAULT_CHANNELS):
    """Build (volume, ground truth, per-channel target index arrays)."""
    n_channels = len(channels)
    if len(spec.region_sizes) != n_channels:
        raise ValueError(
            f"{len(spec.region_sizes)} region sizes for {n_channels} channels"
        )
    n_vox = int(np.prod(dims))
    total_gt = sum(spec.region_sizes)
    if 2 * total_gt > n_vox:
        raise ValueError(f"regions ({total_gt} voxels) too large for dims {dims}")
    rng = np.random.default_rng(spec.seed)
    shuffled = rng.permutation(n_vox)
    gt_regions = []
    offset = 0
    for size in spec.region_sizes:
        gt_regions.append(shuffled[offset : offset + size])
        offset += size
    background_pool = shuffled[offset:]

    data = np.zeros((n_channels,) + tuple(dims), dtype=np.float32)
    pool_offset = 0
    for ch, (region, size) in enumerate(zip(gt_regions, spec.region_sizes)):
        hit = int(round(spec.overlap * size))
        reveal = list(region[:hit])
        miss = size - hit
        reveal += list(background_pool[pool_offset : pool_offset + miss])
        pool_offset += miss
        flat = data[ch].reshape(-1)
        flat[np.array(reveal, dtype=int)] = spec.label

    gt_flat = np.zeros(n_vox, dtype=np.uint8)
    for region in gt_regions:
        gt_flat[region] = spec.label
    volume = MultiContrastVolume(data=data, spacing=spacing, channel_names=channels)
    gt = LabelMap(
        labels=gt_flat.reshape(dims), spacing=spacing, label_set=(spec.label,)
    )
    return volume, gt, gt_regions


@dataclass
class StudySpec:
    study_name: str = "synthetic-union-study"
    channels: tuple = DEFAULT_CHANNELS
    dims: tuple = (6, 8, 8)
    spacing: tuple = (1.0, 1.0, 1.0)
    folds: dict = field(default_factory=dict)  # fold_id -> [SubjectSpec]
    models: list = field(default_factory=list)  # manifest model dicts
    metrics: tuple = ("dice",)
    label_names: dict = field(default_factory=lambda: {1: "FG"})
    shapley: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    cluster: dict = field(default_factory=dict)


def write_study(root, spec: StudySpec) -> Path:
    """Materialize MCV/SEG files plus a manifest; returns the manifest path."""
    root = Path(root)
    data_dir = root / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    folds_json = []
    for fold_id, subjects in spec.folds.items():
        entries = []
        for subj in subjects:
            volume, gt, _ = make_subject(
                subj, dims=spec.dims, spacing=spec.spacing, channels=spec.channels
            )
            input_rel = f"data/{fold_id}_{subj.subject_id}.mcv"
            gt_rel = f"data/{fold_id}_{subj.subject_id}.seg"
            write_mcv(volume, root / input_rel)
            write_seg(gt, root / gt_rel)
            entries.append(
                {"subject_id": subj.subject_id, "input": input_rel, "gt": gt_rel}
            )
        folds_json.append({"fold_id": fold_id, "subjects": entries})
    if not spec.models:
        models = [{"kind": "synthetic", "model_id": "union", "synthetic": {}}]
    else:
        models = spec.models
    manifest = {
        "study_name": spec.study_name,
        "channels": list(spec.channels),
        "labels": [{"id": i, "name": n} for i, n in sorted(spec.label_names.items())],
        "folds": folds_json,
        "models": models,
        "metrics": list(spec.metrics),
    }
    for section in ("shapley", "stats", "cluster"):
        values = getattr(spec, section)
        if values:
            manifest[section] = values
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def default_study(root, folds=2, subjects_per_fold=3, seed=0, **spec_kw) -> Path:
    """Small all-defaults study used by the docs and smoke tests."""
    fold_map = {}
    counter = 0
    for f in range(1, folds + 1):
        subjects = []
        for s in range(subjects_per_fold):
            subjects.append(
                SubjectSpec(subject_id=f"subj{counter:02d}", seed=seed + counter)
            )
            counter += 1
        fold_map[f"fold{f}"] = subjects
    return write_study(root, StudySpec(folds=fold_map, **spec_kw))
