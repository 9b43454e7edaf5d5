"""Segmentation quality metrics: per-label Dice and HD95, and the label average.

HD95 is the max of the two directed 95th-percentile surface distances
(linear-interpolation percentile), backed by an exact separable squared
Euclidean distance transform so distances are true millimeter values.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, SubjectSkipped, UnknownLabel
from .volume import BinaryMask, LabelMap, one_hot


class Orientation(enum.Enum):
    HIGHER_BETTER = "higher_better"
    LOWER_BETTER = "lower_better"


@dataclass(frozen=True)
class MetricId:
    name: str
    orientation: Orientation

    def __post_init__(self):
        if self.name not in _REGISTRY:
            raise UnknownLabel(f"unknown metric {self.name!r}; known: {sorted(_REGISTRY)}")


class EmptyPolicy(enum.Enum):
    PENALTY = "penalty"
    SKIP_SUBJECT = "skip_subject"


@dataclass(frozen=True)
class MetricConfig:
    """Conventions for degenerate mask pairs.

    hd95_penalty_mm=None means "volume diagonal in mm", resolved per call.
    """

    empty_pair_dice: float = 1.0
    hd95_empty_policy: EmptyPolicy = EmptyPolicy.PENALTY
    hd95_penalty_mm: float | None = None
    hd95_pooled: bool = False

    def __post_init__(self):
        if self.hd95_penalty_mm is not None and self.hd95_penalty_mm < 0:
            raise ValueError("hd95_penalty_mm must be >= 0")


def _check_pair(pred: BinaryMask, gt: BinaryMask, need_spacing=False):
    if pred.dims != gt.dims:
        raise DimMismatch(f"pred dims {pred.dims} != gt dims {gt.dims}")
    if need_spacing and pred.spacing != gt.spacing:
        raise DimMismatch(f"pred spacing {pred.spacing} != gt spacing {gt.spacing}")


def dice(pred: BinaryMask, gt: BinaryMask, cfg: MetricConfig = MetricConfig()) -> float:
    """Overlap coefficient 2|P∩G| / (|P| + |G|)."""
    _check_pair(pred, gt)
    p = int(pred.bits.sum())
    g = int(gt.bits.sum())
    if p + g == 0:
        return float(cfg.empty_pair_dice)
    inter = int(np.logical_and(pred.bits, gt.bits).sum())
    return 2.0 * inter / (p + g)


def _edt_1d(f: np.ndarray, step: float) -> np.ndarray:
    """Lower-envelope pass: min over j of f[j] + ((i-j)*step)^2 for every i.

    Positions with f == +inf carry no parabola; at least one finite entry required.
    """
    n = f.shape[0]
    sites = np.flatnonzero(f != math.inf)
    d = np.empty(n)
    v = np.empty(n, dtype=np.int64)  # parabola sites
    z = np.empty(n + 1)  # envelope breakpoints
    k = 0
    v[0] = sites[0]
    z[0] = -math.inf
    z[1] = math.inf
    step2 = step * step
    for q in sites[1:]:
        q = int(q)
        while True:
            p = int(v[k])
            s = ((f[q] - f[p]) / step2 + q * q - p * p) / (2 * (q - p))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = math.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = int(v[k])
        d[q] = f[p] + (q - p) * (q - p) * step2
    return d


def squared_edt(mask: BinaryMask) -> np.ndarray:
    """Exact squared Euclidean distance (mm^2) to the nearest foreground voxel.

    Empty mask yields +inf everywhere.
    """
    bits = mask.bits
    field = np.where(bits, 0.0, math.inf)
    for axis, step in enumerate(mask.spacing):
        field = np.ascontiguousarray(np.moveaxis(field, axis, -1))
        flat = field.reshape(-1, field.shape[-1])
        for row in range(flat.shape[0]):
            line = flat[row]
            if np.all(line == math.inf):
                continue
            flat[row] = _edt_1d(line, step)
        field = np.moveaxis(field, -1, axis)
    return field


def surface(mask: BinaryMask) -> BinaryMask:
    """Foreground voxels with a background 6-neighbor (domain edge counts as background)."""
    bits = mask.bits
    padded = np.pad(bits, 1, mode="constant", constant_values=False)
    interior = padded[1:-1, 1:-1, 1:-1].copy()
    for axis in range(3):
        interior &= np.roll(padded, 1, axis=axis)[1:-1, 1:-1, 1:-1]
        interior &= np.roll(padded, -1, axis=axis)[1:-1, 1:-1, 1:-1]
    return BinaryMask(bits=bits & ~interior, spacing=mask.spacing)


def _percentile95(values: np.ndarray) -> float:
    return float(np.percentile(values, 95.0, method="linear"))


def _volume_diagonal_mm(mask: BinaryMask) -> float:
    return math.sqrt(sum((n * s) ** 2 for n, s in zip(mask.dims, mask.spacing)))


def hd95(pred: BinaryMask, gt: BinaryMask, cfg: MetricConfig = MetricConfig()) -> float:
    """95th-percentile symmetric surface-to-surface distance in millimeters."""
    _check_pair(pred, gt, need_spacing=True)
    p_empty = not pred.bits.any()
    g_empty = not gt.bits.any()
    if p_empty and g_empty:
        return 0.0
    if p_empty or g_empty:
        if cfg.hd95_empty_policy is EmptyPolicy.SKIP_SUBJECT:
            raise SubjectSkipped("exactly one empty mask under skip_subject policy")
        if cfg.hd95_penalty_mm is not None:
            return float(cfg.hd95_penalty_mm)
        return _volume_diagonal_mm(pred)
    sp = surface(pred)
    sg = surface(gt)
    d_to_g = np.sqrt(squared_edt(sg)[sp.bits])
    d_to_p = np.sqrt(squared_edt(sp)[sg.bits])
    if cfg.hd95_pooled:
        return _percentile95(np.concatenate([d_to_g, d_to_p]))
    return max(_percentile95(d_to_g), _percentile95(d_to_p))


_REGISTRY = {}


def register_metric(name: str, orientation: Orientation, fn):
    """fn(pred_mask, gt_mask, cfg) -> float for one label."""
    _REGISTRY[name] = (orientation, fn)


register_metric("dice", Orientation.HIGHER_BETTER, dice)
register_metric("hd95", Orientation.LOWER_BETTER, hd95)

DICE = MetricId("dice", Orientation.HIGHER_BETTER)
HD95 = MetricId("hd95", Orientation.LOWER_BETTER)


def metric_by_name(name: str) -> MetricId:
    orientation, _ = _REGISTRY[name]
    return MetricId(name, orientation)


def label_averaged_metric(
    metric: MetricId,
    pred: LabelMap,
    gt: LabelMap,
    cfg: MetricConfig = MetricConfig(),
) -> float:
    """Arithmetic mean of the per-label metric over the declared label set."""
    if pred.dims != gt.dims or pred.spacing != gt.spacing:
        raise DimMismatch(
            f"pred {pred.dims}/{pred.spacing} vs gt {gt.dims}/{gt.spacing}"
        )
    if pred.label_set != gt.label_set:
        raise DimMismatch(f"label sets differ: {pred.label_set} vs {gt.label_set}")
    _, fn = _REGISTRY[metric.name]
    per_label = [
        fn(one_hot(pred, label), one_hot(gt, label), cfg) for label in gt.label_set
    ]
    return float(np.mean(per_label))
