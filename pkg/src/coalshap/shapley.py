"""Exact and Monte-Carlo Shapley attribution over channel coalitions.

A coalition is a bitmask over the C input channels; the value function scores
the model on a volume whose excluded channels are replaced by a baseline
signal (ablation). Exact mode enumerates all 2^C coalitions; permutation
sampling covers larger channel counts.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (
    ChannelCountMismatch,
    ExactModeOverflow,
    ValueFnFailure,
)
from .metrics import MetricConfig, MetricId, label_averaged_metric
from .volume import LabelMap, MultiContrastVolume, read_seg, write_seg

EXACT_MAX_CHANNELS = 20


@dataclass(frozen=True)
class Coalition:
    """Subset of channels encoded as a bitmask; bit i set means channel i included."""

    bits: int
    n: int

    def __post_init__(self):
        if not 0 <= self.bits < (1 << self.n):
            raise ValueError(f"bitmask {self.bits} out of range for n={self.n}")

    @classmethod
    def full(cls, n: int) -> "Coalition":
        return cls((1 << n) - 1, n)

    @classmethod
    def empty(cls, n: int) -> "Coalition":
        return cls(0, n)

    def contains(self, channel: int) -> bool:
        return bool(self.bits >> channel & 1)

    def add(self, channel: int) -> "Coalition":
        return Coalition(self.bits | (1 << channel), self.n)

    def size(self) -> int:
        return self.bits.bit_count()

    def members(self) -> tuple:
        return tuple(i for i in range(self.n) if self.contains(i))


class AblationMode(enum.Enum):
    ZERO_FILL = "zero_fill"
    CONSTANT_FILL = "constant_fill"
    CHANNEL_MEAN_FILL = "channel_mean_fill"
    NOISE_FILL = "noise_fill"


@dataclass(frozen=True)
class AblationStrategy:
    mode: AblationMode = AblationMode.ZERO_FILL
    value: float = 0.0  # constant_fill
    seed: int = 0  # noise_fill
    sigma: float = 1.0  # noise_fill

    @classmethod
    def from_name(cls, name: str, **kw) -> "AblationStrategy":
        return cls(mode=AblationMode(name), **kw)

    def digest(self) -> str:
        key = f"{self.mode.value}|{self.value!r}|{self.seed}|{self.sigma!r}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]


def ablate(
    volume: MultiContrastVolume, coalition: Coalition, strategy: AblationStrategy
) -> MultiContrastVolume:
    """Replace the channels outside the coalition by the strategy's baseline signal."""
    if coalition.n != volume.channels:
        raise ChannelCountMismatch(
            f"coalition over {coalition.n} channels, volume has {volume.channels}"
        )
    if coalition.bits == (1 << coalition.n) - 1:
        return volume
    data = volume.data.copy()
    for ch in range(volume.channels):
        if coalition.contains(ch):
            continue
        if strategy.mode is AblationMode.ZERO_FILL:
            data[ch] = 0.0
        elif strategy.mode is AblationMode.CONSTANT_FILL:
            data[ch] = strategy.value
        elif strategy.mode is AblationMode.CHANNEL_MEAN_FILL:
            data[ch] = volume.data[ch].mean(dtype=np.float64)
        elif strategy.mode is AblationMode.NOISE_FILL:
            rng = np.random.default_rng((strategy.seed, ch))
            data[ch] = rng.normal(0.0, strategy.sigma, size=data[ch].shape)
    return MultiContrastVolume(
        data=data, spacing=volume.spacing, channel_names=volume.channel_names
    )


def shapley_weight(s_size: int, n: int) -> Fraction:
    """Exact coalition weight s!(n-s-1)!/n! for a coalition of size s."""
    if n > EXACT_MAX_CHANNELS:
        raise ExactModeOverflow(f"exact mode refuses n={n} > {EXACT_MAX_CHANNELS}")
    if not 0 <= s_size < n:
        raise ValueError(f"need 0 <= s_size < n, got {s_size}, {n}")
    return Fraction(
        math.factorial(s_size) * math.factorial(n - s_size - 1), math.factorial(n)
    )


class _Memo:
    """Evaluate each coalition bitmask exactly once."""

    def __init__(self, value_fn, n):
        self.value_fn = value_fn
        self.n = n
        self.values = {}

    def __call__(self, bits: int) -> float:
        if bits not in self.values:
            try:
                self.values[bits] = float(self.value_fn(Coalition(bits, self.n)))
            except Exception as exc:  # noqa: BLE001 - tagged with the coalition
                raise ValueFnFailure(bits, exc) from exc
        return self.values[bits]


def exact_shapley(value_fn, n: int) -> np.ndarray:
    """Exact Shapley values over all 2^n coalitions; value_fn(Coalition) -> float."""
    if n > EXACT_MAX_CHANNELS:
        raise ExactModeOverflow(f"exact mode refuses n={n} > {EXACT_MAX_CHANNELS}")
    memo = _Memo(value_fn, n)
    weights = [float(shapley_weight(s, n)) for s in range(n)]
    phi = np.empty(n)
    full = (1 << n) - 1
    for i in range(n):
        terms = []
        rest = full & ~(1 << i)
        # enumerate all submasks of rest, including 0
        sub = rest
        while True:
            terms.append(
                weights[sub.bit_count()] * (memo(sub | (1 << i)) - memo(sub))
            )
            if sub == 0:
                break
            sub = (sub - 1) & rest
        phi[i] = math.fsum(terms)
    return phi


def mc_shapley(value_fn, n: int, num_permutations: int, seed: int):
    """Permutation-sampling estimate; returns (estimates, standard errors)."""
    if num_permutations < 2:
        raise ValueError("num_permutations must be >= 2")
    memo = _Memo(value_fn, n)
    rng = np.random.default_rng(seed)
    marginals = np.empty((num_permutations, n))
    for t in range(num_permutations):
        order = rng.permutation(n)
        bits = 0
        prev = memo(0)
        for ch in order:
            bits |= 1 << int(ch)
            cur = memo(bits)
            marginals[t, int(ch)] = cur - prev
            prev = cur
    estimates = marginals.mean(axis=0)
    stderr = marginals.std(axis=0, ddof=1) / math.sqrt(num_permutations)
    return estimates, stderr


@dataclass(frozen=True)
class SubjectVector:
    """Per-subject Shapley values, one per channel."""

    values: np.ndarray
    subject_id: str
    metric: str
    model_id: str
    fold: str
    score_full: float = math.nan  # metric at the full coalition

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise ValueError(f"subject vector must be finite 1-D, got {values!r}")
        object.__setattr__(self, "values", values)


@dataclass
class ShapleyMatrix:
    """Channels x subjects matrix for one (metric, model, fold)."""

    contrasts: tuple
    subject_ids: tuple
    values: np.ndarray  # shape (len(contrasts), len(subject_ids))
    metric: str
    model_id: str
    fold: str
    scores_full: tuple = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.contrasts), len(self.subject_ids)):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.contrasts)} contrasts x {len(self.subject_ids)} subjects"
            )

    @classmethod
    def from_subject_vectors(cls, contrasts, vectors):
        if not vectors:
            raise ValueError("no subject vectors")
        keys = {(v.metric, v.model_id, v.fold) for v in vectors}
        if len(keys) != 1:
            raise ValueError(f"mixed (metric, model, fold) keys: {sorted(keys)}")
        metric, model_id, fold = next(iter(keys))
        return cls(
            contrasts=tuple(contrasts),
            subject_ids=tuple(v.subject_id for v in vectors),
            values=np.column_stack([v.values for v in vectors]),
            metric=metric,
            model_id=model_id,
            fold=fold,
            scores_full=tuple(v.score_full for v in vectors),
        )

    def contrast_series(self, contrast: str) -> np.ndarray:
        return self.values[self.contrasts.index(contrast)]

    def subject_vector(self, subject_id: str) -> np.ndarray:
        return self.values[:, self.subject_ids.index(subject_id)]


class CoalitionCache:
    """Insert-once store of coalition predictions: <root>/<subject_id>/<bitmask>.seg."""

    def __init__(self, root):
        self.root = Path(root)

    def _path(self, subject_id: str, bits: int) -> Path:
        return self.root / subject_id / f"{bits}.seg"

    def get(self, subject_id: str, bits: int) -> LabelMap | None:
        path = self._path(subject_id, bits)
        return read_seg(path) if path.exists() else None

    def put(self, subject_id: str, bits: int, prediction: LabelMap) -> None:
        path = self._path(subject_id, bits)
        if path.exists():
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        write_seg(prediction, tmp)
        tmp.replace(path)


def subject_shapley(
    subject_id: str,
    adapter,
    volume: MultiContrastVolume,
    gt: LabelMap,
    metric: MetricId,
    strategy: AblationStrategy = AblationStrategy(),
    cfg: MetricConfig = MetricConfig(),
    model_id: str = "",
    fold: str = "",
    cache: CoalitionCache | None = None,
) -> SubjectVector:
    """Exact per-subject Shapley values of the label-averaged metric."""
    n = volume.channels
    score_cache = {}

    def value_fn(coalition: Coalition) -> float:
        pred = cache.get(subject_id, coalition.bits) if cache else None
        if pred is None:
            pred = adapter.predict(subject_id, ablate(volume, coalition, strategy), coalition)
            if cache:
                cache.put(subject_id, coalition.bits, pred)
        score = label_averaged_metric(metric, pred, gt, cfg)
        score_cache[coalition.bits] = score
        return score

    phi = exact_shapley(value_fn, n)
    return SubjectVector(
        values=phi,
        subject_id=subject_id,
        metric=metric.name,
        model_id=model_id,
        fold=fold,
        score_full=score_cache[(1 << n) - 1],
    )
