"""Shared fixtures and brute-force oracles.

The oracles here deliberately avoid the package's algorithms: nearest-
foreground scans instead of the separable transform, all-pairs surface
distances instead of EDT sampling, and full permutation enumeration instead
of the weighted coalition sum.
"""

import itertools
import math

import numpy as np
import pytest

from coalshap import BinaryMask, LabelMap, MultiContrastVolume


def brute_force_sq_edt(bits, spacing):
    """O(n^2) nearest-foreground squared distance; inf when no foreground."""
    fg = np.argwhere(bits)
    out = np.full(bits.shape, math.inf)
    if fg.size == 0:
        return out
    sp = np.asarray(spacing, dtype=float)
    for idx in np.ndindex(bits.shape):
        deltas = (fg - np.array(idx)) * sp
        out[idx] = float(np.min((deltas**2).sum(axis=1)))
    return out


def brute_force_surface(bits):
    """Foreground voxel with any 6-neighbor background or on the domain edge."""
    out = np.zeros_like(bits)
    dims = bits.shape
    for idx in np.ndindex(dims):
        if not bits[idx]:
            continue
        for axis in range(3):
            for step in (-1, 1):
                nb = list(idx)
                nb[axis] += step
                if not (0 <= nb[axis] < dims[axis]) or not bits[tuple(nb)]:
                    out[idx] = True
    return out


def brute_force_hd95(pred_bits, gt_bits, spacing, penalty_mm=None):
    """All-pairs surface-distance percentile oracle (max of directed P95s)."""
    p_empty = not pred_bits.any()
    g_empty = not gt_bits.any()
    if p_empty and g_empty:
        return 0.0
    if p_empty or g_empty:
        if penalty_mm is not None:
            return penalty_mm
        return math.sqrt(sum((n * s) ** 2 for n, s in zip(pred_bits.shape, spacing)))
    sp = np.asarray(spacing, dtype=float)
    surf_p = np.argwhere(brute_force_surface(pred_bits)) * sp
    surf_g = np.argwhere(brute_force_surface(gt_bits)) * sp
    pairwise = np.sqrt(
        ((surf_p[:, None, :] - surf_g[None, :, :]) ** 2).sum(axis=2)
    )  # all-pairs distance matrix, no EDT involved
    d_pg = pairwise.min(axis=1)
    d_gp = pairwise.min(axis=0)
    return max(
        float(np.percentile(d_pg, 95, method="linear")),
        float(np.percentile(d_gp, 95, method="linear")),
    )


def permutation_shapley(values_by_bits, n):
    """Average marginal contribution over all n! orderings."""
    phi = [[] for _ in range(n)]
    for perm in itertools.permutations(range(n)):
        bits = 0
        prev = values_by_bits[0]
        for ch in perm:
            bits |= 1 << ch
            phi[ch].append(values_by_bits[bits] - prev)
            prev = values_by_bits[bits]
    return np.array([math.fsum(m) / math.factorial(n) for m in phi])


def random_mask(rng, dims, density=0.2, spacing=(1.0, 1.0, 1.0)):
    return BinaryMask(bits=rng.random(dims) < density, spacing=spacing)


def random_volume(rng, channels=4, dims=(8, 8, 8), spacing=(1.0, 1.0, 1.0)):
    return MultiContrastVolume(
        data=rng.random((channels,) + dims, dtype=np.float32),
        spacing=spacing,
        channel_names=tuple(f"c{i}" for i in range(channels)),
    )


def random_labelmap(rng, dims=(4, 4, 4), label_set=(1, 2, 3), spacing=(1.0, 1.0, 1.0)):
    labels = rng.integers(0, len(label_set) + 1, size=dims).astype(np.uint8)
    alphabet = np.array((0,) + tuple(label_set), dtype=np.uint8)
    return LabelMap(labels=alphabet[labels], spacing=spacing, label_set=label_set)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
