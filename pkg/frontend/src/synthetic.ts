/**
 * Union-reveal synthetic model.
 *
 * A channel votes class l at a voxel when the voxel value rounds to l
 * (floor(v + 0.5) === l) and lies strictly within 0.25 of l; the voxel takes
 * the largest vote over coalition channels. This rule must stay bit-compatible
 * with coalshap.adapters.synthetic_labels in the Python toolkit, which is why
 * rounding is spelled as floor(v + 0.5) rather than a native round().
 */

import type { MultiContrastVolume } from "./codec.js";

export function syntheticLabels(
  volume: MultiContrastVolume,
  coalitionBits: number,
  labelSet: number[],
): Uint8Array {
  const [c, d, h, w] = volume.dims;
  const voxels = d * h * w;
  const out = new Uint8Array(voxels);
  const labels = [...labelSet].sort((a, b) => a - b);
  for (let ch = 0; ch < c; ch++) {
    if (((coalitionBits >> ch) & 1) === 0) {
      continue;
    }
    const base = ch * voxels;
    for (let i = 0; i < voxels; i++) {
      const v = volume.data[base + i];
      const nearest = Math.floor(v + 0.5);
      for (const label of labels) {
        if (nearest === label && Math.abs(v - label) < 0.25 && label > out[i]) {
          out[i] = label;
        }
      }
    }
  }
  return out;
}
