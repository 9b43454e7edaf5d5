#!/usr/bin/env python3
"""Regenerate the shared codec/model golden corpus in frontend/test/golden/.

The corpus pins the cross-language contract: MCV1/SEG1 files written by the
Python toolkit, plus SHA-256 digests of the union-reveal predictions for every
coalition, so the external adapter's codec and model can be checked
byte-for-byte without importing any Python.
"""

import hashlib
import json
from pathlib import Path

from coalshap.adapters import synthetic_labels
from coalshap.synthetic import SubjectSpec, make_subject
from coalshap.volume import LabelMap, write_mcv, write_seg

GOLDEN = Path(__file__).resolve().parent.parent / "frontend" / "test" / "golden"

SUBJECTS = [
    SubjectSpec("golden00", region_sizes=(10, 20, 30, 40), seed=101),
    SubjectSpec("golden01", region_sizes=(25, 25, 25, 25), overlap=0.8, seed=202),
    SubjectSpec("golden02", region_sizes=(5, 10, 60, 15), seed=303),
]


def main():
    GOLDEN.mkdir(parents=True, exist_ok=True)
    manifest = {"label_set": [1], "subjects": []}
    for spec in SUBJECTS:
        volume, gt, _ = make_subject(spec, spacing=(1.0, 1.5, 2.0))
        mcv_name = f"{spec.subject_id}.mcv"
        gt_name = f"{spec.subject_id}_gt.seg"
        write_mcv(volume, GOLDEN / mcv_name)
        write_seg(gt, GOLDEN / gt_name)
        coalition_digests = {}
        for bits in range(16):
            labels = synthetic_labels(volume.data, bits, (1,))
            coalition_digests[str(bits)] = hashlib.sha256(labels.tobytes()).hexdigest()
            if bits == 15:
                # full-coalition prediction as bytes, for writeSeg comparison
                write_seg(
                    LabelMap(labels=labels, spacing=volume.spacing, label_set=(1,)),
                    GOLDEN / f"{spec.subject_id}_pred15.seg",
                )
        manifest["subjects"].append(
            {
                "subject_id": spec.subject_id,
                "mcv": mcv_name,
                "gt": gt_name,
                "pred15": f"{spec.subject_id}_pred15.seg",
                "dims": [volume.channels, *volume.dims],
                "spacing": list(volume.spacing),
                "channel_names": list(volume.channel_names),
                "payload_sha256": hashlib.sha256(volume.data.tobytes()).hexdigest(),
                "payload_head": [float(v) for v in volume.data.reshape(-1)[:16]],
                "gt_labels_sha256": hashlib.sha256(gt.labels.tobytes()).hexdigest(),
                "coalition_sha256": coalition_digests,
            }
        )
    (GOLDEN / "expected.json").write_text(json.dumps(manifest, indent=1) + "\n")
    print(f"wrote corpus for {len(SUBJECTS)} subjects to {GOLDEN}")


if __name__ == "__main__":
    main()
