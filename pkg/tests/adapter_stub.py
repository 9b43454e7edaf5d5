#!/usr/bin/env python3
"""Minimal JSON-lines adapter stub used by the subprocess-backend tests.

Modes (first CLI arg):
  echo      handshake + union-reveal predictions (default)
  silent    handshake, then never answers predict (timeout path)
  badproto  replies protocol 99 to hello
  crash     exits nonzero after handshake
"""

import json
import sys

sys.path.insert(0, "")  # run from repo root; package already installed

from coalshap.adapters import synthetic_labels  # noqa: E402
from coalshap.volume import LabelMap, read_mcv, write_seg  # noqa: E402

LABEL_SET = (1,)


def main():
    mode = sys.argv[1] if len(sys.argv) > 1 else "echo"
    for line in sys.stdin:
        req = json.loads(line)
        if req.get("op") == "hello":
            proto = 99 if mode == "badproto" else 1
            print(json.dumps({"status": "ok", "protocol": proto}), flush=True)
            if mode == "crash":
                sys.exit(7)
            continue
        if mode == "silent":
            continue
        try:
            vol = read_mcv(req["input"])
            labels = synthetic_labels(vol.data, req["coalition"], LABEL_SET)
            write_seg(
                LabelMap(labels=labels, spacing=vol.spacing, label_set=LABEL_SET),
                req["output"],
            )
            print(json.dumps({"status": "ok"}), flush=True)
        except Exception as exc:  # noqa: BLE001
            print(json.dumps({"status": "error", "message": str(exc)}), flush=True)


if __name__ == "__main__":
    main()
