"""Black-box prediction backends behind one predict(subject, volume, coalition) facade.

Three backends:
  * store       - precomputed predictions on disk, predictions/<subject>/<bitmask>.seg
  * subprocess  - external engine speaking newline-delimited JSON over stdin/stdout
  * synthetic   - analytic models for testing, no ML dependency

Subprocess protocol (one JSON object per line, one in-flight request per process):
  -> {"op": "hello"}
  <- {"status": "ok", "protocol": 1}
  -> {"op": "predict", "subject": s, "coalition": bits, "input": path, "output": path}
  <- {"status": "ok"}  after writing a SEG1 file to `output`
  Errors come back as {"status": "error", "message": ...}.
"""

from __future__ import annotations

import hashlib
import json
import os
import queue
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AdapterFailure,
    AdapterTimeout,
    MissingPrediction,
    NonzeroExit,
    ProtocolViolation,
)
from .shapley import Coalition
from .volume import LabelMap, MultiContrastVolume, read_seg, write_mcv

PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class AdapterSpec:
    kind: str  # store | subprocess | synthetic
    model_id: str
    store_dir: str | None = None
    command: str | None = None
    max_parallel: int = 1
    timeout_s: float = 60.0
    synthetic: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("store", "subprocess", "synthetic"):
            raise ValueError(f"unknown adapter kind {self.kind!r}")
        if self.kind == "store" and not self.store_dir:
            raise ValueError("store adapter needs store_dir")
        if self.kind == "subprocess" and not self.command:
            raise ValueError("subprocess adapter needs command")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")


@dataclass(frozen=True)
class CapabilityReport:
    reachable: bool
    reason: str = ""
    max_parallel: int = 1
    protocol: int | None = None


class StoreAdapter:
    """Serves predictions frozen on disk."""

    def __init__(self, store_dir, model_id="store"):
        self.store_dir = Path(store_dir)
        self.model_id = model_id
        self.max_parallel = os.cpu_count() or 1

    def predict(self, subject_id, volume, coalition: Coalition) -> LabelMap:
        path = self.store_dir / subject_id / f"{coalition.bits}.seg"
        if not path.exists():
            raise MissingPrediction(subject_id, coalition.bits)
        return read_seg(path)

    def probe(self) -> CapabilityReport:
        if not self.store_dir.is_dir():
            return CapabilityReport(False, f"store dir not found: {self.store_dir}")
        return CapabilityReport(True, max_parallel=self.max_parallel)

    def close(self):
        pass


def synthetic_labels(
    data: np.ndarray, coalition_bits: int, label_set, ignore_channel: int | None = None
) -> np.ndarray:
    """Union-reveal rule shared with the reference external adapter.

    A channel votes label l at a voxel when its value is within 0.25 of the
    integer l and l is a declared class; the voxel takes the largest vote
    among coalition channels. Must stay bit-compatible with the adapter in
    frontend/src/synthetic.ts.
    """
    out = np.zeros(data.shape[1:], dtype=np.uint8)
    for ch in range(data.shape[0]):
        if not coalition_bits >> ch & 1:
            continue
        if ignore_channel is not None and ch == ignore_channel:
            continue
        values = data[ch]
        nearest = np.floor(values + 0.5)
        for label in sorted(label_set):
            vote = (nearest == label) & (np.abs(values - label) < 0.25)
            np.maximum(out, np.where(vote, np.uint8(label), np.uint8(0)), out=out)
    return out


class SyntheticAdapter:
    """Analytic test model; deterministic given its seed."""

    def __init__(
        self,
        label_set,
        model_kind="union_reveal",
        seed=0,
        ignore_channel=None,
        noise_rate=0.0,
        model_id="synthetic",
    ):
        if model_kind not in ("union_reveal", "noisy_union", "ignore_channel"):
            raise ValueError(f"unknown synthetic model kind {model_kind!r}")
        if model_kind == "ignore_channel" and ignore_channel is None:
            raise ValueError("ignore_channel model needs a channel index")
        self.label_set = tuple(sorted(int(l) for l in label_set))
        self.model_kind = model_kind
        self.seed = int(seed)
        self.ignore_channel = ignore_channel
        self.noise_rate = float(noise_rate)
        self.model_id = model_id
        self.max_parallel = os.cpu_count() or 1

    def predict(self, subject_id, volume: MultiContrastVolume, coalition: Coalition) -> LabelMap:
        ignore = self.ignore_channel if self.model_kind == "ignore_channel" else None
        labels = synthetic_labels(volume.data, coalition.bits, self.label_set, ignore)
        if self.model_kind == "noisy_union" and self.noise_rate > 0:
            sid = int.from_bytes(
                hashlib.sha256(subject_id.encode()).digest()[:4], "little"
            )
            rng = np.random.default_rng((self.seed, sid, coalition.bits))
            flip = rng.random(labels.shape) < self.noise_rate
            noise = rng.integers(0, len(self.label_set) + 1, size=labels.shape)
            alphabet = np.array((0,) + self.label_set, dtype=np.uint8)
            labels = np.where(flip, alphabet[noise], labels)
        return LabelMap(labels=labels, spacing=volume.spacing, label_set=self.label_set)

    def probe(self) -> CapabilityReport:
        return CapabilityReport(True, max_parallel=self.max_parallel)

    def close(self):
        pass


class _Worker:
    """One external process; a reader thread feeds lines so recv can time out."""

    def __init__(self, command, timeout_s):
        self.timeout_s = timeout_s
        self.proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self.lines = queue.Queue()
        self.reader = threading.Thread(target=self._pump, daemon=True)
        self.reader.start()

    def _pump(self):
        for line in self.proc.stdout:
            self.lines.put(line)
        self.lines.put(None)  # EOF marker

    def request(self, obj) -> dict:
        try:
            self.proc.stdin.write(json.dumps(obj) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise self._exit_error(str(exc))
        try:
            line = self.lines.get(timeout=self.timeout_s)
        except queue.Empty:
            self.kill()
            raise AdapterTimeout(
                f"no response within {self.timeout_s}s to {obj.get('op')}"
            ) from None
        if line is None:
            raise self._exit_error("adapter closed stdout")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolViolation(f"non-JSON reply: {line!r}") from exc
        if not isinstance(reply, dict) or "status" not in reply:
            raise ProtocolViolation(f"reply missing status: {reply!r}")
        return reply

    def _exit_error(self, detail):
        code = self.proc.poll()
        stderr = ""
        try:
            stderr = self.proc.stderr.read()[-500:]
        except Exception:
            pass
        if code is not None and code != 0:
            return NonzeroExit(code, stderr or detail)
        return AdapterFailure(f"adapter pipe failure: {detail}")

    def kill(self):
        if self.proc.poll() is None:
            self.proc.kill()
        self.proc.wait()


class SubprocessAdapter:
    """Process pool speaking the JSON-lines protocol; one in-flight request per process."""

    def __init__(self, command, max_parallel=1, timeout_s=60.0, model_id="subprocess"):
        self.command = command
        self.max_parallel = max_parallel
        self.timeout_s = timeout_s
        self.model_id = model_id
        self._pool = queue.Queue()
        self._workers = []
        self._lock = threading.Lock()

    def _handshake(self, worker):
        reply = worker.request({"op": "hello"})
        if reply.get("status") != "ok" or reply.get("protocol") != PROTOCOL_VERSION:
            worker.kill()
            raise ProtocolViolation(f"bad handshake reply: {reply!r}")
        return reply

    def _acquire(self):
        try:
            return self._pool.get_nowait()
        except queue.Empty:
            pass
        with self._lock:
            if len(self._workers) < self.max_parallel:
                worker = _Worker(self.command, self.timeout_s)
                self._workers.append(worker)
                self._handshake(worker)
                return worker
        return self._pool.get()

    def predict(self, subject_id, volume: MultiContrastVolume, coalition: Coalition) -> LabelMap:
        worker = self._acquire()
        try:
            with tempfile.TemporaryDirectory(prefix="coalshap-adapter-") as tmp:
                in_path = os.path.join(tmp, "input.mcv")
                out_path = os.path.join(tmp, "output.seg")
                write_mcv(volume, in_path)
                reply = worker.request(
                    {
                        "op": "predict",
                        "subject": subject_id,
                        "coalition": coalition.bits,
                        "input": in_path,
                        "output": out_path,
                    }
                )
                if reply.get("status") != "ok":
                    raise AdapterFailure(
                        f"adapter error for {subject_id}/{coalition.bits}: "
                        f"{reply.get('message', reply)}"
                    )
                if not os.path.exists(out_path):
                    raise ProtocolViolation("adapter replied ok without writing output")
                return read_seg(out_path)
        except Exception:
            if worker.proc.poll() is not None:
                with self._lock:
                    self._workers.remove(worker)
                worker = None
            raise
        finally:
            if worker is not None:
                self._pool.put(worker)

    def probe(self) -> CapabilityReport:
        try:
            worker = _Worker(self.command, self.timeout_s)
        except OSError as exc:
            return CapabilityReport(False, f"cannot launch {self.command!r}: {exc}")
        try:
            reply = self._handshake(worker)
            return CapabilityReport(
                True, max_parallel=self.max_parallel, protocol=reply["protocol"]
            )
        except AdapterFailure as exc:
            return CapabilityReport(False, str(exc))
        finally:
            worker.kill()

    def close(self):
        with self._lock:
            for worker in self._workers:
                try:
                    worker.proc.stdin.close()
                except OSError:
                    pass
                worker.kill()
            self._workers.clear()


class CountingAdapter:
    """Wraps an adapter and counts predict calls; used by memoization audits."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    @property
    def model_id(self):
        return self.inner.model_id

    def predict(self, subject_id, volume, coalition):
        self.calls += 1
        return self.inner.predict(subject_id, volume, coalition)

    def probe(self):
        return self.inner.probe()

    def close(self):
        self.inner.close()


def build_adapter(spec: AdapterSpec, label_set):
    if spec.kind == "store":
        return StoreAdapter(spec.store_dir, model_id=spec.model_id)
    if spec.kind == "subprocess":
        return SubprocessAdapter(
            spec.command,
            max_parallel=spec.max_parallel,
            timeout_s=spec.timeout_s,
            model_id=spec.model_id,
        )
    syn = dict(spec.synthetic)
    return SyntheticAdapter(
        label_set,
        model_kind=syn.get("model_kind", "union_reveal"),
        seed=syn.get("seed", 0),
        ignore_channel=syn.get("ignore_channel"),
        noise_rate=syn.get("noise_rate", 0.0),
        model_id=spec.model_id,
    )


def probe(spec: AdapterSpec, label_set=(1,)) -> CapabilityReport:
    """Reachability report for an adapter spec; never raises."""
    try:
        adapter = build_adapter(spec, label_set)
    except Exception as exc:  # noqa: BLE001 - probe reports, never throws
        return CapabilityReport(False, str(exc))
    try:
        return adapter.probe()
    except Exception as exc:  # noqa: BLE001
        return CapabilityReport(False, str(exc))
    finally:
        adapter.close()
