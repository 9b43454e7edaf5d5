"""Volumetric containers and the MCV1/SEG1 on-disk formats.

Both formats are little-endian and bit-exact:

MCV1 file layout
    magic   b"MCV1"
    version u8 (currently 1)
    C, D, H, W          4 x u32
    spacing (sd,sh,sw)  3 x f32, millimeters per voxel
    channel names       C entries of (u8 length, UTF-8 bytes)
    payload             C*D*H*W f32, C-order

SEG1 file layout
    magic   b"SEG1"
    version u8 (currently 1)
    D, H, W             3 x u32
    spacing (sd,sh,sw)  3 x f32
    label set           u8 count, then that many u8 class ids
    payload             D*H*W u8, C-order
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadHeader,
    IllegalLabel,
    IoFailure,
    MagicMismatch,
    TruncatedPayload,
    UnknownLabel,
)

MCV_MAGIC = b"MCV1"
SEG_MAGIC = b"SEG1"
FORMAT_VERSION = 1


def _check_spacing(spacing):
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise BadHeader(f"spacing must be three positive finite values, got {spacing}")
    return spacing


@dataclass(frozen=True)
class MultiContrastVolume:
    """C-channel 3-D scalar field with voxel spacing in millimeters."""

    data: np.ndarray  # float32, shape (C, D, H, W)
    spacing: tuple  # (sd, sh, sw) mm
    channel_names: tuple

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 4 or data.shape[0] < 1:
            raise BadHeader(f"expected (C, D, H, W) data, got shape {data.shape}")
        if min(data.shape) < 1:
            raise BadHeader(f"all dims must be >= 1, got shape {data.shape}")
        names = tuple(str(n) for n in self.channel_names)
        if len(names) != data.shape[0]:
            raise BadHeader(
                f"{len(names)} channel names for {data.shape[0]} channels"
            )
        if len(set(names)) != len(names):
            raise BadHeader(f"channel names must be unique, got {names}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        object.__setattr__(self, "channel_names", names)
        self.data.setflags(write=False)

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def dims(self):
        return self.data.shape[1:]


@dataclass(frozen=True)
class LabelMap:
    """3-D integer segmentation over disjoint classes; 0 is background."""

    labels: np.ndarray  # uint8, shape (D, H, W)
    spacing: tuple
    label_set: tuple  # declared nonzero class ids

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if labels.ndim != 3 or min(labels.shape) < 1:
            raise BadHeader(f"expected (D, H, W) labels, got shape {labels.shape}")
        label_set = tuple(sorted(int(l) for l in self.label_set))
        if any(l < 1 or l > 255 for l in label_set) or len(set(label_set)) != len(label_set):
            raise BadHeader(f"label_set must be unique ids in 1..255, got {label_set}")
        present = set(np.unique(labels).tolist())
        illegal = present - {0} - set(label_set)
        if illegal:
            raise IllegalLabel(
                f"voxel values {sorted(illegal)} outside declared label set {label_set}"
            )
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        object.__setattr__(self, "label_set", label_set)
        self.labels.setflags(write=False)

    @property
    def dims(self):
        return self.labels.shape


@dataclass(frozen=True)
class BinaryMask:
    """Per-label boolean view of a LabelMap, spacing-aware."""

    bits: np.ndarray  # bool, shape (D, H, W)
    spacing: tuple

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool)
        if bits.ndim != 3 or min(bits.shape) < 1:
            raise BadHeader(f"expected (D, H, W) bits, got shape {bits.shape}")
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        self.bits.setflags(write=False)

    @property
    def dims(self):
        return self.bits.shape


def one_hot(labelmap: LabelMap, label: int) -> BinaryMask:
    """Boolean mask of voxels equal to ``label``; masks for distinct labels are disjoint."""
    if int(label) not in labelmap.label_set:
        raise UnknownLabel(f"label {label} not in declared set {labelmap.label_set}")
    return BinaryMask(bits=labelmap.labels == int(label), spacing=labelmap.spacing)


# --- binary IO -------------------------------------------------------------

def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedPayload(f"expected {n} bytes of {what}, got {len(buf)}")
    return buf


def write_mcv(volume: MultiContrastVolume, path) -> None:
    c, d, h, w = volume.data.shape
    try:
        with open(path, "wb") as fh:
            fh.write(MCV_MAGIC)
            fh.write(struct.pack("<B4I3f", FORMAT_VERSION, c, d, h, w, *volume.spacing))
            for name in volume.channel_names:
                enc = name.encode("utf-8")
                if len(enc) > 255:
                    raise BadHeader(f"channel name too long: {name!r}")
                fh.write(struct.pack("<B", len(enc)))
                fh.write(enc)
            fh.write(volume.data.astype("<f4", copy=False).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_mcv(path) -> MultiContrastVolume:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != MCV_MAGIC:
                raise MagicMismatch(f"{path}: expected {MCV_MAGIC!r}, got {magic!r}")
            version, c, d, h, w, sd, sh, sw = struct.unpack(
                "<B4I3f", _read_exact(fh, struct.calcsize("<B4I3f"), "MCV header")
            )
            if version != FORMAT_VERSION:
                raise BadHeader(f"{path}: unsupported MCV version {version}")
            if min(c, d, h, w) < 1:
                raise BadHeader(f"{path}: nonpositive dimension in {(c, d, h, w)}")
            if min(sd, sh, sw) <= 0 or not all(np.isfinite((sd, sh, sw))):
                raise BadHeader(f"{path}: bad spacing {(sd, sh, sw)}")
            names = []
            for _ in range(c):
                (nlen,) = struct.unpack("<B", _read_exact(fh, 1, "name length"))
                names.append(_read_exact(fh, nlen, "channel name").decode("utf-8"))
            payload = fh.read(c * d * h * w * 4 + 1)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(payload) != c * d * h * w * 4:
        raise TruncatedPayload(
            f"{path}: header declares {c * d * h * w * 4} payload bytes, found {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(c, d, h, w)
    return MultiContrastVolume(data=data, spacing=(sd, sh, sw), channel_names=names)


def write_seg(labelmap: LabelMap, path) -> None:
    d, h, w = labelmap.labels.shape
    try:
        with open(path, "wb") as fh:
            fh.write(SEG_MAGIC)
            fh.write(struct.pack("<B3I3f", FORMAT_VERSION, d, h, w, *labelmap.spacing))
            fh.write(struct.pack("<B", len(labelmap.label_set)))
            fh.write(bytes(labelmap.label_set))
            fh.write(labelmap.labels.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_seg(path) -> LabelMap:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != SEG_MAGIC:
                raise MagicMismatch(f"{path}: expected {SEG_MAGIC!r}, got {magic!r}")
            version, d, h, w, sd, sh, sw = struct.unpack(
                "<B3I3f", _read_exact(fh, struct.calcsize("<B3I3f"), "SEG header")
            )
            if version != FORMAT_VERSION:
                raise BadHeader(f"{path}: unsupported SEG version {version}")
            if min(d, h, w) < 1:
                raise BadHeader(f"{path}: nonpositive dimension in {(d, h, w)}")
            if min(sd, sh, sw) <= 0 or not all(np.isfinite((sd, sh, sw))):
                raise BadHeader(f"{path}: bad spacing {(sd, sh, sw)}")
            (nlabels,) = struct.unpack("<B", _read_exact(fh, 1, "label count"))
            label_set = list(_read_exact(fh, nlabels, "label set"))
            payload = fh.read(d * h * w + 1)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(payload) != d * h * w:
        raise TruncatedPayload(
            f"{path}: header declares {d * h * w} payload bytes, found {len(payload)}"
        )
    labels = np.frombuffer(payload, dtype=np.uint8).reshape(d, h, w)
    return LabelMap(labels=labels, spacing=(sd, sh, sw), label_set=label_set)
