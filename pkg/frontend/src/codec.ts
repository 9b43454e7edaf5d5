/**
 * MCV1 / SEG1 binary codecs, bit-compatible with the Python toolkit.
 *
 * MCV1: "MCV1", version u8, C/D/H/W u32 LE, spacing 3 x f32 LE,
 *       C x (u8 length + UTF-8 name), payload C*D*H*W f32 LE.
 * SEG1: "SEG1", version u8, D/H/W u32 LE, spacing 3 x f32 LE,
 *       u8 label count + that many u8 class ids, payload D*H*W u8.
 */

import { readFileSync, writeFileSync } from "node:fs";

export const FORMAT_VERSION = 1;
const MCV_MAGIC = "MCV1";
const SEG_MAGIC = "SEG1";

export type CodecErrorKind =
  | "magic_mismatch"
  | "bad_header"
  | "truncated_payload"
  | "illegal_label";

export class CodecError extends Error {
  constructor(
    public readonly kind: CodecErrorKind,
    message: string,
  ) {
    super(message);
    this.name = "CodecError";
  }
}

export interface MultiContrastVolume {
  /** Flat C-order payload of shape [C, D, H, W]. */
  data: Float32Array;
  dims: [number, number, number, number];
  spacing: [number, number, number];
  channelNames: string[];
}

export interface LabelMap {
  /** Flat C-order payload of shape [D, H, W]. */
  labels: Uint8Array;
  dims: [number, number, number];
  spacing: [number, number, number];
  labelSet: number[];
}

class Cursor {
  pos = 0;
  constructor(
    private readonly buf: Buffer,
    private readonly source: string,
  ) {}

  take(n: number, what: string): Buffer {
    if (this.pos + n > this.buf.length) {
      throw new CodecError(
        "truncated_payload",
        `${this.source}: expected ${n} bytes of ${what}, got ${this.buf.length - this.pos}`,
      );
    }
    const out = this.buf.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }

  u8(what: string): number {
    return this.take(1, what).readUInt8(0);
  }

  u32(what: string): number {
    return this.take(4, what).readUInt32LE(0);
  }

  f32(what: string): number {
    return this.take(4, what).readFloatLE(0);
  }

  remaining(): number {
    return this.buf.length - this.pos;
  }
}

function checkSpacing(spacing: [number, number, number], source: string): void {
  if (spacing.some((s) => !Number.isFinite(s) || s <= 0)) {
    throw new CodecError("bad_header", `${source}: bad spacing ${JSON.stringify(spacing)}`);
  }
}

function checkDims(dims: number[], source: string): void {
  if (dims.some((d) => d < 1)) {
    throw new CodecError(
      "bad_header",
      `${source}: nonpositive dimension in ${JSON.stringify(dims)}`,
    );
  }
}

export function decodeMcv(buf: Buffer, source = "<buffer>"): MultiContrastVolume {
  const magic = buf.subarray(0, 4).toString("latin1");
  if (magic !== MCV_MAGIC) {
    throw new CodecError("magic_mismatch", `${source}: expected ${MCV_MAGIC}, got ${magic}`);
  }
  const cur = new Cursor(buf, source);
  cur.take(4, "magic");
  const version = cur.u8("version");
  if (version !== FORMAT_VERSION) {
    throw new CodecError("bad_header", `${source}: unsupported MCV version ${version}`);
  }
  const c = cur.u32("C");
  const d = cur.u32("D");
  const h = cur.u32("H");
  const w = cur.u32("W");
  checkDims([c, d, h, w], source);
  const spacing: [number, number, number] = [
    cur.f32("spacing"),
    cur.f32("spacing"),
    cur.f32("spacing"),
  ];
  checkSpacing(spacing, source);
  const channelNames: string[] = [];
  for (let i = 0; i < c; i++) {
    const len = cur.u8("name length");
    channelNames.push(cur.take(len, "channel name").toString("utf-8"));
  }
  const payloadBytes = c * d * h * w * 4;
  if (cur.remaining() !== payloadBytes) {
    throw new CodecError(
      "truncated_payload",
      `${source}: header declares ${payloadBytes} payload bytes, found ${cur.remaining()}`,
    );
  }
  const raw = cur.take(payloadBytes, "payload");
  // copy into an aligned Float32Array (subarray offsets need not be 4-aligned)
  const aligned = Buffer.alloc(payloadBytes);
  raw.copy(aligned);
  const data = new Float32Array(aligned.buffer, aligned.byteOffset, c * d * h * w);
  return { data, dims: [c, d, h, w], spacing, channelNames };
}

export function readMcv(path: string): MultiContrastVolume {
  return decodeMcv(readFileSync(path), path);
}

export function encodeMcv(volume: MultiContrastVolume): Buffer {
  const [c, d, h, w] = volume.dims;
  if (volume.data.length !== c * d * h * w || volume.channelNames.length !== c) {
    throw new CodecError("bad_header", "volume payload/name count does not match dims");
  }
  checkDims(volume.dims, "<volume>");
  checkSpacing(volume.spacing, "<volume>");
  const names = volume.channelNames.map((n) => Buffer.from(n, "utf-8"));
  for (const n of names) {
    if (n.length > 255) {
      throw new CodecError("bad_header", `channel name too long: ${n.length} bytes`);
    }
  }
  const header = Buffer.alloc(4 + 1 + 4 * 4 + 3 * 4);
  header.write(MCV_MAGIC, 0, "latin1");
  header.writeUInt8(FORMAT_VERSION, 4);
  header.writeUInt32LE(c, 5);
  header.writeUInt32LE(d, 9);
  header.writeUInt32LE(h, 13);
  header.writeUInt32LE(w, 17);
  header.writeFloatLE(volume.spacing[0], 21);
  header.writeFloatLE(volume.spacing[1], 25);
  header.writeFloatLE(volume.spacing[2], 29);
  const nameChunks = names.flatMap((n) => [Buffer.from([n.length]), n]);
  const payload = Buffer.from(
    volume.data.buffer,
    volume.data.byteOffset,
    volume.data.byteLength,
  );
  return Buffer.concat([header, ...nameChunks, payload]);
}

export function writeMcv(volume: MultiContrastVolume, path: string): void {
  writeFileSync(path, encodeMcv(volume));
}

export function decodeSeg(buf: Buffer, source = "<buffer>"): LabelMap {
  const magic = buf.subarray(0, 4).toString("latin1");
  if (magic !== SEG_MAGIC) {
    throw new CodecError("magic_mismatch", `${source}: expected ${SEG_MAGIC}, got ${magic}`);
  }
  const cur = new Cursor(buf, source);
  cur.take(4, "magic");
  const version = cur.u8("version");
  if (version !== FORMAT_VERSION) {
    throw new CodecError("bad_header", `${source}: unsupported SEG version ${version}`);
  }
  const d = cur.u32("D");
  const h = cur.u32("H");
  const w = cur.u32("W");
  checkDims([d, h, w], source);
  const spacing: [number, number, number] = [
    cur.f32("spacing"),
    cur.f32("spacing"),
    cur.f32("spacing"),
  ];
  checkSpacing(spacing, source);
  const nLabels = cur.u8("label count");
  const labelSet = Array.from(cur.take(nLabels, "label set"));
  const payloadBytes = d * h * w;
  if (cur.remaining() !== payloadBytes) {
    throw new CodecError(
      "truncated_payload",
      `${source}: header declares ${payloadBytes} payload bytes, found ${cur.remaining()}`,
    );
  }
  const labels = Uint8Array.from(cur.take(payloadBytes, "payload"));
  const declared = new Set([0, ...labelSet]);
  for (const v of labels) {
    if (!declared.has(v)) {
      throw new CodecError(
        "illegal_label",
        `${source}: voxel value ${v} outside declared label set ${JSON.stringify(labelSet)}`,
      );
    }
  }
  return { labels, dims: [d, h, w], spacing, labelSet: [...labelSet].sort((a, b) => a - b) };
}

export function readSeg(path: string): LabelMap {
  return decodeSeg(readFileSync(path), path);
}

export function encodeSeg(seg: LabelMap): Buffer {
  const [d, h, w] = seg.dims;
  if (seg.labels.length !== d * h * w) {
    throw new CodecError("bad_header", "label payload does not match dims");
  }
  checkDims(seg.dims, "<seg>");
  checkSpacing(seg.spacing, "<seg>");
  const labelSet = [...seg.labelSet].sort((a, b) => a - b);
  if (labelSet.some((l) => l < 1 || l > 255)) {
    throw new CodecError("bad_header", `label ids must be in 1..255: ${JSON.stringify(labelSet)}`);
  }
  const header = Buffer.alloc(4 + 1 + 3 * 4 + 3 * 4);
  header.write(SEG_MAGIC, 0, "latin1");
  header.writeUInt8(FORMAT_VERSION, 4);
  header.writeUInt32LE(d, 5);
  header.writeUInt32LE(h, 9);
  header.writeUInt32LE(w, 13);
  header.writeFloatLE(seg.spacing[0], 17);
  header.writeFloatLE(seg.spacing[1], 21);
  header.writeFloatLE(seg.spacing[2], 25);
  return Buffer.concat([
    header,
    Buffer.from([labelSet.length]),
    Buffer.from(labelSet),
    Buffer.from(seg.labels.buffer, seg.labels.byteOffset, seg.labels.byteLength),
  ]);
}

export function writeSeg(seg: LabelMap, path: string): void {
  writeFileSync(path, encodeSeg(seg));
}
