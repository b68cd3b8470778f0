/**
 * NRVF bundle writer (and a reader used by the tests).
 *
 * Layout, little-endian throughout:
 *   "NRVF" | u32 version | u32 grid_h | u32 grid_w | u32 dim |
 *   u32 head_count | u32 class_count | u32 label_mode |
 *   class-name table (u32 length + UTF-8, per class) |
 *   per head: u32 layer_index, u32 head_index, f32 Q (n*dim), f32 K (n*dim) |
 *   label block (mode 1: f32 token queries n*dim + f32 prompt keys k*dim;
 *                mode 2: f32 probabilities n*k) |
 *   u32 CRC-32 of everything before it
 */

import { crc32 } from "./crc32.js";
import { ShapeMismatch } from "./errors.js";
import type { HeadTensor } from "./features.js";

export const MAGIC = "NRVF";
export const VERSION = 1;
export const LABEL_CROSS_ATTN = 1;
export const LABEL_PROBS = 2;

export interface BundlePayload {
  gridH: number;
  gridW: number;
  dim: number;
  heads: HeadTensor[];
  classNames: string[];
  labelMode: number;
  tokenQueries?: Float64Array;
  promptKeys?: Float64Array;
  probs?: Float64Array;
}

function f32Bytes(values: Float64Array, count: number, what: string): Buffer {
  if (values.length !== count) {
    throw new ShapeMismatch(`${what}: expected ${count} values, got ${values.length}`);
  }
  const buf = Buffer.alloc(count * 4);
  for (let i = 0; i < count; i++) buf.writeFloatLE(Math.fround(values[i]), i * 4);
  return buf;
}

export function encodeBundle(p: BundlePayload): Buffer {
  const n = p.gridH * p.gridW;
  const k = p.classNames.length;
  if (p.gridH < 2 || p.gridW < 2) throw new ShapeMismatch("grid must be at least 2x2");
  if (k < 1) throw new ShapeMismatch("at least one class name required");
  if (p.heads.length < 1) throw new ShapeMismatch("at least one head required");
  const parts: Buffer[] = [];
  const header = Buffer.alloc(32);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt32LE(p.gridH, 8);
  header.writeUInt32LE(p.gridW, 12);
  header.writeUInt32LE(p.dim, 16);
  header.writeUInt32LE(p.heads.length, 20);
  header.writeUInt32LE(k, 24);
  header.writeUInt32LE(p.labelMode, 28);
  parts.push(header);
  for (const name of p.classNames) {
    const utf8 = Buffer.from(name, "utf-8");
    const len = Buffer.alloc(4);
    len.writeUInt32LE(utf8.length, 0);
    parts.push(len, utf8);
  }
  for (const head of p.heads) {
    const idx = Buffer.alloc(8);
    idx.writeUInt32LE(head.layerIndex, 0);
    idx.writeUInt32LE(head.headIndex, 4);
    parts.push(idx);
    parts.push(f32Bytes(head.queries, n * p.dim, `head ${head.layerIndex}/${head.headIndex} Q`));
    parts.push(f32Bytes(head.keys, n * p.dim, `head ${head.layerIndex}/${head.headIndex} K`));
  }
  if (p.labelMode === LABEL_CROSS_ATTN) {
    if (!p.tokenQueries || !p.promptKeys) {
      throw new ShapeMismatch("cross-attention mode needs token queries and prompt keys");
    }
    parts.push(f32Bytes(p.tokenQueries, n * p.dim, "token queries"));
    parts.push(f32Bytes(p.promptKeys, k * p.dim, "prompt keys"));
  } else if (p.labelMode === LABEL_PROBS) {
    if (!p.probs) throw new ShapeMismatch("probs mode needs a probability matrix");
    parts.push(f32Bytes(p.probs, n * k, "label probabilities"));
  } else {
    throw new ShapeMismatch(`unknown label mode ${p.labelMode}`);
  }
  const payload = Buffer.concat(parts);
  const trailer = Buffer.alloc(4);
  trailer.writeUInt32LE(crc32(payload), 0);
  return Buffer.concat([payload, trailer]);
}

/** Minimal reader for round-trip tests; throws on any inconsistency. */
export function decodeBundle(data: Buffer): BundlePayload {
  if (data.length < 36) throw new ShapeMismatch("file shorter than header plus checksum");
  if (data.subarray(0, 4).toString("ascii") !== MAGIC) throw new ShapeMismatch("bad magic");
  const stored = data.readUInt32LE(data.length - 4);
  if (stored !== crc32(data.subarray(0, data.length - 4))) {
    throw new ShapeMismatch("checksum mismatch");
  }
  const version = data.readUInt32LE(4);
  if (version !== VERSION) throw new ShapeMismatch(`unsupported version ${version}`);
  const gridH = data.readUInt32LE(8);
  const gridW = data.readUInt32LE(12);
  const dim = data.readUInt32LE(16);
  const headCount = data.readUInt32LE(20);
  const k = data.readUInt32LE(24);
  const labelMode = data.readUInt32LE(28);
  const n = gridH * gridW;
  let pos = 32;
  const classNames: string[] = [];
  for (let i = 0; i < k; i++) {
    const len = data.readUInt32LE(pos);
    pos += 4;
    classNames.push(data.subarray(pos, pos + len).toString("utf-8"));
    pos += len;
  }
  const readF32 = (count: number): Float64Array => {
    const out = new Float64Array(count);
    for (let i = 0; i < count; i++) out[i] = data.readFloatLE(pos + i * 4);
    pos += count * 4;
    return out;
  };
  const heads: HeadTensor[] = [];
  for (let i = 0; i < headCount; i++) {
    const layerIndex = data.readUInt32LE(pos);
    const headIndex = data.readUInt32LE(pos + 4);
    pos += 8;
    heads.push({ layerIndex, headIndex, queries: readF32(n * dim), keys: readF32(n * dim) });
  }
  const payload: BundlePayload = { gridH, gridW, dim, heads, classNames, labelMode };
  if (labelMode === LABEL_CROSS_ATTN) {
    payload.tokenQueries = readF32(n * dim);
    payload.promptKeys = readF32(k * dim);
  } else {
    payload.probs = readF32(n * k);
  }
  if (pos !== data.length - 4) throw new ShapeMismatch("trailing bytes before checksum");
  return payload;
}
