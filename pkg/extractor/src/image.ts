/**
 * Image decoding (PNG and binary PPM) and resampling.
 *
 * PNG support covers the common still-image cases: 8-bit depth, color
 * types 0 (gray), 2 (RGB), 4 (gray+alpha) and 6 (RGBA), non-interlaced.
 * Alpha is dropped. Everything is self-contained on top of node:zlib.
 */

import { inflateSync } from "node:zlib";
import { readFileSync } from "node:fs";

import { ImageDecodeFailure } from "./errors.js";

export interface RgbImage {
  width: number;
  height: number;
  /** Row-major RGB triples in [0, 1]. */
  data: Float64Array;
}

export function decodeImageFile(path: string): RgbImage {
  let raw: Buffer;
  try {
    raw = readFileSync(path);
  } catch (err) {
    throw new ImageDecodeFailure(`cannot read ${path}: ${(err as Error).message}`);
  }
  if (raw.length >= 8 && raw.readUInt32BE(0) === 0x89504e47) return decodePng(raw, path);
  if (raw.length >= 2 && raw[0] === 0x50 && (raw[1] === 0x36 || raw[1] === 0x35)) {
    return decodePpm(raw, path);
  }
  throw new ImageDecodeFailure(`${path}: not a PNG or binary PPM/PGM file`);
}

function decodePpm(raw: Buffer, path: string): RgbImage {
  // P6 (RGB) or P5 (gray), binary, with whitespace/comment-separated header.
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < raw.length && /\s/.test(String.fromCharCode(raw[pos]))) pos++;
    if (pos < raw.length && raw[pos] === 0x23) {
      while (pos < raw.length && raw[pos] !== 0x0a) pos++;
      continue;
    }
    let start = pos;
    while (pos < raw.length && !/\s/.test(String.fromCharCode(raw[pos]))) pos++;
    const token = raw.subarray(start, pos).toString("ascii");
    const value = Number(token);
    if (!Number.isInteger(value) || value <= 0) {
      throw new ImageDecodeFailure(`${path}: bad header token ${JSON.stringify(token)}`);
    }
    fields.push(value);
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval > 65535) throw new ImageDecodeFailure(`${path}: maxval ${maxval} out of range`);
  const channels = raw[1] === 0x36 ? 3 : 1;
  const bytesPer = maxval > 255 ? 2 : 1;
  const need = width * height * channels * bytesPer;
  if (raw.length - pos < need) {
    throw new ImageDecodeFailure(`${path}: pixel data truncated (${raw.length - pos} of ${need})`);
  }
  const data = new Float64Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    for (let c = 0; c < 3; c++) {
      const src = pos + (i * channels + Math.min(c, channels - 1)) * bytesPer;
      const v = bytesPer === 2 ? raw.readUInt16BE(src) : raw[src];
      data[i * 3 + c] = v / maxval;
    }
  }
  return { width, height, data };
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

function decodePng(raw: Buffer, path: string): RgbImage {
  let pos = 8;
  let width = 0;
  let height = 0;
  let bitDepth = 0;
  let colorType = 0;
  const idat: Buffer[] = [];
  while (pos + 8 <= raw.length) {
    const length = raw.readUInt32BE(pos);
    const kind = raw.subarray(pos + 4, pos + 8).toString("ascii");
    const body = raw.subarray(pos + 8, pos + 8 + length);
    if (kind === "IHDR") {
      width = body.readUInt32BE(0);
      height = body.readUInt32BE(4);
      bitDepth = body[8];
      colorType = body[9];
      if (body[12] !== 0) throw new ImageDecodeFailure(`${path}: interlaced PNG unsupported`);
      if (bitDepth !== 8) throw new ImageDecodeFailure(`${path}: only 8-bit PNG supported`);
      if (![0, 2, 4, 6].includes(colorType)) {
        throw new ImageDecodeFailure(`${path}: palette PNG unsupported`);
      }
    } else if (kind === "IDAT") {
      idat.push(body);
    } else if (kind === "IEND") {
      break;
    }
    pos += 12 + length;
  }
  if (!width || !height || idat.length === 0) {
    throw new ImageDecodeFailure(`${path}: missing IHDR or IDAT`);
  }
  let decompressed: Buffer;
  try {
    decompressed = inflateSync(Buffer.concat(idat));
  } catch (err) {
    throw new ImageDecodeFailure(`${path}: bad IDAT stream: ${(err as Error).message}`);
  }
  const channels = { 0: 1, 2: 3, 4: 2, 6: 4 }[colorType as 0 | 2 | 4 | 6];
  const stride = width * channels;
  if (decompressed.length < height * (stride + 1)) {
    throw new ImageDecodeFailure(`${path}: scanline data truncated`);
  }
  const pixels = new Uint8Array(height * stride);
  for (let y = 0; y < height; y++) {
    const filter = decompressed[y * (stride + 1)];
    const row = decompressed.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const out = pixels.subarray(y * stride, (y + 1) * stride);
    const prev = y > 0 ? pixels.subarray((y - 1) * stride, y * stride) : null;
    for (let x = 0; x < stride; x++) {
      const a = x >= channels ? out[x - channels] : 0;
      const b = prev ? prev[x] : 0;
      const c = prev && x >= channels ? prev[x - channels] : 0;
      let v = row[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) >> 1; break;
        case 4: v += paeth(a, b, c); break;
        default:
          throw new ImageDecodeFailure(`${path}: unknown filter ${filter} on row ${y}`);
      }
      out[x] = v & 0xff;
    }
  }
  const data = new Float64Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    const base = i * channels;
    if (channels >= 3) {
      data[i * 3] = pixels[base] / 255;
      data[i * 3 + 1] = pixels[base + 1] / 255;
      data[i * 3 + 2] = pixels[base + 2] / 255;
    } else {
      const g = pixels[base] / 255;
      data[i * 3] = data[i * 3 + 1] = data[i * 3 + 2] = g;
    }
  }
  return { width, height, data };
}

export function resizeBilinear(img: RgbImage, outH: number, outW: number): RgbImage {
  const data = new Float64Array(outH * outW * 3);
  const sy = img.height / outH;
  const sx = img.width / outW;
  for (let y = 0; y < outH; y++) {
    const fy = Math.min((y + 0.5) * sy - 0.5, img.height - 1);
    const y0 = Math.max(0, Math.floor(fy));
    const y1 = Math.min(img.height - 1, y0 + 1);
    const wy = Math.max(0, fy - y0);
    for (let x = 0; x < outW; x++) {
      const fx = Math.min((x + 0.5) * sx - 0.5, img.width - 1);
      const x0 = Math.max(0, Math.floor(fx));
      const x1 = Math.min(img.width - 1, x0 + 1);
      const wx = Math.max(0, fx - x0);
      for (let c = 0; c < 3; c++) {
        const p00 = img.data[(y0 * img.width + x0) * 3 + c];
        const p01 = img.data[(y0 * img.width + x1) * 3 + c];
        const p10 = img.data[(y1 * img.width + x0) * 3 + c];
        const p11 = img.data[(y1 * img.width + x1) * 3 + c];
        data[(y * outW + x) * 3 + c] =
          (1 - wy) * ((1 - wx) * p00 + wx * p01) + wy * ((1 - wx) * p10 + wx * p11);
      }
    }
  }
  return { width: outW, height: outH, data };
}

/** Separable box blur, applied twice to approximate a Gaussian. */
export function boxBlur(img: RgbImage, radius: number): RgbImage {
  if (radius <= 0) return img;
  const pass = (src: Float64Array, horizontal: boolean): Float64Array => {
    const out = new Float64Array(src.length);
    const { width, height } = img;
    const len = horizontal ? width : height;
    const lines = horizontal ? height : width;
    for (let line = 0; line < lines; line++) {
      for (let c = 0; c < 3; c++) {
        let acc = 0;
        const at = (i: number) =>
          horizontal ? (line * width + i) * 3 + c : (i * width + line) * 3 + c;
        for (let i = -radius; i <= radius; i++) acc += src[at(Math.min(len - 1, Math.max(0, i)))];
        for (let i = 0; i < len; i++) {
          out[at(i)] = acc / (2 * radius + 1);
          const drop = Math.max(0, i - radius);
          const add = Math.min(len - 1, i + radius + 1);
          acc += src[at(add)] - src[at(drop)];
        }
      }
    }
    return out;
  };
  let data = pass(img.data, true);
  data = pass(data, false);
  const once = { width: img.width, height: img.height, data };
  data = pass(once.data, true);
  data = pass(data, false);
  return { width: img.width, height: img.height, data };
}
