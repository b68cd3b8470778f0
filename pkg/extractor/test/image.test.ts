import { deflateSync } from "node:zlib";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { crc32 } from "../src/crc32.js";
import { ImageDecodeFailure } from "../src/errors.js";
import { boxBlur, decodeImageFile, resizeBilinear } from "../src/image.js";

const dir = mkdtempSync(join(tmpdir(), "img-"));

function writePpm(name: string, w: number, h: number, pixels: number[]): string {
  const path = join(dir, name);
  writeFileSync(path, Buffer.concat([
    Buffer.from(`P6\n${w} ${h}\n255\n`, "ascii"),
    Buffer.from(pixels),
  ]));
  return path;
}

function pngChunk(kind: string, body: Buffer): Buffer {
  const len = Buffer.alloc(4);
  len.writeUInt32BE(body.length, 0);
  const tagged = Buffer.concat([Buffer.from(kind, "ascii"), body]);
  const crc = Buffer.alloc(4);
  crc.writeUInt32BE(crc32(tagged), 0);
  return Buffer.concat([len, tagged, crc]);
}

function writePng(name: string, w: number, h: number, rgb: number[], filter = 0): string {
  const ihdr = Buffer.alloc(13);
  ihdr.writeUInt32BE(w, 0);
  ihdr.writeUInt32BE(h, 4);
  ihdr[8] = 8; // bit depth
  ihdr[9] = 2; // RGB
  const rows: Buffer[] = [];
  for (let y = 0; y < h; y++) {
    rows.push(Buffer.from([filter]));
    rows.push(Buffer.from(rgb.slice(y * w * 3, (y + 1) * w * 3)));
  }
  const png = Buffer.concat([
    Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]),
    pngChunk("IHDR", ihdr),
    pngChunk("IDAT", deflateSync(Buffer.concat(rows))),
    pngChunk("IEND", Buffer.alloc(0)),
  ]);
  const path = join(dir, name);
  writeFileSync(path, png);
  return path;
}

describe("ppm decode", () => {
  it("reads a 2x2 color image", () => {
    const img = decodeImageFile(writePpm("a.ppm", 2, 2, [
      255, 0, 0, 0, 255, 0,
      0, 0, 255, 255, 255, 255,
    ]));
    expect(img.width).toBe(2);
    expect(img.height).toBe(2);
    expect(img.data[0]).toBeCloseTo(1.0, 12);
    expect(img.data[4]).toBeCloseTo(1.0, 12);
    expect(Array.from(img.data.slice(9))).toEqual([1, 1, 1]);
  });

  it("rejects truncated pixel data", () => {
    expect(() => decodeImageFile(writePpm("b.ppm", 4, 4, [1, 2, 3]))).toThrow(
      ImageDecodeFailure,
    );
  });
});

describe("png decode", () => {
  it("round-trips filter-0 rows", () => {
    const rgb = [255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30];
    const img = decodeImageFile(writePng("c.png", 2, 2, rgb));
    const back = Array.from(img.data.map((v) => Math.round(v * 255)));
    expect(back).toEqual(rgb);
  });

  it("round-trips sub-filtered rows", () => {
    const rgb = [10, 20, 30, 15, 25, 35, 50, 60, 70, 55, 65, 75];
    // encode filter type 1 by hand: each byte stores raw[x] - raw[x - 3]
    const encoded: number[] = [];
    for (let y = 0; y < 2; y++) {
      for (let x = 0; x < 6; x++) {
        const raw = rgb[y * 6 + x];
        const left = x >= 3 ? rgb[y * 6 + x - 3] : 0;
        encoded.push((raw - left) & 0xff);
      }
    }
    const img = decodeImageFile(writePng("d.png", 2, 2, encoded, 1));
    const back = Array.from(img.data.map((v) => Math.round(v * 255)));
    expect(back).toEqual(rgb);
  });

  it("decodes the bundled real photograph", () => {
    const img = decodeImageFile(new URL("../testdata/photo.png", import.meta.url).pathname);
    expect(img.width).toBe(451);
    expect(img.height).toBe(300);
    let mean = 0;
    for (const v of img.data) mean += v;
    mean /= img.data.length;
    expect(mean).toBeGreaterThan(0.2); // a photo, not a black frame
    expect(mean).toBeLessThan(0.9);
  });

  it("rejects non-image bytes", () => {
    const path = join(dir, "junk.bin");
    writeFileSync(path, Buffer.from("definitely not an image"));
    expect(() => decodeImageFile(path)).toThrow(ImageDecodeFailure);
  });

  it("rejects unknown filter types", () => {
    const path = writePng("e.png", 2, 2, new Array(12).fill(0), 9);
    expect(() => decodeImageFile(path)).toThrow(ImageDecodeFailure);
  });

  it("rejects corrupt IDAT streams", () => {
    const good = readFileSync(writePng("f.png", 2, 2, new Array(12).fill(7)));
    const bad = Buffer.from(good);
    // find IDAT and scramble its body
    const at = bad.indexOf(Buffer.from("IDAT", "ascii"));
    bad[at + 4] ^= 0xff;
    bad[at + 5] ^= 0xff;
    const path = join(dir, "g.png");
    writeFileSync(path, bad);
    expect(() => decodeImageFile(path)).toThrow(ImageDecodeFailure);
  });
});

describe("resize and blur", () => {
  it("preserves constant images", () => {
    const img = { width: 3, height: 3, data: new Float64Array(27).fill(0.5) };
    const up = resizeBilinear(img, 7, 5);
    expect(up.width).toBe(5);
    expect(up.height).toBe(7);
    for (const v of up.data) expect(v).toBeCloseTo(0.5, 12);
    for (const v of boxBlur(img, 1).data) expect(v).toBeCloseTo(0.5, 12);
  });

  it("blur reduces gradient energy", () => {
    const data = new Float64Array(16 * 16 * 3);
    for (let i = 0; i < 16 * 16; i++) {
      const v = (i % 16) % 2 === 0 ? 1.0 : 0.0;
      data[i * 3] = data[i * 3 + 1] = data[i * 3 + 2] = v;
    }
    const img = { width: 16, height: 16, data };
    const blurred = boxBlur(img, 2);
    const energy = (d: Float64Array) => {
      let e = 0;
      for (let i = 3; i < d.length; i += 3) e += Math.abs(d[i] - d[i - 3]);
      return e;
    };
    expect(energy(blurred.data)).toBeLessThan(energy(img.data) * 0.6);
  });
});
