import { describe, expect, it } from "vitest";

import { crc32 } from "../src/crc32.js";
import { ShapeMismatch } from "../src/errors.js";
import {
  LABEL_CROSS_ATTN,
  LABEL_PROBS,
  decodeBundle,
  encodeBundle,
} from "../src/nrvf.js";

function samplePayload() {
  const n = 2 * 3;
  const dim = 4;
  const fill = (len: number, start: number) =>
    Float64Array.from({ length: len }, (_, i) => Math.fround((start + i) * 0.125));
  return {
    gridH: 2,
    gridW: 3,
    dim,
    heads: [
      { layerIndex: 0, headIndex: 0, queries: fill(n * dim, 1), keys: fill(n * dim, 2) },
      { layerIndex: 1, headIndex: 4, queries: fill(n * dim, 3), keys: fill(n * dim, 4) },
    ],
    classNames: ["cat", "gräs"],
    labelMode: LABEL_CROSS_ATTN,
    tokenQueries: fill(n * dim, 5),
    promptKeys: fill(2 * dim, 6),
  };
}

describe("bundle encoding", () => {
  it("round-trips through the reader", () => {
    const payload = samplePayload();
    const back = decodeBundle(encodeBundle(payload));
    expect(back.gridH).toBe(2);
    expect(back.gridW).toBe(3);
    expect(back.classNames).toEqual(payload.classNames);
    expect(back.heads.length).toBe(2);
    expect(back.heads[1].headIndex).toBe(4);
    expect(Array.from(back.heads[0].queries)).toEqual(Array.from(payload.heads[0].queries));
    expect(Array.from(back.tokenQueries!)).toEqual(Array.from(payload.tokenQueries));
  });

  it("writes the documented header layout", () => {
    const bytes = encodeBundle(samplePayload());
    expect(bytes.subarray(0, 4).toString("ascii")).toBe("NRVF");
    expect(bytes.readUInt32LE(4)).toBe(1);  // version
    expect(bytes.readUInt32LE(8)).toBe(2);  // grid_h
    expect(bytes.readUInt32LE(12)).toBe(3); // grid_w
    expect(bytes.readUInt32LE(16)).toBe(4); // dim
    expect(bytes.readUInt32LE(20)).toBe(2); // heads
    expect(bytes.readUInt32LE(24)).toBe(2); // classes
    expect(bytes.readUInt32LE(28)).toBe(LABEL_CROSS_ATTN);
    const stored = bytes.readUInt32LE(bytes.length - 4);
    expect(stored).toBe(crc32(bytes.subarray(0, bytes.length - 4)));
  });

  it("is byte-deterministic", () => {
    const a = encodeBundle(samplePayload());
    const b = encodeBundle(samplePayload());
    expect(a.equals(b)).toBe(true);
  });

  it("rejects tampered bytes", () => {
    const bytes = encodeBundle(samplePayload());
    bytes[40] ^= 1;
    expect(() => decodeBundle(bytes)).toThrow(ShapeMismatch);
  });

  it("supports the probs label mode", () => {
    const payload = samplePayload();
    const probs = Float64Array.from({ length: 6 * 2 }, () => 0.5);
    const back = decodeBundle(encodeBundle({
      ...payload,
      labelMode: LABEL_PROBS,
      tokenQueries: undefined,
      promptKeys: undefined,
      probs,
    }));
    expect(back.labelMode).toBe(LABEL_PROBS);
    expect(Array.from(back.probs!)).toEqual(Array.from(probs));
  });

  it("rejects shape violations", () => {
    const payload = samplePayload();
    payload.heads[0].queries = new Float64Array(5);
    expect(() => encodeBundle(payload)).toThrow(ShapeMismatch);
  });
});
