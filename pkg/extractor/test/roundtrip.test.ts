/**
 * End-to-end acceptance of the extractor against the primary engine:
 * a real photograph plus three prompts becomes an NRVF bundle; a
 * zero-step refine must reproduce the in-process cross-attention argmax
 * exactly, and a 40-step refine must actually move the mask.
 */

import { spawnSync } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { beforeAll, describe, expect, it } from "vitest";

import { DEFAULT_SPEC, extractToFile, SavedExtraction } from "../src/extract.js";

const PHOTO = new URL("../testdata/photo.png", import.meta.url).pathname;
const PROMPTS = ["tabby cat", "wooden floor", "soft shadow"];
const PYTHON = process.env.PYTHON ?? "python3";

function runEngine(...args: string[]) {
  const proc = spawnSync(PYTHON, ["-m", "walkseg.cli", ...args], { encoding: "utf-8" });
  return proc;
}

function readPgm(path: string): { width: number; height: number; pixels: Uint8Array } {
  const raw = readFileSync(path);
  const headerEnd = raw.indexOf(10, raw.indexOf(10, raw.indexOf(10) + 1) + 1) + 1;
  const header = raw.subarray(0, headerEnd).toString("ascii").split(/\s+/);
  expect(header[0]).toBe("P5");
  const width = Number(header[1]);
  const height = Number(header[2]);
  return { width, height, pixels: new Uint8Array(raw.subarray(headerEnd)) };
}

describe("extractor -> engine round trip", () => {
  let dir: string;
  let saved: SavedExtraction;

  beforeAll(() => {
    const probe = runEngine("--help");
    if (probe.status !== 0) {
      throw new Error(
        `the walkseg engine is not importable via ${PYTHON} -m walkseg.cli; ` +
        "install the primary package first (pip install -e .)",
      );
    }
    dir = mkdtempSync(join(tmpdir(), "nrvf-rt-"));
    saved = extractToFile(
      { ...DEFAULT_SPEC, imagePath: PHOTO, prompts: PROMPTS },
      join(dir, "photo.nrvf"),
    );
  }, 60000);

  it("produces the declared grid and head count", () => {
    expect(saved.gridH).toBe(24);
    expect(saved.gridW).toBe(24);
    expect(saved.bytes.readUInt32LE(20)).toBe(DEFAULT_SPEC.headsPerLayer * 2);
  });

  it("re-extraction is byte-identical", () => {
    const again = extractToFile(
      { ...DEFAULT_SPEC, imagePath: PHOTO, prompts: PROMPTS },
      join(dir, "photo2.nrvf"),
    );
    expect(again.bytes.equals(saved.bytes)).toBe(true);
  }, 60000);

  it("in-process G rows sum to one", () => {
    const n = saved.gridH * saved.gridW;
    const k = PROMPTS.length;
    for (let i = 0; i < n; i++) {
      let s = 0;
      for (let c = 0; c < k; c++) s += saved.g[i * k + c];
      expect(Math.abs(s - 1.0)).toBeLessThan(1e-5);
    }
  });

  it("loads cleanly and zero-step argmax matches the extractor", () => {
    const out = join(dir, "steps0");
    const proc = runEngine("refine", saved.bundlePath, "--out", out, "--steps", "0");
    expect(proc.stderr).toBe("");
    expect(proc.status).toBe(0);
    const mask = readPgm(join(out, "mask.pgm"));
    expect(mask.width).toBe(24);
    expect(mask.height).toBe(24);
    const expected = saved.argmax0;
    expect(mask.pixels.length).toBe(expected.length);
    let mismatches = 0;
    for (let i = 0; i < expected.length; i++) {
      if (mask.pixels[i] !== expected[i]) mismatches++;
    }
    expect(mismatches).toBe(0);
  }, 120000);

  it("a 40-step walk refines at least 1% of nodes", () => {
    const out0 = join(dir, "walk0");
    const out40 = join(dir, "walk40");
    expect(runEngine("refine", saved.bundlePath, "--out", out0, "--steps", "0").status).toBe(0);
    expect(runEngine("refine", saved.bundlePath, "--out", out40, "--steps", "40").status).toBe(0);
    const a = readPgm(join(out0, "mask.pgm")).pixels;
    const b = readPgm(join(out40, "mask.pgm")).pixels;
    let changed = 0;
    for (let i = 0; i < a.length; i++) if (a[i] !== b[i]) changed++;
    const fraction = changed / a.length;
    expect(fraction).toBeGreaterThanOrEqual(0.01);
    expect(fraction).toBeLessThan(1.0);
  }, 120000);

  it("probs mode also loads cleanly", () => {
    const probsSaved = extractToFile(
      { ...DEFAULT_SPEC, imagePath: PHOTO, prompts: PROMPTS, labelMode: 2 },
      join(dir, "photo_probs.nrvf"),
    );
    const out = join(dir, "probs0");
    const proc = runEngine("refine", probsSaved.bundlePath, "--out", out, "--steps", "0");
    expect(proc.status).toBe(0);
    const mask = readPgm(join(out, "mask.pgm"));
    expect(Array.from(mask.pixels)).toEqual(Array.from(probsSaved.argmax0));
  }, 120000);
});
