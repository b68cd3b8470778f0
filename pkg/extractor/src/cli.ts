/**
 * Command-line extraction tool.
 *
 * Usage:
 *   node dist/cli.js --image photo.png --prompts "cat,grass,sky" --out out/
 *   node dist/cli.js --image-dir imgs/ --prompt-file prompts.txt --out out/
 *
 * Writes <out>/<image-stem>.nrvf plus a .nrvf.json sidecar with the
 * configuration echo and the in-process zero-step argmax.
 */

import { readdirSync, readFileSync, statSync } from "node:fs";
import { basename, extname, join } from "node:path";
import { parseArgs } from "node:util";

import { DEFAULT_SPEC, extractToFile } from "./extract.js";
import { ExtractorError } from "./errors.js";
import { LABEL_CROSS_ATTN, LABEL_PROBS } from "./nrvf.js";

function usageError(message: string): never {
  process.stderr.write(`usage error: ${message}\n`);
  process.exit(2);
}

export function main(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      image: { type: "string" },
      "image-dir": { type: "string" },
      prompts: { type: "string" },
      "prompt-file": { type: "string" },
      out: { type: "string" },
      resolution: { type: "string", default: String(DEFAULT_SPEC.resolution) },
      patch: { type: "string", default: String(DEFAULT_SPEC.patch) },
      "heads-per-layer": { type: "string", default: String(DEFAULT_SPEC.headsPerLayer) },
      dim: { type: "string", default: String(DEFAULT_SPEC.dim) },
      seed: { type: "string", default: String(DEFAULT_SPEC.seed) },
      smoothing: { type: "string", default: String(DEFAULT_SPEC.smoothing) },
      "prompt-scale": { type: "string", default: String(DEFAULT_SPEC.promptScale) },
      mode: { type: "string", default: "cross" },
    },
  });
  if (!values.out) usageError("--out is required");
  if (!values.image && !values["image-dir"]) usageError("--image or --image-dir is required");
  let prompts: string[] = [];
  if (values["prompt-file"]) {
    prompts = readFileSync(values["prompt-file"], "utf-8")
      .split("\n").map((l) => l.trim()).filter((l) => l.length > 0);
  } else if (values.prompts) {
    prompts = values.prompts.split(",").map((p) => p.trim()).filter((p) => p.length > 0);
  }
  if (prompts.length === 0) usageError("no prompts given (--prompts or --prompt-file)");
  if (values.mode !== "cross" && values.mode !== "probs") {
    usageError(`--mode must be cross or probs, got ${values.mode}`);
  }
  const images: string[] = [];
  if (values.image) images.push(values.image);
  if (values["image-dir"]) {
    for (const f of readdirSync(values["image-dir"]).sort()) {
      if ([".png", ".ppm", ".pgm"].includes(extname(f).toLowerCase())) {
        images.push(join(values["image-dir"], f));
      }
    }
    if (images.length === 0) usageError(`no .png/.ppm images in ${values["image-dir"]}`);
  }
  const outDir = values.out;
  const isDir = (() => {
    try {
      return statSync(outDir).isDirectory();
    } catch {
      return images.length > 1 || !outDir.endsWith(".nrvf");
    }
  })();
  for (const imagePath of images) {
    const outPath = isDir
      ? join(outDir, `${basename(imagePath, extname(imagePath))}.nrvf`)
      : outDir;
    const saved = extractToFile(
      {
        imagePath,
        prompts,
        resolution: Number(values.resolution),
        patch: Number(values.patch),
        headsPerLayer: Number(values["heads-per-layer"]),
        dim: Number(values.dim),
        seed: Number(values.seed),
        smoothing: Number(values.smoothing),
        promptScale: Number(values["prompt-scale"]),
        labelMode: values.mode === "cross" ? LABEL_CROSS_ATTN : LABEL_PROBS,
      },
      outPath,
    );
    process.stdout.write(
      `${imagePath}: ${saved.gridH}x${saved.gridW} grid, ` +
      `${prompts.length} classes -> ${saved.bundlePath}\n`,
    );
  }
  return 0;
}

const invokedDirectly = process.argv[1]?.endsWith("cli.js") ?? false;
if (invokedDirectly) {
  try {
    process.exit(main(process.argv.slice(2)));
  } catch (err) {
    if (err instanceof ExtractorError) {
      process.stderr.write(`${err.constructor.name}: ${err.message}\n`);
      process.exit(1);
    }
    throw err;
  }
}
