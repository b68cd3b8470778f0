/**
 * The extraction pipeline: image file -> NRVF bundle on disk.
 *
 * Also computes the in-process cross-attention class argmax over the same
 * float32-rounded tensors that land in the file, so a zero-step run of the
 * downstream engine can be compared against it node for node.
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { dirname } from "node:path";

import { decodeImageFile, resizeBilinear } from "./image.js";
import {
  DEFAULT_CONFIG,
  FeatureConfig,
  gridSize,
  layerFeatures,
  tokenQueries,
} from "./features.js";
import { embedPrompts } from "./prompts.js";
import { BundlePayload, LABEL_CROSS_ATTN, LABEL_PROBS, encodeBundle } from "./nrvf.js";
import { ShapeMismatch } from "./errors.js";

export interface ExtractionSpec extends FeatureConfig {
  imagePath: string;
  prompts: string[];
  /** 1 = write cross-attention inputs, 2 = write the softmax G directly. */
  labelMode: number;
  promptScale: number;
}

export const DEFAULT_SPEC: Omit<ExtractionSpec, "imagePath" | "prompts"> = {
  ...DEFAULT_CONFIG,
  labelMode: LABEL_CROSS_ATTN,
  promptScale: 8.0,
};

export interface ExtractionResult {
  bytes: Buffer;
  gridH: number;
  gridW: number;
  /** Row-major class indices of the in-process cross-attention argmax. */
  argmax0: Int32Array;
  /** Row-stochastic n x k cross-attention matrix (float64). */
  g: Float64Array;
  sourceTag: string;
}

/** Row softmax of Q P^T / sqrt(dim) plus its argmax (first maximum wins). */
export function crossAttention(
  tokens: Float64Array, prompts: Float64Array, n: number, k: number, dim: number,
): { g: Float64Array; argmax: Int32Array } {
  const g = new Float64Array(n * k);
  const argmax = new Int32Array(n);
  const scale = 1.0 / Math.sqrt(dim);
  for (let i = 0; i < n; i++) {
    let best = 0;
    let bestScore = -Infinity;
    const scores = new Float64Array(k);
    for (let c = 0; c < k; c++) {
      let acc = 0;
      for (let d = 0; d < dim; d++) acc += tokens[i * dim + d] * prompts[c * dim + d];
      scores[c] = acc * scale;
      if (scores[c] > bestScore) {
        bestScore = scores[c];
        best = c;
      }
    }
    argmax[i] = best;
    let z = 0;
    for (let c = 0; c < k; c++) {
      scores[c] = Math.exp(scores[c] - bestScore);
      z += scores[c];
    }
    for (let c = 0; c < k; c++) g[i * k + c] = scores[c] / z;
  }
  return { g, argmax };
}

export function extract(spec: ExtractionSpec): ExtractionResult {
  if (spec.prompts.length < 1) throw new ShapeMismatch("prompt list must be non-empty");
  const { gridH, gridW } = gridSize(spec);
  const n = gridH * gridW;
  const k = spec.prompts.length;
  const image = resizeBilinear(decodeImageFile(spec.imagePath), spec.resolution, spec.resolution);
  const heads = layerFeatures(image, spec);
  const tokens = tokenQueries(image, spec);
  const promptKeys = embedPrompts(spec.prompts, spec.dim, spec.promptScale);
  const { g, argmax } = crossAttention(tokens, promptKeys, n, k, spec.dim);
  const payload: BundlePayload = {
    gridH,
    gridW,
    dim: spec.dim,
    heads,
    classNames: spec.prompts,
    labelMode: spec.labelMode,
  };
  if (spec.labelMode === LABEL_CROSS_ATTN) {
    payload.tokenQueries = tokens;
    payload.promptKeys = promptKeys;
  } else if (spec.labelMode === LABEL_PROBS) {
    payload.probs = g;
  } else {
    throw new ShapeMismatch(`unknown label mode ${spec.labelMode}`);
  }
  const sourceTag =
    `deterministic-backbone(res=${spec.resolution},patch=${spec.patch},` +
    `heads=${spec.headsPerLayer}x2,dim=${spec.dim},seed=${spec.seed},` +
    `smoothing=${spec.smoothing},prompt_scale=${spec.promptScale})`;
  return { bytes: encodeBundle(payload), gridH, gridW, argmax0: argmax, g, sourceTag };
}

export interface SavedExtraction extends ExtractionResult {
  bundlePath: string;
  sidecarPath: string;
}

/** Run extraction and write the bundle plus a JSON sidecar for parity checks. */
export function extractToFile(spec: ExtractionSpec, outPath: string): SavedExtraction {
  const result = extract(spec);
  mkdirSync(dirname(outPath), { recursive: true });
  writeFileSync(outPath, result.bytes);
  const sidecarPath = `${outPath}.json`;
  writeFileSync(
    sidecarPath,
    JSON.stringify(
      {
        source_tag: result.sourceTag,
        image: spec.imagePath,
        prompts: spec.prompts,
        grid: [result.gridH, result.gridW],
        label_mode: spec.labelMode,
        argmax0: Array.from(result.argmax0),
      },
      null,
      2,
    ) + "\n",
  );
  return { ...result, bundlePath: outPath, sidecarPath };
}
