/**
 * Per-patch descriptors and their projection into per-head query/key
 * features.
 *
 * This is a deterministic, self-contained backbone: no pretrained weights
 * are required. Patches are summarized by color, luminance statistics,
 * gradient energy, and position encodings; two smoothing scales of the
 * image stand in for the two designated attention layers, and each head
 * projects the descriptors through its own seeded Gaussian map. A real
 * vision backbone can replace `layerFeatures` as long as it yields one
 * query and one key matrix per head.
 */

import { boxBlur, RgbImage } from "./image.js";
import { Rng, derivedSeed } from "./rng.js";
import { ShapeMismatch } from "./errors.js";

export const DESCRIPTOR_DIM = 13;

export interface HeadTensor {
  layerIndex: number;
  headIndex: number;
  /** Row-major gridH*gridW x dim, float32-rounded values. */
  queries: Float64Array;
  keys: Float64Array;
}

export interface FeatureConfig {
  resolution: number;
  patch: number;
  headsPerLayer: number;
  dim: number;
  seed: number;
  /** Box-blur radius of the coarse layer; the analogue of picking an earlier layer. */
  smoothing: number;
}

export const DEFAULT_CONFIG: FeatureConfig = {
  resolution: 336,
  patch: 14,
  headsPerLayer: 5,
  dim: 16,
  seed: 0,
  smoothing: 2,
};

export function gridSize(cfg: FeatureConfig): { gridH: number; gridW: number } {
  if (cfg.resolution % cfg.patch !== 0) {
    throw new ShapeMismatch(
      `resolution ${cfg.resolution} is not divisible by patch stride ${cfg.patch}`,
    );
  }
  const side = cfg.resolution / cfg.patch;
  if (side < 2) throw new ShapeMismatch(`grid side ${side} must be at least 2`);
  return { gridH: side, gridW: side };
}

function luminance(r: number, g: number, b: number): number {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

/**
 * One 13-dim descriptor per patch: mean RGB, mean/std luminance,
 * mean |dx| and |dy| of luminance, normalized position, and sin/cos
 * position encodings. Each dimension is z-scored across patches.
 */
export function patchDescriptors(img: RgbImage, patch: number): Float64Array {
  const gridH = Math.floor(img.height / patch);
  const gridW = Math.floor(img.width / patch);
  const n = gridH * gridW;
  const out = new Float64Array(n * DESCRIPTOR_DIM);
  const luma = new Float64Array(img.width * img.height);
  for (let i = 0; i < img.width * img.height; i++) {
    luma[i] = luminance(img.data[i * 3], img.data[i * 3 + 1], img.data[i * 3 + 2]);
  }
  for (let py = 0; py < gridH; py++) {
    for (let px = 0; px < gridW; px++) {
      let mr = 0, mg = 0, mb = 0, ml = 0, sl = 0, gx = 0, gy = 0;
      for (let y = py * patch; y < (py + 1) * patch; y++) {
        for (let x = px * patch; x < (px + 1) * patch; x++) {
          const i = y * img.width + x;
          mr += img.data[i * 3];
          mg += img.data[i * 3 + 1];
          mb += img.data[i * 3 + 2];
          ml += luma[i];
          sl += luma[i] * luma[i];
          const xl = x > 0 ? luma[i - 1] : luma[i];
          const xr = x < img.width - 1 ? luma[i + 1] : luma[i];
          const yu = y > 0 ? luma[i - img.width] : luma[i];
          const yd = y < img.height - 1 ? luma[i + img.width] : luma[i];
          gx += Math.abs(xr - xl) * 0.5;
          gy += Math.abs(yd - yu) * 0.5;
        }
      }
      const area = patch * patch;
      mr /= area; mg /= area; mb /= area; ml /= area;
      const variance = Math.max(0, sl / area - ml * ml);
      const xn = gridW > 1 ? px / (gridW - 1) : 0;
      const yn = gridH > 1 ? py / (gridH - 1) : 0;
      const d = [
        mr, mg, mb, ml, Math.sqrt(variance), gx / area, gy / area,
        xn, yn,
        Math.sin(2 * Math.PI * xn), Math.cos(2 * Math.PI * xn),
        Math.sin(2 * Math.PI * yn), Math.cos(2 * Math.PI * yn),
      ];
      out.set(d, (py * gridW + px) * DESCRIPTOR_DIM);
    }
  }
  zscoreColumns(out, n, DESCRIPTOR_DIM);
  return out;
}

function zscoreColumns(m: Float64Array, rows: number, cols: number): void {
  for (let c = 0; c < cols; c++) {
    let mean = 0;
    for (let r = 0; r < rows; r++) mean += m[r * cols + c];
    mean /= rows;
    let varc = 0;
    for (let r = 0; r < rows; r++) {
      const d = m[r * cols + c] - mean;
      varc += d * d;
    }
    const std = Math.sqrt(varc / rows);
    for (let r = 0; r < rows; r++) {
      m[r * cols + c] = std > 1e-12 ? (m[r * cols + c] - mean) / std : 0;
    }
  }
}

/** rows x inner times inner x cols, rounded to float32 for file parity. */
export function projectF32(
  desc: Float64Array, rows: number, w: Float64Array, inner: number, cols: number,
): Float64Array {
  const out = new Float64Array(rows * cols);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      let acc = 0;
      for (let i = 0; i < inner; i++) acc += desc[r * inner + i] * w[i * cols + c];
      out[r * cols + c] = Math.fround(acc);
    }
  }
  return out;
}

/** All heads of both layers: layer 0 sees the smoothed image, layer 1 the sharp one. */
export function layerFeatures(img: RgbImage, cfg: FeatureConfig): HeadTensor[] {
  const { gridH, gridW } = gridSize(cfg);
  const n = gridH * gridW;
  const sharp = patchDescriptors(img, cfg.patch);
  const coarse = patchDescriptors(boxBlur(img, cfg.smoothing * cfg.patch), cfg.patch);
  const scale = 1.0 / Math.sqrt(DESCRIPTOR_DIM);
  const heads: HeadTensor[] = [];
  for (let layer = 0; layer < 2; layer++) {
    const desc = layer === 0 ? coarse : sharp;
    for (let h = 0; h < cfg.headsPerLayer; h++) {
      const wq = new Rng(derivedSeed(cfg.seed, `q:${layer}:${h}`))
        .gaussMatrix(DESCRIPTOR_DIM, cfg.dim, scale);
      const wk = new Rng(derivedSeed(cfg.seed, `k:${layer}:${h}`))
        .gaussMatrix(DESCRIPTOR_DIM, cfg.dim, scale);
      heads.push({
        layerIndex: layer,
        headIndex: h,
        queries: projectF32(desc, n, wq, DESCRIPTOR_DIM, cfg.dim),
        keys: projectF32(desc, n, wk, DESCRIPTOR_DIM, cfg.dim),
      });
    }
  }
  return heads;
}

/** Token queries for the label cross-attention, from the sharp descriptors. */
export function tokenQueries(img: RgbImage, cfg: FeatureConfig): Float64Array {
  const { gridH, gridW } = gridSize(cfg);
  const desc = patchDescriptors(img, cfg.patch);
  const w = new Rng(derivedSeed(cfg.seed, "token-queries"))
    .gaussMatrix(DESCRIPTOR_DIM, cfg.dim, 1.0 / Math.sqrt(DESCRIPTOR_DIM));
  return projectF32(desc, gridH * gridW, w, DESCRIPTOR_DIM, cfg.dim);
}
