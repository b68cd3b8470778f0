/**
 * Deterministic prompt-key embeddings by signed feature hashing.
 *
 * Each lowercase token hashes to a coordinate and a sign; token vectors
 * accumulate and the result is L2-normalized, then scaled so the scaled
 * dot-product scores against token queries have useful spread. The same
 * prompt always embeds to the same key, independent of the other prompts.
 */

import { fnv1a } from "./rng.js";
import { ShapeMismatch } from "./errors.js";

export function tokenize(prompt: string): string[] {
  return prompt.toLowerCase().split(/[^a-z0-9]+/).filter((t) => t.length > 0);
}

export function embedPrompt(prompt: string, dim: number, scale: number): Float64Array {
  const tokens = tokenize(prompt);
  if (tokens.length === 0) throw new ShapeMismatch(`prompt ${JSON.stringify(prompt)} has no tokens`);
  const v = new Float64Array(dim);
  for (const token of tokens) {
    const h = fnv1a(token);
    const index = h % dim;
    const sign = (h >>> 16) & 1 ? 1.0 : -1.0;
    v[index] += sign;
    // a second coordinate reduces collisions in small dims
    const h2 = fnv1a(`${token}#2`);
    v[h2 % dim] += (h2 >>> 16) & 1 ? 0.5 : -0.5;
  }
  let norm = 0;
  for (const x of v) norm += x * x;
  norm = Math.sqrt(norm);
  for (let i = 0; i < dim; i++) v[i] = Math.fround((v[i] / norm) * scale);
  return v;
}

export function embedPrompts(prompts: string[], dim: number, scale: number): Float64Array {
  if (prompts.length === 0) throw new ShapeMismatch("at least one prompt is required");
  const out = new Float64Array(prompts.length * dim);
  prompts.forEach((p, i) => out.set(embedPrompt(p, dim, scale), i * dim));
  return out;
}
