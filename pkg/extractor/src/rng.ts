/**
 * Deterministic random numbers for the feature projections.
 *
 * mulberry32 keeps every extraction reproducible from a single seed;
 * per-matrix streams derive their own seed from (seed, label) so adding a
 * head never shifts the values of another.
 */

export class Rng {
  private state: number;

  constructor(seed: number) {
    this.state = seed >>> 0;
  }

  /** Uniform in [0, 1). */
  next(): number {
    this.state = (this.state + 0x6d2b79f5) >>> 0;
    let t = this.state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  }

  /** Standard normal via Box-Muller. */
  gauss(): number {
    let u = 0;
    while (u === 0) u = this.next();
    const v = this.next();
    return Math.sqrt(-2.0 * Math.log(u)) * Math.cos(2.0 * Math.PI * v);
  }

  /** Gaussian matrix with entries N(0, scale^2), row-major rows x cols. */
  gaussMatrix(rows: number, cols: number, scale = 1.0): Float64Array {
    const out = new Float64Array(rows * cols);
    for (let i = 0; i < out.length; i++) out[i] = this.gauss() * scale;
    return out;
  }
}

/** FNV-1a 32-bit hash, used both for tokens and for derived seeds. */
export function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

export function derivedSeed(seed: number, label: string): number {
  return (seed ^ fnv1a(label)) >>> 0;
}
