import { createHash } from "node:crypto";

import { ExportError } from "./errors.js";
import { TARGET_SIZE } from "./image.js";

// Primitive names the trainer's vocab files accept.
const TOKEN_RE = /^[a-z0-9_-]+$/;

export interface Backbone {
  name: string;
  dim: number;
  tokenDim: number;
  /** Unit-norm embedding for a resized image, or null when the image is
   * degenerate (all black) and should be skipped. */
  encodeImage(resized: Float32Array): Float32Array | null;
  encodeToken(name: string): Float32Array;
}

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function normalize(vec: Float32Array): Float32Array | null {
  let sq = 0;
  for (let i = 0; i < vec.length; i++) sq += vec[i] * vec[i];
  if (sq === 0) return null;
  const inv = 1 / Math.sqrt(sq);
  const out = new Float32Array(vec.length);
  for (let i = 0; i < vec.length; i++) out[i] = vec[i] * inv;
  return out;
}

function seedFromString(text: string): number {
  return createHash("sha256").update(text, "utf8").digest().readUInt32LE(0);
}

/** Stand-in encoder: average-pool the image to a 16x16x3 grid (768 values),
 * mix through a fixed random sign matrix, unit-normalize. Deterministic and
 * dependency-free; geometry only, no semantics. */
class StubBackbone implements Backbone {
  name = "stub-768";
  dim = 768;
  tokenDim = 768;
  private signs: Int8Array;

  constructor() {
    const rng = mulberry32(seedFromString(this.name));
    this.signs = new Int8Array(this.dim * this.dim);
    for (let i = 0; i < this.signs.length; i++) {
      this.signs[i] = rng() < 0.5 ? -1 : 1;
    }
  }

  encodeImage(resized: Float32Array): Float32Array | null {
    const grid = 16;
    const cell = TARGET_SIZE / grid;
    const pooled = new Float32Array(this.dim);
    for (let gy = 0; gy < grid; gy++) {
      for (let gx = 0; gx < grid; gx++) {
        let r = 0;
        let g = 0;
        let b = 0;
        for (let dy = 0; dy < cell; dy++) {
          for (let dx = 0; dx < cell; dx++) {
            const p = ((gy * cell + dy) * TARGET_SIZE + gx * cell + dx) * 3;
            r += resized[p];
            g += resized[p + 1];
            b += resized[p + 2];
          }
        }
        const base = (gy * grid + gx) * 3;
        const area = cell * cell;
        pooled[base] = r / area;
        pooled[base + 1] = g / area;
        pooled[base + 2] = b / area;
      }
    }
    const mixed = new Float32Array(this.dim);
    const scale = 1 / Math.sqrt(this.dim);
    for (let j = 0; j < this.dim; j++) {
      let acc = 0;
      const row = j * this.dim;
      for (let i = 0; i < this.dim; i++) {
        acc += this.signs[row + i] * pooled[i];
      }
      mixed[j] = acc * scale;
    }
    return normalize(mixed);
  }

  encodeToken(name: string): Float32Array {
    if (!TOKEN_RE.test(name)) {
      throw new ExportError(
        "unknown-primitive",
        `token ${JSON.stringify(name)} outside the [a-z0-9_-] vocab alphabet`,
      );
    }
    const rng = mulberry32(seedFromString(`${this.name}:token:${name}`));
    const vec = new Float32Array(this.tokenDim);
    for (let i = 0; i < vec.length; i++) vec[i] = rng() * 2 - 1;
    const unit = normalize(vec);
    if (unit === null) {
      throw new ExportError("non-finite", `token ${JSON.stringify(name)} embedded to zero`);
    }
    return unit;
  }
}

export function createBackbone(name: string): Backbone {
  if (name === "stub-768") return new StubBackbone();
  if (name === "vit-l-14") {
    throw new ExportError(
      "backbone-unavailable",
      "vit-l-14 weights are not bundled; run with --backbone stub-768",
    );
  }
  throw new ExportError("config-invalid", `unknown backbone ${JSON.stringify(name)}`);
}
