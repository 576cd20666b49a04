import { RgbImage } from "./ppm.js";

export const TARGET_SIZE = 224;

/** Bilinear resample to size x size, channels kept interleaved as floats in [0, 1]. */
export function resizeBilinear(image: RgbImage, size: number = TARGET_SIZE): Float32Array {
  const { width, height, pixels } = image;
  const out = new Float32Array(size * size * 3);
  // align corners=false convention: sample at pixel centers
  const sx = width / size;
  const sy = height / size;
  for (let y = 0; y < size; y++) {
    const srcY = (y + 0.5) * sy - 0.5;
    const y0 = Math.max(0, Math.min(height - 1, Math.floor(srcY)));
    const y1 = Math.min(height - 1, y0 + 1);
    const fy = Math.max(0, Math.min(1, srcY - y0));
    for (let x = 0; x < size; x++) {
      const srcX = (x + 0.5) * sx - 0.5;
      const x0 = Math.max(0, Math.min(width - 1, Math.floor(srcX)));
      const x1 = Math.min(width - 1, x0 + 1);
      const fx = Math.max(0, Math.min(1, srcX - x0));
      for (let c = 0; c < 3; c++) {
        const p00 = pixels[(y0 * width + x0) * 3 + c];
        const p01 = pixels[(y0 * width + x1) * 3 + c];
        const p10 = pixels[(y1 * width + x0) * 3 + c];
        const p11 = pixels[(y1 * width + x1) * 3 + c];
        const top = p00 + (p01 - p00) * fx;
        const bot = p10 + (p11 - p10) * fx;
        out[(y * size + x) * 3 + c] = (top + (bot - top) * fy) / 255;
      }
    }
  }
  return out;
}
