/** Minimal binary PPM (P6) decoder. Enough for the fixture corpus; real
 * deployments would swap in a proper image library at the call site. */
import { ExportError } from "./errors.js";

export interface RgbImage {
  width: number;
  height: number;
  // RGB interleaved, one byte per channel
  pixels: Uint8Array;
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d || byte === 0x0c;
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
function nextToken(buf: Buffer, pos: number): { token: string; pos: number } {
  while (pos < buf.length) {
    if (isSpace(buf[pos])) {
      pos++;
    } else if (buf[pos] === 0x23) {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
    } else {
      break;
    }
  }
  const start = pos;
  while (pos < buf.length && !isSpace(buf[pos]) && buf[pos] !== 0x23) pos++;
  if (pos === start) {
    throw new ExportError("truncated-file", "ppm header ended early");
  }
  return { token: buf.toString("ascii", start, pos), pos };
}

export function decodePpm(buf: Buffer): RgbImage {
  let t = nextToken(buf, 0);
  if (t.token !== "P6") {
    throw new ExportError("bad-magic", `ppm magic ${JSON.stringify(t.token)}, expected P6`);
  }
  t = nextToken(buf, t.pos);
  const width = Number(t.token);
  t = nextToken(buf, t.pos);
  const height = Number(t.token);
  t = nextToken(buf, t.pos);
  const maxval = Number(t.token);
  if (!Number.isInteger(width) || !Number.isInteger(height) || width <= 0 || height <= 0) {
    throw new ExportError("shape-mismatch", `ppm dimensions ${width}x${height}`);
  }
  if (maxval !== 255) {
    throw new ExportError("shape-mismatch", `ppm maxval ${maxval}, only 255 supported`);
  }
  // exactly one whitespace byte separates the header from the raster
  const start = t.pos + 1;
  const need = width * height * 3;
  if (buf.length < start + need) {
    throw new ExportError(
      "truncated-file",
      `ppm raster needs ${need} bytes, file has ${buf.length - start}`,
    );
  }
  return { width, height, pixels: new Uint8Array(buf.subarray(start, start + need)) };
}
