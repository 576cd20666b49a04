/** DUPX embedding binary, the trainer's on-disk matrix format:
 *
 *   magic "DUPX" | version u16 | rows u32 | cols u32 | reserved u16
 *   payload: rows*cols little-endian float32, row-major
 */
import { createHash } from "node:crypto";
import { readFile, writeFile } from "node:fs/promises";

import { ExportError } from "./errors.js";

export const MAGIC = "DUPX";
export const FORMAT_VERSION = 1;
const HEADER_BYTES = 16;

export function packMatrix(rows: number, cols: number, values: Float32Array): Buffer {
  if (values.length !== rows * cols) {
    throw new ExportError(
      "shape-mismatch",
      `payload has ${values.length} floats, header says ${rows}x${cols}`,
    );
  }
  const buf = Buffer.alloc(HEADER_BYTES + values.length * 4);
  buf.write(MAGIC, 0, "ascii");
  buf.writeUInt16LE(FORMAT_VERSION, 4);
  buf.writeUInt32LE(rows, 6);
  buf.writeUInt32LE(cols, 10);
  buf.writeUInt16LE(0, 14);
  for (let i = 0; i < values.length; i++) {
    buf.writeFloatLE(values[i], HEADER_BYTES + i * 4);
  }
  return buf;
}

export async function writeDupx(
  path: string,
  rows: number,
  cols: number,
  values: Float32Array,
): Promise<void> {
  await writeFile(path, packMatrix(rows, cols, values));
}

export interface DupxMatrix {
  rows: number;
  cols: number;
  values: Float32Array;
}

export function unpackMatrix(buf: Buffer): DupxMatrix {
  if (buf.length < HEADER_BYTES) {
    throw new ExportError("truncated-file", `binary shorter than the ${HEADER_BYTES}-byte header`);
  }
  const magic = buf.toString("ascii", 0, 4);
  if (magic !== MAGIC) {
    throw new ExportError("bad-magic", `magic ${JSON.stringify(magic)}, expected ${MAGIC}`);
  }
  const version = buf.readUInt16LE(4);
  if (version !== FORMAT_VERSION) {
    throw new ExportError(
      "version-mismatch",
      `format version ${version}, writer supports ${FORMAT_VERSION}`,
    );
  }
  const rows = buf.readUInt32LE(6);
  const cols = buf.readUInt32LE(10);
  const expected = HEADER_BYTES + rows * cols * 4;
  if (buf.length !== expected) {
    throw new ExportError(
      "truncated-file",
      `expected ${expected} bytes for ${rows}x${cols}, file has ${buf.length}`,
    );
  }
  const values = new Float32Array(rows * cols);
  for (let i = 0; i < values.length; i++) {
    values[i] = buf.readFloatLE(HEADER_BYTES + i * 4);
  }
  return { rows, cols, values };
}

export async function readDupx(path: string): Promise<DupxMatrix> {
  return unpackMatrix(await readFile(path));
}

export function sha256(buf: Buffer): string {
  return createHash("sha256").update(buf).digest("hex");
}
