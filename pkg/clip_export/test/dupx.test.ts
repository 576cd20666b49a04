import { mkdtemp, readFile, rm } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ExportError } from "../src/errors.js";
import { packMatrix, readDupx, sha256, unpackMatrix, writeDupx } from "../src/dupx.js";

let dir: string;

beforeAll(async () => {
  dir = await mkdtemp(join(tmpdir(), "dupx-"));
});

afterAll(async () => {
  await rm(dir, { recursive: true, force: true });
});

describe("dupx binary", () => {
  const values = new Float32Array([0.25, -1.5, 3.0, 0.1, 2 ** -20, -0.0]);

  it("round trips through the file bit-exactly", async () => {
    const path = join(dir, "m.dupx");
    await writeDupx(path, 2, 3, values);
    const back = await readDupx(path);
    expect(back.rows).toBe(2);
    expect(back.cols).toBe(3);
    for (let i = 0; i < values.length; i++) {
      expect(Object.is(back.values[i], values[i])).toBe(true);
    }
  });

  it("writes the 16-byte header exactly", () => {
    const buf = packMatrix(2, 3, values);
    expect(buf.length).toBe(16 + 6 * 4);
    expect(buf.toString("ascii", 0, 4)).toBe("DUPX");
    expect(buf.readUInt16LE(4)).toBe(1);
    expect(buf.readUInt32LE(6)).toBe(2);
    expect(buf.readUInt32LE(10)).toBe(3);
    expect(buf.readUInt16LE(14)).toBe(0);
    // first payload float is 0.25 little-endian
    expect(buf.readFloatLE(16)).toBe(0.25);
  });

  it("rejects a payload that disagrees with the shape", () => {
    expect(() => packMatrix(2, 4, values)).toThrowError(ExportError);
    try {
      packMatrix(2, 4, values);
    } catch (err) {
      expect((err as ExportError).kind).toBe("shape-mismatch");
    }
  });

  it("rejects bad magic, wrong version, and truncation", () => {
    const good = packMatrix(2, 3, values);

    const badMagic = Buffer.from(good);
    badMagic.write("NOPE", 0, "ascii");
    expect(() => unpackMatrix(badMagic)).toThrowError(/magic/);
    try {
      unpackMatrix(badMagic);
    } catch (err) {
      expect((err as ExportError).kind).toBe("bad-magic");
    }

    const badVersion = Buffer.from(good);
    badVersion.writeUInt16LE(9, 4);
    try {
      unpackMatrix(badVersion);
    } catch (err) {
      expect((err as ExportError).kind).toBe("version-mismatch");
    }

    try {
      unpackMatrix(good.subarray(0, good.length - 1));
    } catch (err) {
      expect((err as ExportError).kind).toBe("truncated-file");
    }
    try {
      unpackMatrix(good.subarray(0, 8));
    } catch (err) {
      expect((err as ExportError).kind).toBe("truncated-file");
    }
  });

  it("sha256 matches the file on disk", async () => {
    const path = join(dir, "h.dupx");
    await writeDupx(path, 2, 3, values);
    expect(sha256(await readFile(path))).toBe(sha256(packMatrix(2, 3, values)));
  });
});
