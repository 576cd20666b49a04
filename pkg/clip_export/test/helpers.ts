import { mkdtemp, rm, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";

export function makePpm(
  width: number,
  height: number,
  pixel: (x: number, y: number) => [number, number, number],
): Buffer {
  const header = Buffer.from(`P6\n${width} ${height}\n255\n`, "ascii");
  const raster = Buffer.alloc(width * height * 3);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const [r, g, b] = pixel(x, y);
      const p = (y * width + x) * 3;
      raster[p] = r;
      raster[p + 1] = g;
      raster[p + 2] = b;
    }
  }
  return Buffer.concat([header, raster]);
}

export function gradientPpm(width: number, height: number, phase: number): Buffer {
  return makePpm(width, height, (x, y) => [
    (x * 7 + phase) % 256,
    (y * 5 + phase * 3) % 256,
    (x + y + phase * 11) % 256,
  ]);
}

export interface Fixture {
  dir: string;
  root: string;
  splits: string;
  out: string;
}

/** Temp workspace with images/, splits/, and an out/ target. Lines are
 * per-split arrays of `relpath\tstate\tobject`; image entries map relpath
 * to raw file bytes. */
export async function makeFixture(
  images: Record<string, Buffer>,
  lines: { train: string[]; val: string[]; test: string[] },
): Promise<Fixture> {
  const dir = await mkdtemp(join(tmpdir(), "clip-export-"));
  const root = join(dir, "images");
  const splits = join(dir, "splits");
  const { mkdir } = await import("node:fs/promises");
  await mkdir(root, { recursive: true });
  await mkdir(splits, { recursive: true });
  for (const [rel, bytes] of Object.entries(images)) {
    await writeFile(join(root, rel), bytes);
  }
  for (const split of ["train", "val", "test"] as const) {
    const body = lines[split];
    await writeFile(join(splits, `${split}.txt`), body.length ? body.join("\n") + "\n" : "", "utf8");
  }
  return { dir, root, splits, out: join(dir, "out") };
}

export async function dropFixture(fixture: Fixture): Promise<void> {
  await rm(fixture.dir, { recursive: true, force: true });
}

/** Standard 3-image corpus: two train pairs plus one test-only pair, so the
 * unseen set is non-empty and every primitive has train coverage. */
export function standardCorpus() {
  return {
    images: {
      "a.ppm": gradientPpm(32, 24, 1),
      "b.ppm": gradientPpm(64, 64, 2),
      "c.ppm": gradientPpm(17, 31, 3),
    },
    lines: {
      train: ["a.ppm\told\tcat", "b.ppm\tnew\tdog"],
      val: [],
      test: ["c.ppm\told\tdog"],
    },
  };
}
