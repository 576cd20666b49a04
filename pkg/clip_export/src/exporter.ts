/** Walks the split listings under --splits, encodes every readable image
 * with the chosen backbone, and writes the trainer's dataset artifact
 * (manifest, vocab, pair sets, labels, DUPX embedding binary) plus
 * per-primitive token-embedding binaries.
 *
 * Listing format: one image per line, `<relative path>\t<state>\t<object>`.
 * Seen pairs are the train pairs; unseen pairs are the val/test pairs that
 * never occur in train. A corrupt or unreadable image drops its row (with a
 * warning), never a pair: the listings define the label space.
 */
import { mkdir, readFile, writeFile } from "node:fs/promises";
import { join } from "node:path";

import { Backbone, createBackbone } from "./backbone.js";
import { FORMAT_VERSION, packMatrix, sha256 } from "./dupx.js";
import { ExportError } from "./errors.js";
import { resizeBilinear } from "./image.js";
import { decodePpm } from "./ppm.js";

export const SPLITS = ["train", "val", "test"] as const;
export type Split = (typeof SPLITS)[number];

export interface ExportJob {
  root: string;
  splits: string;
  backbone: string;
  out: string;
  batchSize?: number;
  stem?: string;
}

export interface ExportResult {
  exported: number;
  skipped: number;
  manifestPath: string;
}

interface Row {
  path: string;
  state: string;
  object: string;
  split: Split;
}

async function readSplitFile(dir: string, split: Split): Promise<Row[]> {
  const path = join(dir, `${split}.txt`);
  let text: string;
  try {
    text = await readFile(path, "utf8");
  } catch {
    throw new ExportError("missing-file", `split listing not found: ${path}`);
  }
  const rows: Row[] = [];
  for (const raw of text.split("\n")) {
    const line = raw.trim();
    if (!line || line.startsWith("#")) continue;
    const parts = line.split("\t");
    if (parts.length !== 3) {
      throw new ExportError("bad-format", `bad ${split} line ${JSON.stringify(line)}`);
    }
    rows.push({ path: parts[0], state: parts[1], object: parts[2], split });
  }
  return rows;
}

function linesToText(lines: string[]): string {
  return lines.length ? lines.join("\n") + "\n" : "";
}

function stackRows(vecs: Float32Array[], cols: number): Buffer {
  const flat = new Float32Array(vecs.length * cols);
  vecs.forEach((v, i) => flat.set(v, i * cols));
  return packMatrix(vecs.length, cols, flat);
}

export async function runExport(
  job: ExportJob,
  warn: (path: string, detail: string) => void = () => {},
  progress?: (done: number, total: number) => void,
): Promise<ExportResult> {
  const backbone: Backbone = createBackbone(job.backbone);
  const stem = job.stem ?? "dataset";
  const batchSize = job.batchSize ?? 32;
  if (!Number.isInteger(batchSize) || batchSize <= 0) {
    throw new ExportError("config-invalid", `batch size must be a positive integer, got ${job.batchSize}`);
  }

  const rows: Row[] = [];
  for (const split of SPLITS) {
    rows.push(...(await readSplitFile(job.splits, split)));
  }
  if (rows.length === 0) {
    throw new ExportError("empty-export", "split listings contain no rows");
  }

  const states = [...new Set(rows.map((r) => r.state))].sort();
  const objects = [...new Set(rows.map((r) => r.object))].sort();
  const stateIdx = new Map(states.map((name, i) => [name, i]));
  const objectIdx = new Map(objects.map((name, i) => [name, i]));
  // composition index m*N+n, same packing the trainer uses
  const key = (r: Row) => stateIdx.get(r.state)! * objects.length + objectIdx.get(r.object)!;

  const seen = new Set(rows.filter((r) => r.split === "train").map(key));
  if (seen.size === 0) {
    throw new ExportError("invalid-split", "train split lists no rows; the seen pair set would be empty");
  }
  const unseen = new Set(rows.filter((r) => r.split !== "train").map(key));
  for (const k of seen) unseen.delete(k);

  // validate the vocab up front so a bad token fails before any encoding
  const stateTokens = states.map((name) => backbone.encodeToken(name));
  const objectTokens = objects.map((name) => backbone.encodeToken(name));

  const kept: Row[] = [];
  const vectors: Float32Array[] = [];
  let skipped = 0;
  let done = 0;
  for (const row of rows) {
    try {
      const image = decodePpm(await readFile(join(job.root, row.path)));
      const vec = backbone.encodeImage(resizeBilinear(image));
      if (vec === null) {
        throw new ExportError("non-finite", "image embeds to the zero vector");
      }
      kept.push(row);
      vectors.push(vec);
    } catch (err) {
      skipped++;
      warn(row.path, err instanceof Error ? err.message : String(err));
    }
    done++;
    if (progress && (done % batchSize === 0 || done === rows.length)) {
      progress(done, rows.length);
    }
  }
  if (kept.length === 0) {
    throw new ExportError("empty-export", `all ${rows.length} rows skipped`);
  }

  await mkdir(job.out, { recursive: true });

  const vocabName = `${stem}.vocab.tsv`;
  await writeFile(
    join(job.out, vocabName),
    linesToText([...states.map((s) => `state\t${s}`), ...objects.map((o) => `object\t${o}`)]),
    "utf8",
  );

  const pairLines = (keys: Set<number>) =>
    [...keys]
      .sort((a, b) => a - b)
      .map((k) => `${states[Math.floor(k / objects.length)]}\t${objects[k % objects.length]}`);
  const seenName = `${stem}.seen_pairs.tsv`;
  const unseenName = `${stem}.unseen_pairs.tsv`;
  await writeFile(join(job.out, seenName), linesToText(pairLines(seen)), "utf8");
  await writeFile(join(job.out, unseenName), linesToText(pairLines(unseen)), "utf8");

  const labelsName = `${stem}.labels.tsv`;
  await writeFile(
    join(job.out, labelsName),
    linesToText(kept.map((r, i) => `${i}\t${r.state}\t${r.object}\t${r.split}`)),
    "utf8",
  );

  const embName = `${stem}.embeddings.dupx`;
  const embBuf = stackRows(vectors, backbone.dim);
  await writeFile(join(job.out, embName), embBuf);

  const stateTokName = `${stem}.state_tokens.dupx`;
  const objectTokName = `${stem}.object_tokens.dupx`;
  const stateTokBuf = stackRows(stateTokens, backbone.tokenDim);
  const objectTokBuf = stackRows(objectTokens, backbone.tokenDim);
  await writeFile(join(job.out, stateTokName), stateTokBuf);
  await writeFile(join(job.out, objectTokName), objectTokBuf);

  // required keys first, in the trainer's order; token binaries ride along
  // as extra keys the trainer ignores
  const manifest: Array<[string, string | number]> = [
    ["format", FORMAT_VERSION],
    ["d", backbone.dim],
    ["world", "closed"],
    ["vocab", vocabName],
    ["seen_pairs", seenName],
    ["unseen_pairs", unseenName],
    ["labels", labelsName],
    ["embeddings", embName],
    ["checksum.embeddings", sha256(embBuf)],
    ["state_tokens", stateTokName],
    ["object_tokens", objectTokName],
    ["checksum.state_tokens", sha256(stateTokBuf)],
    ["checksum.object_tokens", sha256(objectTokBuf)],
  ];
  const manifestPath = join(job.out, `${stem}.manifest`);
  await writeFile(manifestPath, manifest.map(([k, v]) => `${k}=${v}`).join("\n") + "\n", "utf8");

  return { exported: kept.length, skipped, manifestPath };
}
