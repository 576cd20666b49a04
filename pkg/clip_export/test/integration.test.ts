import { spawnSync } from "node:child_process";
import { writeFile } from "node:fs/promises";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, describe, expect, it } from "vitest";

import { dropFixture, Fixture, makeFixture, standardCorpus } from "./helpers.js";

// built by pretest; the CLI contract is only visible through the dist entry
const CLI = fileURLToPath(new URL("../dist/cli.js", import.meta.url));

const fixtures: Fixture[] = [];

afterAll(async () => {
  while (fixtures.length) await dropFixture(fixtures.pop()!);
});

function runCli(args: string[]) {
  const proc = spawnSync("node", [CLI, ...args], { encoding: "utf8" });
  return { status: proc.status, stdout: proc.stdout, stderr: proc.stderr };
}

function exportArgs(fx: Fixture): string[] {
  return ["export", "--root", fx.root, "--splits", fx.splits, "--backbone", "stub-768", "--out", fx.out];
}

// Loads the exported manifest with the trainer, checks geometry, and runs one
// epoch. Keep the assertions on the Python side so a failure names the exact
// mismatch.
const LOADER_SCRIPT = `
import sys

import numpy as np

from dualproto.config import TrainConfig
from dualproto.data import load_dataset, read_embedding_matrix
from dualproto.train import train

manifest = sys.argv[1]
dataset, space = load_dataset(manifest)
assert dataset.dim == 768, dataset.dim
assert space.states == ("new", "old"), space.states
assert space.objects == ("cat", "dog"), space.objects
assert space.seen == {(0, 1), (1, 0)}, space.seen
assert space.unseen_closed == {(1, 1)}, space.unseen_closed

norms = np.linalg.norm(dataset.embeddings, axis=1)
drift = float(np.max(np.abs(norms - 1.0)))
assert drift <= 1e-6, drift
raw = read_embedding_matrix(manifest.replace(".manifest", ".embeddings.dupx"))
assert np.array_equal(dataset.embeddings, raw), "rows were renormalized on load"

tokens = read_embedding_matrix(manifest.replace(".manifest", ".state_tokens.dupx"))
assert tokens.shape == (2, 768), tokens.shape
tok_norms = np.linalg.norm(tokens, axis=1)
assert float(np.max(np.abs(tok_norms - 1.0))) <= 1e-6

cfg = TrainConfig(epochs=1, batch_size=4, prefix_len=2, seed=0)
blob, logs = train(cfg, dataset=dataset, space=space)
assert len(blob) > 0 and len(logs) == 1, logs
print("rows=%d d=%d" % dataset.embeddings.shape)
print("max_norm_drift=%.3e" % drift)
print("train_ok=1")
`;

describe("export CLI", () => {
  it("exports the corpus and reports counts", { timeout: 60000 }, async () => {
    const { images, lines } = standardCorpus();
    const fx = await makeFixture(images, lines);
    fixtures.push(fx);
    const { status, stdout, stderr } = runCli(exportArgs(fx));
    expect(status, stderr).toBe(0);
    const out = stdout.trim().split("\n");
    expect(out[0]).toBe("exported=3 skipped=0");
    expect(out[1]).toBe(`manifest=${join(fx.out, "dataset.manifest")}`);
    expect(stderr).toContain("progress=3/3");
  });

  it("prints warning lines for skipped rows", { timeout: 60000 }, async () => {
    const { images, lines } = standardCorpus();
    images["junk.ppm"] = Buffer.from("nope", "ascii");
    lines.test.push("junk.ppm\tnew\tcat");
    const fx = await makeFixture(images, lines);
    fixtures.push(fx);
    const { status, stdout, stderr } = runCli(exportArgs(fx));
    expect(status).toBe(0);
    expect(stdout).toContain("exported=3 skipped=1");
    expect(stderr).toContain("warning=skipped path=junk.ppm detail=");
  });

  it("fails with one machine-parseable line on errors", { timeout: 60000 }, async () => {
    const { images, lines } = standardCorpus();
    const fx = await makeFixture(images, lines);
    fixtures.push(fx);

    const unavailable = runCli([
      "export", "--root", fx.root, "--splits", fx.splits, "--backbone", "vit-l-14", "--out", fx.out,
    ]);
    expect(unavailable.status).toBe(2);
    expect(unavailable.stderr).toMatch(/^error=backbone-unavailable detail=/);

    const badFlag = runCli([...exportArgs(fx), "--bogus", "1"]);
    expect(badFlag.status).toBe(2);
    expect(badFlag.stderr).toMatch(/^error=config-invalid detail=/);

    const noCommand = runCli([]);
    expect(noCommand.status).toBe(2);
    expect(noCommand.stderr).toMatch(/^error=config-invalid detail=/);
  });

  it("round trips into the trainer: load, validate, one epoch", { timeout: 120000 }, async () => {
    const { images, lines } = standardCorpus();
    const fx = await makeFixture(images, lines);
    fixtures.push(fx);
    const exported = runCli(exportArgs(fx));
    expect(exported.status, exported.stderr).toBe(0);
    const manifest = exported.stdout
      .trim()
      .split("\n")
      .find((l) => l.startsWith("manifest="))!
      .slice("manifest=".length);

    const script = join(fx.dir, "load_and_train.py");
    await writeFile(script, LOADER_SCRIPT, "utf8");
    const proc = spawnSync("python3", [script, manifest], { encoding: "utf8" });
    expect(proc.status, proc.stderr).toBe(0);
    expect(proc.stdout).toContain("rows=3 d=768");
    expect(proc.stdout).toContain("train_ok=1");
  });
});
