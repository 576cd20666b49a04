#!/usr/bin/env node
import { ExportError } from "./errors.js";
import { ExportJob, runExport } from "./exporter.js";

const USAGE =
  "usage: clip-export export --root <dir> --splits <dir> --backbone <name> --out <dir>" +
  " [--batch-size <n>] [--stem <name>]";

function parseArgs(args: string[]): ExportJob {
  const flags = new Map<string, string>();
  for (let i = 0; i < args.length; i += 2) {
    const name = args[i];
    if (!name.startsWith("--") || i + 1 >= args.length) {
      throw new ExportError("config-invalid", `expected --flag value pairs; ${USAGE}`);
    }
    flags.set(name.slice(2), args[i + 1]);
  }
  const need = (k: string): string => {
    const v = flags.get(k);
    if (v === undefined) {
      throw new ExportError("config-invalid", `missing required flag --${k}; ${USAGE}`);
    }
    flags.delete(k);
    return v;
  };
  const job: ExportJob = {
    root: need("root"),
    splits: need("splits"),
    backbone: need("backbone"),
    out: need("out"),
  };
  const batchSize = flags.get("batch-size");
  if (batchSize !== undefined) {
    job.batchSize = Number(batchSize);
    flags.delete("batch-size");
  }
  const stem = flags.get("stem");
  if (stem !== undefined) {
    job.stem = stem;
    flags.delete("stem");
  }
  if (flags.size > 0) {
    throw new ExportError("config-invalid", `unknown flag --${[...flags.keys()][0]}`);
  }
  return job;
}

async function main() {
  const argv = process.argv.slice(2);
  if (argv[0] !== "export") {
    throw new ExportError(
      "config-invalid",
      `unknown command ${JSON.stringify(argv[0] ?? "")}; ${USAGE}`,
    );
  }
  const result = await runExport(
    parseArgs(argv.slice(1)),
    (path, detail) => console.error(`warning=skipped path=${path} detail=${detail}`),
    (done, total) => console.error(`progress=${done}/${total}`),
  );
  console.log(`exported=${result.exported} skipped=${result.skipped}`);
  console.log(`manifest=${result.manifestPath}`);
}

main().catch((err) => {
  if (err instanceof ExportError) {
    console.error(`error=${err.kind} detail=${err.message}`);
  } else {
    console.error(`error=internal detail=${err instanceof Error ? err.message : String(err)}`);
  }
  process.exit(2);
});
