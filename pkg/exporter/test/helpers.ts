/** Shared test plumbing: temp dirs, JSONL writing, and validation of
 * exported files through the installed Python core package (the contract
 * the exporter must satisfy). */

import { execFileSync } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

const HERE = path.dirname(fileURLToPath(import.meta.url));
export const REPO_ROOT = path.resolve(HERE, "..", "..", "..");
export const FIXTURES = path.resolve(REPO_ROOT, "exporter", "fixtures");

export function tempDir(): string {
  return mkdtempSync(path.join(tmpdir(), "scar-export-"));
}

export function writeJsonl(dir: string, name: string, rows: object[]): string {
  const file = path.join(dir, name);
  writeFileSync(file, rows.map((r) => JSON.stringify(r)).join("\n") + "\n");
  return file;
}

function runPython(script: string): string {
  return execFileSync("python3", ["-c", script], {
    encoding: "utf-8",
    env: {
      ...process.env,
      PYTHONPATH: path.join(REPO_ROOT, "src"),
    },
  });
}

/** Open a store with the core reader; returns dim, count, and per-id vectors. */
export function openStoreWithCore(storePath: string): {
  dim: number;
  count: number;
  records: Record<string, { cls: number[]; pooled: number[] }>;
} {
  const script = `
import json, sys
from scar.embeddings import open_store
store = open_store(${JSON.stringify(storePath)})
print(json.dumps({
    "dim": store.dim,
    "count": len(store),
    "records": {
        rec.id: {"cls": [float(v) for v in rec.cls],
                 "pooled": [float(v) for v in rec.pooled]}
        for rec in store
    },
}))
`;
  return JSON.parse(runPython(script));
}

/** Run the core load_scores validation; returns ids and perplexities. */
export function loadScoresWithCore(scoresPath: string): {
  ids: string[];
  ppl: Record<string, number>;
} {
  const script = `
import json
from scar.surprisal import load_scores, perplexity
table = load_scores(${JSON.stringify(scoresPath)})
print(json.dumps({
    "ids": sorted(table),
    "ppl": {sid: perplexity(s) for sid, s in table.items()},
}))
`;
  return JSON.parse(runPython(script));
}

export function runCli(args: string[]): { code: number; output: string } {
  const cliPath = path.resolve(HERE, "..", "src", "cli.js");
  try {
    const output = execFileSync("node", [cliPath, ...args], {
      encoding: "utf-8",
      stdio: ["ignore", "pipe", "pipe"],
    });
    return { code: 0, output };
  } catch (err: any) {
    return { code: err.status ?? 1, output: String(err.stderr ?? "") };
  }
}
