#!/usr/bin/env node
/**
 * scar-export embeddings|logprobs --input FILE --model ID_OR_FIXTURE
 *   --out FILE [--max-tokens N] [--batch-size N] [--device cpu]
 *
 * Exit codes: 0 success, 2 usage error, 3 malformed input data, 4 model
 * load or io failure.
 */

import { DataError, ModelError, UsageError } from "./errors.js";
import {
  DEFAULT_MAX_TOKENS,
  ExportJob,
  exportEmbeddings,
  exportLogprobs,
} from "./export.js";

const USAGE =
  "usage: scar-export embeddings|logprobs --input FILE --model ID --out FILE " +
  "[--max-tokens N] [--batch-size N] [--device NAME]";

function parseArgs(argv: string[]): { command: string; job: ExportJob } {
  if (argv.length === 0 || argv[0] === "--help" || argv[0] === "-h") {
    console.log(USAGE);
    process.exit(argv.length === 0 ? 2 : 0);
  }
  const command = argv[0];
  if (command !== "embeddings" && command !== "logprobs") {
    throw new UsageError(`unknown command ${command}`);
  }
  const options = new Map<string, string>();
  for (let i = 1; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (!flag.startsWith("--") || value === undefined) {
      throw new UsageError(`malformed option ${flag}`);
    }
    options.set(flag.slice(2), value);
  }
  for (const required of ["input", "model", "out"]) {
    if (!options.has(required)) {
      throw new UsageError(`missing required --${required}`);
    }
  }
  const maxTokens = Number(options.get("max-tokens") ?? DEFAULT_MAX_TOKENS);
  const batchSize = Number(options.get("batch-size") ?? 16);
  if (!Number.isInteger(maxTokens) || maxTokens < 1) {
    throw new UsageError("--max-tokens must be a positive integer");
  }
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    throw new UsageError("--batch-size must be a positive integer");
  }
  return {
    command,
    job: {
      input: options.get("input")!,
      model: options.get("model")!,
      out: options.get("out")!,
      maxTokens,
      batchSize,
      device: options.get("device") ?? "cpu",
    },
  };
}

async function main(): Promise<number> {
  try {
    const { command, job } = parseArgs(process.argv.slice(2));
    if (command === "embeddings") {
      const count = await exportEmbeddings(job);
      console.log(`wrote ${count} embedding records to ${job.out}`);
    } else {
      const count = exportLogprobs(job);
      console.log(`wrote ${count} score lines to ${job.out}`);
    }
    return 0;
  } catch (err) {
    if (err instanceof UsageError) {
      console.error(`error: ${err.message}\n${USAGE}`);
      return 2;
    }
    if (err instanceof DataError) {
      console.error(`error: ${err.message}`);
      return 3;
    }
    if (err instanceof ModelError) {
      const hint = /memory|oom/i.test(err.message)
        ? " (try a smaller --batch-size)"
        : "";
      console.error(`error: ${err.message}${hint}`);
      return 4;
    }
    console.error(`error: ${String(err)}`);
    return 4;
  }
}

main().then((code) => {
  process.exitCode = code;
});
