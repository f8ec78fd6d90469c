/**
 * Export jobs: turn an instruction/response JSONL into a SCAREMB1
 * embedding store or a score JSONL, in the exact formats the core
 * toolkit reads.
 *
 * Store keys follow the core convention "<record-id>:<role>" (x
 * instruction, y dataset response, d/r/h triplet responses); score ids
 * additionally get ":cond" / ":uncond" suffixes.
 */

import { existsSync, readFileSync, writeFileSync } from "node:fs";

import { DataError, ModelError, UsageError } from "./errors.js";
import {
  CausalLm,
  Encoder,
  FixtureCausalLm,
  FixtureEncoder,
  loadFixtureModel,
} from "./fixtures.js";
import { EmbeddingRecord, scoreLine, writeStore } from "./formats.js";
import { loadHfEncoder } from "./hf.js";

export interface ExportJob {
  input: string;
  model: string;
  out: string;
  maxTokens: number;
  batchSize: number;
  device: string;
}

export const DEFAULT_MAX_TOKENS = 2048;

interface InputRecord {
  id: string;
  texts: Array<{ role: string; text: string }>;
}

export function readInput(path: string): InputRecord[] {
  if (!existsSync(path)) {
    throw new UsageError(`input file not found: ${path}`);
  }
  const records: InputRecord[] = [];
  const seen = new Set<string>();
  const lines = readFileSync(path, "utf-8").split("\n");
  lines.forEach((raw, index) => {
    if (raw.trim() === "") {
      return;
    }
    let obj: Record<string, unknown>;
    try {
      obj = JSON.parse(raw);
    } catch {
      throw new DataError(`line ${index + 1}: malformed JSON`);
    }
    const id = String(obj.id ?? "");
    if (id === "") {
      throw new DataError(`line ${index + 1}: missing id`);
    }
    if (seen.has(id)) {
      throw new DataError(`line ${index + 1}: duplicate id ${id}`);
    }
    seen.add(id);
    const texts: Array<{ role: string; text: string }> = [];
    if (typeof obj.instruction === "string") {
      texts.push({ role: "x", text: obj.instruction });
    }
    if (typeof obj.response === "string") {
      texts.push({ role: "y", text: obj.response });
    }
    for (const [key, role] of [
      ["direct", "d"],
      ["referenced", "r"],
      ["human", "h"],
    ] as const) {
      if (typeof obj[key] === "string") {
        texts.push({ role, text: obj[key] as string });
      }
    }
    if (texts.length === 0) {
      throw new DataError(`line ${index + 1}: no instruction/response fields`);
    }
    records.push({ id, texts });
  });
  return records;
}

export async function loadEncoder(model: string, device: string): Promise<Encoder> {
  if (existsSync(model)) {
    const fixture = loadFixtureModel(model);
    if (fixture instanceof FixtureEncoder) {
      return fixture;
    }
    throw new ModelError(`${model} is a causal-LM fixture, not an encoder`);
  }
  return loadHfEncoder(model, device);
}

export function loadCausalLm(model: string): CausalLm {
  if (existsSync(model)) {
    const fixture = loadFixtureModel(model);
    if (fixture instanceof FixtureCausalLm) {
      return fixture;
    }
    throw new ModelError(`${model} is an encoder fixture, not a causal LM`);
  }
  throw new ModelError(
    `causal-LM export supports fixture model files; ${model} does not exist`,
  );
}

/** Per-dimension max over real token states; zeros when there are none. */
export function maxPool(tokenStates: number[][], dim: number): number[] {
  if (tokenStates.length === 0) {
    return new Array<number>(dim).fill(0);
  }
  const pooled = [...tokenStates[0]];
  for (const state of tokenStates.slice(1)) {
    for (let d = 0; d < dim; d += 1) {
      if (state[d] > pooled[d]) {
        pooled[d] = state[d];
      }
    }
  }
  return pooled;
}

export async function exportEmbeddings(job: ExportJob): Promise<number> {
  const encoder = await loadEncoder(job.model, job.device);
  const inputs = readInput(job.input);
  const records: EmbeddingRecord[] = [];
  for (const record of inputs) {
    for (const { role, text } of record.texts) {
      const output = await encoder.encode(text, job.maxTokens);
      records.push({
        id: `${record.id}:${role}`,
        cls: output.cls,
        pooled: maxPool(output.tokenStates, output.cls.length),
      });
    }
  }
  writeStore(records, job.out);
  return records.length;
}

export function exportLogprobs(job: ExportJob): number {
  const lm = loadCausalLm(job.model);
  const inputs = readInput(job.input);
  const lines: string[] = [];
  for (const record of inputs) {
    const instruction = record.texts.find((t) => t.role === "x")?.text ?? "";
    for (const { role, text } of record.texts) {
      if (role === "x") {
        continue; // instructions are context, not scoring targets
      }
      const [condSum, condCount] = lm.score(instruction, text, job.maxTokens);
      const [uncondSum, uncondCount] = lm.score("", text, job.maxTokens);
      lines.push(
        scoreLine({
          id: `${record.id}:${role}:cond`,
          logprob_sum: condSum,
          token_count: condCount,
        }),
      );
      lines.push(
        scoreLine({
          id: `${record.id}:${role}:uncond`,
          logprob_sum: uncondSum,
          token_count: uncondCount,
        }),
      );
    }
  }
  if (lines.length === 0) {
    throw new DataError("input has no response texts to score");
  }
  writeFileSync(job.out, lines.join("\n") + "\n");
  return lines.length;
}
