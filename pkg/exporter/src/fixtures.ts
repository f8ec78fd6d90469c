/**
 * Tiny deterministic fixture models, loadable from JSON files. They stand
 * in for real encoders / causal LMs in tests and CI: small enough to ship
 * as text, faithful enough to exercise every exporter code path
 * (special-token handling, truncation, conditional vs unconditional
 * scoring).
 */

import { readFileSync } from "node:fs";

/** Lowercased word tokens; mirrors a simple word-piece-free tokenizer. */
export function tokenizeWords(text: string): string[] {
  return text.toLowerCase().match(/[a-z0-9']+/g) ?? [];
}

export interface EncoderOutput {
  /** hidden state of the designated CLS position */
  cls: number[];
  /** hidden states of real (non-special, non-padding) token positions */
  tokenStates: number[][];
}

export interface Encoder {
  encode(text: string, maxTokens: number): Promise<EncoderOutput>;
}

interface FixtureEncoderSpec {
  type: "fixture-encoder";
  dim: number;
  clsBias: number[];
  sep: number[];
  unk: number[];
  vocab: Record<string, number[]>;
}

/**
 * Embedding-lookup encoder: the sequence is [CLS] + tokens + [SEP]; each
 * real token maps to its vocabulary vector (unknown words share one unk
 * vector), the CLS state is a bias plus the mean of the real token
 * states, and the SEP state is a fixed vector the exporter must exclude
 * from pooling.
 */
export class FixtureEncoder implements Encoder {
  readonly dim: number;
  private spec: FixtureEncoderSpec;

  constructor(spec: FixtureEncoderSpec) {
    this.dim = spec.dim;
    for (const [word, vec] of Object.entries(spec.vocab)) {
      if (vec.length !== spec.dim) {
        throw new Error(`fixture vocab entry ${word} has wrong dimension`);
      }
    }
    this.spec = spec;
  }

  async encode(text: string, maxTokens: number): Promise<EncoderOutput> {
    // reserve two positions for [CLS] and [SEP]
    const budget = Math.max(0, maxTokens - 2);
    const tokens = tokenizeWords(text).slice(0, budget);
    const states = tokens.map(
      (t) => this.spec.vocab[t] ?? this.spec.unk,
    );
    const cls = [...this.spec.clsBias];
    if (states.length > 0) {
      for (let d = 0; d < this.dim; d += 1) {
        let sum = 0;
        for (const state of states) {
          sum += state[d];
        }
        cls[d] += sum / states.length;
      }
    }
    return { cls, tokenStates: states.map((s) => [...s]) };
  }
}

export interface CausalLm {
  /** (logprob_sum, token_count) of target conditioned on context */
  score(context: string, target: string, maxTokens: number): [number, number];
}

interface FixtureCausalLmSpec {
  type: "fixture-causal-lm";
  probs: Record<string, number>;
  unkProb: number;
  contextBoost: number;
}

/**
 * Unigram model with prefix conditioning: a token already present in the
 * context (instruction plus previously scored target tokens) has its
 * weight multiplied by contextBoost before renormalizing over the
 * vocabulary plus a single unknown bucket. With an empty context and no
 * boost the per-token probability is exactly the table entry.
 */
export class FixtureCausalLm implements CausalLm {
  private spec: FixtureCausalLmSpec;

  constructor(spec: FixtureCausalLmSpec) {
    if (spec.unkProb < 0 || spec.contextBoost <= 0) {
      throw new Error("fixture LM needs unkProb >= 0 and contextBoost > 0");
    }
    this.spec = spec;
  }

  private tokenProb(token: string, context: Set<string>): number {
    const base = this.spec.probs[token];
    if (base === undefined && this.spec.unkProb === 0) {
      throw new Error(`token ${token} not in fixture vocabulary`);
    }
    let z = this.spec.unkProb;
    for (const [word, weight] of Object.entries(this.spec.probs)) {
      z += context.has(word) ? weight * this.spec.contextBoost : weight;
    }
    const weight =
      base === undefined
        ? this.spec.unkProb
        : context.has(token)
          ? base * this.spec.contextBoost
          : base;
    return weight / z;
  }

  score(context: string, target: string, maxTokens: number): [number, number] {
    const contextTokens = tokenizeWords(context).slice(0, maxTokens);
    const targetTokens = tokenizeWords(target).slice(0, maxTokens);
    if (targetTokens.length === 0) {
      throw new Error("target has no tokens under the model tokenizer");
    }
    const seen = new Set(contextTokens);
    let logprob = 0;
    for (const token of targetTokens) {
      logprob += Math.log(this.tokenProb(token, seen));
      seen.add(token);
    }
    return [logprob, targetTokens.length];
  }
}

export function loadFixtureModel(path: string): FixtureEncoder | FixtureCausalLm {
  let parsed: unknown;
  try {
    parsed = JSON.parse(readFileSync(path, "utf-8"));
  } catch (err) {
    throw new Error(`cannot load fixture model ${path}: ${String(err)}`);
  }
  const spec = parsed as { type?: string };
  if (spec.type === "fixture-encoder") {
    return new FixtureEncoder(parsed as FixtureEncoderSpec);
  }
  if (spec.type === "fixture-causal-lm") {
    return new FixtureCausalLm(parsed as FixtureCausalLmSpec);
  }
  throw new Error(`unknown fixture model type in ${path}`);
}
