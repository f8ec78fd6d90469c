/**
 * Optional transformers.js path for real encoder models. The dependency
 * is not installed by default (fixture models cover CI); when
 * @xenova/transformers is present, a model id such as
 * "Xenova/all-MiniLM-L6-v2" runs token-level feature extraction.
 *
 * Special-token convention for BERT/RoBERTa-family models: position 0 is
 * the designated CLS state, the final non-padding position is the
 * closing special token, and both are excluded from max pooling along
 * with padding.
 */

import { Encoder, EncoderOutput } from "./fixtures.js";
import { ModelError } from "./errors.js";

export async function loadHfEncoder(model: string, device: string): Promise<Encoder> {
  let pipelineFactory: any;
  try {
    const transformers: any = await import("@xenova/transformers" as string);
    pipelineFactory = transformers.pipeline;
  } catch {
    throw new ModelError(
      `model ${model} is not a fixture file and @xenova/transformers is not ` +
        "installed; install it for real-model export or pass a fixture JSON",
    );
  }
  let extractor: any;
  try {
    extractor = await pipelineFactory("feature-extraction", model, { device });
  } catch (err) {
    throw new ModelError(`cannot load model ${model}: ${String(err)}`);
  }

  return {
    async encode(text: string, maxTokens: number): Promise<EncoderOutput> {
      const output = await extractor(text, { pooling: "none" });
      // dims: [batch, seq, dim] for a single text
      const [, seq, dim] = output.dims as [number, number, number];
      const data = output.data as Float32Array;
      const length = Math.min(seq, maxTokens);
      const row = (position: number) =>
        Array.from(data.slice(position * dim, (position + 1) * dim));
      const cls = row(0);
      const tokenStates: number[][] = [];
      for (let position = 1; position < length - 1; position += 1) {
        tokenStates.push(row(position));
      }
      return { cls, tokenStates };
    },
  };
}
