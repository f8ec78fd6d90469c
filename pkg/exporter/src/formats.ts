/**
 * Binary SCAREMB1 store writer and the score-JSONL line format.
 *
 * SCAREMB1 layout (little-endian):
 *   magic    8 bytes  "SCAREMB1"
 *   version  u32      1
 *   dim      u32      vector length
 *   count    u64      record count
 *   records  u16 id-byte-length, UTF-8 id, dim f32 cls, dim f32 pooled
 */

import { writeFileSync } from "node:fs";

export const MAGIC = "SCAREMB1";
export const VERSION = 1;

export interface EmbeddingRecord {
  id: string;
  cls: number[];
  pooled: number[];
}

export function encodeStore(records: EmbeddingRecord[]): Buffer {
  if (records.length === 0) {
    throw new Error("store requires at least one record");
  }
  const dim = records[0].cls.length;
  const seen = new Set<string>();
  const chunks: Buffer[] = [];
  const header = Buffer.alloc(24);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt32LE(VERSION, 8);
  header.writeUInt32LE(dim, 12);
  header.writeBigUInt64LE(BigInt(records.length), 16);
  chunks.push(header);
  for (const rec of records) {
    if (rec.cls.length !== dim || rec.pooled.length !== dim) {
      throw new Error(`record ${rec.id}: vector length != ${dim}`);
    }
    if (seen.has(rec.id)) {
      throw new Error(`duplicate record id ${rec.id}`);
    }
    seen.add(rec.id);
    for (const value of [...rec.cls, ...rec.pooled]) {
      if (!Number.isFinite(value)) {
        throw new Error(`record ${rec.id}: non-finite value`);
      }
    }
    const idBytes = Buffer.from(rec.id, "utf-8");
    if (idBytes.length === 0 || idBytes.length > 0xffff) {
      throw new Error(`record id length out of range: ${rec.id.slice(0, 32)}`);
    }
    const body = Buffer.alloc(2 + idBytes.length + 8 * dim);
    body.writeUInt16LE(idBytes.length, 0);
    idBytes.copy(body, 2);
    let offset = 2 + idBytes.length;
    for (const value of rec.cls) {
      body.writeFloatLE(value, offset);
      offset += 4;
    }
    for (const value of rec.pooled) {
      body.writeFloatLE(value, offset);
      offset += 4;
    }
    chunks.push(body);
  }
  return Buffer.concat(chunks);
}

export function writeStore(records: EmbeddingRecord[], path: string): void {
  writeFileSync(path, encodeStore(records));
}

export interface ScoreLine {
  id: string;
  logprob_sum: number;
  token_count: number;
}

export function scoreLine(line: ScoreLine): string {
  if (!Number.isFinite(line.logprob_sum) || line.logprob_sum > 0) {
    throw new Error(`score ${line.id}: logprob_sum must be finite and <= 0`);
  }
  if (!Number.isInteger(line.token_count) || line.token_count < 1) {
    throw new Error(`score ${line.id}: token_count must be a positive integer`);
  }
  return JSON.stringify({
    id: line.id,
    logprob_sum: line.logprob_sum,
    token_count: line.token_count,
  });
}
