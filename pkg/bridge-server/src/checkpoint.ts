// Version-1 checkpoint files: one canonical JSON document holding encoder
// and denoiser weight tables, normalizer stats, the noise schedule, and the
// chunking parameters. Parsed independently of the producer; anything
// structurally incomplete or from another version is rejected.

import { readFileSync } from "node:fs";

import { Normalizer } from "./normalize.js";
import type { Tensor, Weights } from "./nn.js";

export const CHECKPOINT_VERSION = 1;

export class CheckpointError extends Error {}

export interface ObsField {
  dtype: string;
  shape: number[];
}

/** Fixed field order inside a flat observation vector: names sorted, each
 * field C-order, concatenated. */
export class ObsLayout {
  readonly names: string[];
  readonly shapes: number[][];

  constructor(fields: Record<string, ObsField>) {
    this.names = Object.keys(fields).sort();
    this.shapes = this.names.map((n) => fields[n].shape.map(Number));
  }

  get dim(): number {
    let d = 0;
    for (const s of this.shapes) d += s.reduce((a, b) => a * b, 1);
    return d;
  }

  shapeOf(name: string): number[] {
    const i = this.names.indexOf(name);
    if (i < 0) throw new CheckpointError(`field ${name} not in observation layout`);
    return this.shapes[i];
  }

  /** [start, stop) of a field inside the flat vector. */
  sliceOf(name: string): [number, number] {
    let off = 0;
    for (let i = 0; i < this.names.length; i++) {
      const n = this.shapes[i].reduce((a, b) => a * b, 1);
      if (this.names[i] === name) return [off, off + n];
      off += n;
    }
    throw new CheckpointError(`field ${name} not in observation layout`);
  }
}

export interface EncoderSpec {
  kind: string;
  hidden: number[];
  embeddingDim: number;
  gridField: string | null;
  layout: ObsLayout;
  weights: Weights;
}

export interface DenoiserSpec {
  kind: string;
  hidden: number[];
  tEmbedDim: number;
  outDim: number;
  weights: Weights;
}

export interface Checkpoint {
  encoder: EncoderSpec;
  denoiser: DenoiserSpec;
  obsNorm: Normalizer;
  actNorm: Normalizer;
  schedule: { T: number; betaMin: number; betaMax: number } | null;
  chunk: { T_o: number; T_p: number; T_a: number };
  provenance: Record<string, unknown>;
  obsFieldsJson: Record<string, ObsField>;
}

function need(obj: Record<string, unknown>, key: string): unknown {
  const v = obj[key];
  if (v === undefined || v === null) {
    throw new CheckpointError(`checkpoint missing or malformed field: '${key}'`);
  }
  return v;
}

function parseWeights(obj: Record<string, { shape: number[]; data: number[] }>): Weights {
  const out: Weights = new Map();
  for (const [name, spec] of Object.entries(obj)) {
    const shape = spec.shape.map(Number);
    const size = shape.reduce((a, b) => a * b, 1);
    if (!Array.isArray(spec.data) || spec.data.length !== size) {
      throw new CheckpointError(
        `checkpoint missing or malformed field: weight ${name} has ${spec.data?.length} values, shape wants ${size}`,
      );
    }
    const t: Tensor = { shape, data: Float64Array.from(spec.data) };
    out.set(name, t);
  }
  return out;
}

export function checkpointFromJson(obj: Record<string, unknown>): Checkpoint {
  const version = obj.version;
  if (version !== CHECKPOINT_VERSION) {
    throw new CheckpointError(
      `checkpoint version ${JSON.stringify(version ?? null)}, this build reads ${CHECKPOINT_VERSION}`,
    );
  }
  try {
    const enc = need(obj, "encoder") as Record<string, any>;
    const den = need(obj, "denoiser") as Record<string, any>;
    const norm = need(obj, "normalizer") as Record<string, any>;
    const chunk = need(obj, "chunk") as Record<string, any>;
    const obsFields = need(enc, "obs_fields") as Record<string, ObsField>;
    const schedRaw = obj.schedule as Record<string, number> | null | undefined;
    return {
      encoder: {
        kind: String(need(enc, "kind")),
        hidden: (need(enc, "hidden") as number[]).map(Number),
        embeddingDim: Number(need(enc, "embedding_dim")),
        gridField: (enc.grid_field ?? null) as string | null,
        layout: new ObsLayout(obsFields),
        weights: parseWeights(need(enc, "weights") as any),
      },
      denoiser: {
        kind: String(need(den, "kind")),
        hidden: (need(den, "hidden") as number[]).map(Number),
        tEmbedDim: Number(den.t_embed_dim ?? 32),
        outDim: Number(need(den, "out_dim")),
        weights: parseWeights(need(den, "weights") as any),
      },
      obsNorm: new Normalizer(need(norm, "obs") as any),
      actNorm: new Normalizer(need(norm, "action") as any),
      schedule: schedRaw
        ? {
            T: Number(need(schedRaw as any, "T")),
            betaMin: Number(need(schedRaw as any, "beta_min")),
            betaMax: Number(need(schedRaw as any, "beta_max")),
          }
        : null,
      chunk: {
        T_o: Number(need(chunk, "T_o")),
        T_p: Number(need(chunk, "T_p")),
        T_a: Number(need(chunk, "T_a")),
      },
      provenance: (obj.provenance ?? {}) as Record<string, unknown>,
      obsFieldsJson: obsFields,
    };
  } catch (e) {
    if (e instanceof CheckpointError) throw e;
    throw new CheckpointError(`checkpoint missing or malformed field: ${(e as Error).message}`);
  }
}

export function loadCheckpoint(path: string): Checkpoint {
  let obj: unknown;
  try {
    obj = JSON.parse(readFileSync(path, "utf-8"));
  } catch (e) {
    throw new CheckpointError(`cannot read checkpoint ${path}: ${(e as Error).message}`);
  }
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    throw new CheckpointError(`cannot read checkpoint ${path}: not a JSON object`);
  }
  return checkpointFromJson(obj as Record<string, unknown>);
}
