// Per-dimension min/max normalization to [-1, 1], read from the checkpoint
// table. Dimensions flagged constant pass through raw in both directions.

export interface NormalizerTable {
  min: number[];
  max: number[];
  constant: (boolean | number)[];
}

export class Normalizer {
  readonly min: Float64Array;
  readonly max: Float64Array;
  readonly constant: boolean[];

  constructor(table: NormalizerTable) {
    if (!Array.isArray(table.min) || !Array.isArray(table.max) || !Array.isArray(table.constant)) {
      throw new Error("normalizer table needs min, max, constant arrays");
    }
    if (table.min.length !== table.max.length || table.min.length !== table.constant.length) {
      throw new Error("normalizer table arrays disagree on length");
    }
    this.min = Float64Array.from(table.min);
    this.max = Float64Array.from(table.max);
    this.constant = table.constant.map(Boolean);
  }

  get dim(): number {
    return this.min.length;
  }

  /** x is row-major with rows of width dim; returns a new array. */
  transform(x: Float64Array): Float64Array {
    const d = this.dim;
    if (x.length % d !== 0) {
      throw new Error(`data length ${x.length} not a multiple of dim ${d}`);
    }
    const out = new Float64Array(x.length);
    for (let k = 0; k < x.length; k++) {
      const j = k % d;
      if (this.constant[j]) {
        out[k] = x[k];
      } else {
        // 2 (x - min) / span - 1, evaluated in exactly this order
        out[k] = (2 * (x[k] - this.min[j])) / (this.max[j] - this.min[j]) - 1;
      }
    }
    return out;
  }

  inverseTransform(x: Float64Array): Float64Array {
    const d = this.dim;
    if (x.length % d !== 0) {
      throw new Error(`data length ${x.length} not a multiple of dim ${d}`);
    }
    const out = new Float64Array(x.length);
    for (let k = 0; k < x.length; k++) {
      const j = k % d;
      if (this.constant[j]) {
        out[k] = x[k];
      } else {
        out[k] = (x[k] + 1) * 0.5 * (this.max[j] - this.min[j]) + this.min[j];
      }
    }
    return out;
  }
}
