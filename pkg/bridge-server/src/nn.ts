// Inference-only network math over checkpoint weight tables. All arithmetic
// in float64; batch size is always 1 on the serve path, so activations are
// plain vectors.

export interface Tensor {
  shape: number[];
  data: Float64Array;
}

export type Weights = Map<string, Tensor>;

export function sigmoid(z: number): number {
  // exp overflow at very negative z yields Infinity -> 1/Infinity -> exact 0,
  // the correct limit; same behavior as the reference
  return 1 / (1 + Math.exp(-z));
}

export function silu(z: number): number {
  return z * sigmoid(z);
}

export function getTensor(weights: Weights, name: string): Tensor {
  const t = weights.get(name);
  if (t === undefined) throw new Error(`missing weight tensor ${name}`);
  return t;
}

/** y = x W + b for one row vector; W shape (fan_in, fan_out), C-order. */
export function linearForward(weights: Weights, name: string, x: Float64Array): Float64Array {
  const W = getTensor(weights, `${name}.W`);
  const b = getTensor(weights, `${name}.b`);
  const [fanIn, fanOut] = W.shape;
  if (x.length !== fanIn) {
    throw new Error(`layer ${name}: input dim ${x.length}, weight expects ${fanIn}`);
  }
  // sum first, bias last: same float64 rounding path as "x @ W + b"
  const y = new Float64Array(fanOut);
  for (let i = 0; i < fanIn; i++) {
    const v = x[i];
    const row = i * fanOut;
    for (let j = 0; j < fanOut; j++) y[j] += v * W.data[row + j];
  }
  for (let j = 0; j < fanOut; j++) y[j] += b.data[j];
  return y;
}

/** Layers prefix.0 .. prefix.{n-1}, SiLU between, linear output. */
export function mlpForward(weights: Weights, prefix: string, x: Float64Array, nLayers: number): Float64Array {
  let h = x;
  for (let i = 0; i < nLayers; i++) {
    h = linearForward(weights, `${prefix}.${i}`, h);
    if (i < nLayers - 1) {
      for (let k = 0; k < h.length; k++) h[k] = silu(h[k]);
    }
  }
  return h;
}

/** Sinusoidal features of one integer diffusion timestep: half = dim/2
 * frequencies exp(-ln(10000) i / (half-1)), output [sin(t f), cos(t f)]. */
export function timestepEmbedding(t: number, dim: number): Float64Array {
  if (dim % 2 !== 0) throw new Error(`embedding dim must be even, got ${dim}`);
  const half = dim / 2;
  const out = new Float64Array(dim);
  for (let i = 0; i < half; i++) {
    const ang = t * Math.exp((-Math.log(10000) * i) / (half - 1));
    out[i] = Math.sin(ang);
    out[half + i] = Math.cos(ang);
  }
  return out;
}

/** 3x3 valid conv, stride 1, one image: x is (h, w, cIn) C-order, W is
 * (3, 3, cIn, cOut). Output (h-2, w-2, cOut) C-order; accumulation follows
 * the im2col patch order di, dj, channel. */
export function conv3x3Forward(
  weights: Weights, name: string, x: Float64Array, h: number, w: number, cIn: number,
): Float64Array {
  const W = getTensor(weights, `${name}.W`);
  const b = getTensor(weights, `${name}.b`);
  const cOut = W.shape[3];
  const oh = h - 2;
  const ow = w - 2;
  const out = new Float64Array(oh * ow * cOut);
  for (let i = 0; i < oh; i++) {
    for (let j = 0; j < ow; j++) {
      const base = (i * ow + j) * cOut;
      for (let di = 0; di < 3; di++) {
        for (let dj = 0; dj < 3; dj++) {
          const xBase = ((i + di) * w + (j + dj)) * cIn;
          const wBase = (di * 3 + dj) * cIn * cOut;
          for (let ch = 0; ch < cIn; ch++) {
            const v = x[xBase + ch];
            const wRow = wBase + ch * cOut;
            for (let o = 0; o < cOut; o++) out[base + o] += v * W.data[wRow + o];
          }
        }
      }
      for (let o = 0; o < cOut; o++) out[base + o] += b.data[o];
    }
  }
  return out;
}

export function concat(...parts: Float64Array[]): Float64Array {
  let n = 0;
  for (const p of parts) n += p.length;
  const out = new Float64Array(n);
  let off = 0;
  for (const p of parts) {
    out.set(p, off);
    off += p.length;
  }
  return out;
}
