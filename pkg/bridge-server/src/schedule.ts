// Linear-beta noise schedule and the DDIM timestep subsequence.
//
// Both are pinned bit-for-bit: betas come from the linspace formula
// (step = span / (T-1), beta_i = i * step + beta_min, last set exactly),
// alpha_bars from a sequential scalar product. Any runtime computing them
// the obvious way gets identical float64 values.

export interface NoiseSchedule {
  T: number;
  betaMin: number;
  betaMax: number;
  betas: Float64Array;
  alphaBars: Float64Array;
}

export function makeSchedule(T: number, betaMin: number, betaMax: number): NoiseSchedule {
  if (!Number.isInteger(T) || T < 1) {
    throw new Error(`T must be >= 1, got ${T}`);
  }
  if (!(0 < betaMin && betaMin <= betaMax && betaMax < 1)) {
    throw new Error(`need 0 < beta_min <= beta_max < 1, got [${betaMin}, ${betaMax}]`);
  }
  const betas = new Float64Array(T);
  if (T === 1) {
    betas[0] = betaMin;
  } else {
    const step = (betaMax - betaMin) / (T - 1);
    for (let i = 0; i < T; i++) betas[i] = i * step + betaMin;
    betas[T - 1] = betaMax;
  }
  const alphaBars = new Float64Array(T);
  let acc = 1.0;
  for (let i = 0; i < T; i++) {
    acc *= 1.0 - betas[i];
    alphaBars[i] = acc;
  }
  return { T, betaMin, betaMax, betas, alphaBars };
}

/** Decreasing timestep subsequence tau_0 > ... > tau_{S-1}; floor(x + 0.5)
 * is the contractual rounding rule (banker's rounding differs on halves). */
export function ddimTaus(T: number, steps: number): Int32Array {
  if (!(steps >= 1 && steps <= T)) {
    throw new Error(`steps must be in [1, ${T}], got ${steps}`);
  }
  if (steps === 1) return Int32Array.of(T - 1);
  const out = new Int32Array(steps);
  for (let i = 0; i < steps; i++) {
    out[i] = Math.floor(((T - 1) * (steps - 1 - i)) / (steps - 1) + 0.5);
  }
  return out;
}
