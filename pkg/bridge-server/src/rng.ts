// Deterministic sampling noise, matching the reference generator exactly:
// splitmix64 for the 64-bit stream, (z >> 11) * 2^-53 uniforms, Box-Muller
// pairs. normals(n) consumes ceil(n / 2) full pairs; the unused half of an
// odd final pair is discarded, never cached.

const M64 = (1n << 64n) - 1n;
const GAMMA = 0x9e3779b97f4a7c15n;
const MIX1 = 0xbf58476d1ce4e5b9n;
const MIX2 = 0x94d049bb133111ebn;

export class NoiseRng {
  private state: bigint;

  constructor(seed: number | bigint) {
    this.state = BigInt(seed) & M64;
  }

  nextU64(): bigint {
    this.state = (this.state + GAMMA) & M64;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * MIX1) & M64;
    z = ((z ^ (z >> 27n)) * MIX2) & M64;
    return z ^ (z >> 31n);
  }

  uniform(): number {
    // exact: the 53-bit mantissa fits a double, so Number() loses nothing
    return Number(this.nextU64() >> 11n) * 2 ** -53;
  }

  normalPair(): [number, number] {
    const u1 = 1 - this.uniform(); // (0, 1]: keeps log() finite
    const u2 = this.uniform();
    const r = Math.sqrt(-2 * Math.log(u1));
    const a = 2 * Math.PI * u2;
    return [r * Math.cos(a), r * Math.sin(a)];
  }

  normals(n: number): Float64Array {
    const out = new Float64Array(n);
    for (let i = 0; i < n; i += 2) {
      const [z0, z1] = this.normalPair();
      out[i] = z0;
      if (i + 1 < n) out[i + 1] = z1;
    }
    return out;
  }
}
