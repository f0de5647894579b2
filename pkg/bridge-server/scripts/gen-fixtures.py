#!/usr/bin/env python3
"""Regenerates test/fixtures/ from the reference implementation.

    python3 scripts/gen-fixtures.py

Every expected value in the fixtures is computed by the installed deskbot
package, so the TypeScript suite checks conformance against the live
reference instead of hand-typed numbers. Committed fixtures only change
when the reference numerics change, which is exactly when they should.
"""

import json
from pathlib import Path

import numpy as np

from deskbot.bridge import golden_frames, spec_of
from deskbot.noise_rng import NoiseRng
from deskbot.policy import BCPolicy, DiffusionPolicy
from deskbot.policy.checkpoint import checkpoint_bytes
from deskbot.policy.dataset import ObsLayout, WindowDataset
from deskbot.policy.diffusion import ddim_taus
from deskbot.policy.nn import timestep_embedding
from deskbot.policy.normalize import MinMaxNormalizer
from deskbot.policy.schedule import make_schedule

OUT = Path(__file__).resolve().parent.parent / "test" / "fixtures"


def dump(name: str, obj) -> None:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
    (OUT / name).write_text(text + "\n")
    print(f"wrote {name}")


def dataset(layout: ObsLayout, n: int, T_o: int, T_p: int, a_dim: int, seed: int):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, T_o, layout.dim))
    Y = rng.standard_normal((n, T_p, a_dim))
    return WindowDataset(X, Y, np.zeros(n, dtype=np.int64),
                         np.arange(n, dtype=np.int64), layout, T_o, T_p)


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)

    # --- checkpoints: tiny policies, barely trained, inference-shaped ---
    # state_dp matches the golden handshake spec (x[2], action_dim 1,
    # T_o 2 / T_p 2 / T_a 1) so the served hello_ack must equal the golden.
    golden_layout = ObsLayout(("x",), ((2,),))
    state_dp = DiffusionPolicy(hidden=(16,), embedding_dim=8,
                               denoiser_hidden=(32, 32), T=50,
                               T_o=2, T_p=2, T_a=1, epochs=6,
                               seed=3).fit_dataset(dataset(golden_layout, 64, 2, 2, 1, 0))
    state_bc = BCPolicy(hidden=(16,), embedding_dim=8, trunk_hidden=(16,),
                        T_o=2, T_p=2, T_a=1, epochs=6,
                        seed=2).fit_dataset(dataset(golden_layout, 64, 2, 2, 1, 1))
    grid_layout = ObsLayout(("eef", "grid"), ((3,), (4, 4, 2)))
    grid_dp = DiffusionPolicy(encoder="grid-conv", grid_field="grid",
                              hidden=(16,), embedding_dim=8,
                              denoiser_hidden=(32,), T=30,
                              T_o=2, T_p=3, T_a=2, epochs=4,
                              seed=5).fit_dataset(dataset(grid_layout, 48, 2, 3, 2, 2))
    policies = {"state_dp": state_dp, "state_bc": state_bc, "grid_dp": grid_dp}
    for name, policy in policies.items():
        (OUT / f"ckpt_{name}.json").write_bytes(checkpoint_bytes(policy))
        print(f"wrote ckpt_{name}.json")
    dump("specs.json", {name: spec_of(p) for name, p in policies.items()})

    # --- infer parity: expected chunks as the server computes them ---
    # obs is cast to f32 at ingress before sampling; the raw_f64 case pins
    # that cast with inputs that are not f32-representable.
    cases = []
    for name, policy in policies.items():
        d = policy.layout_.dim
        for i, (seed, steps) in enumerate([(0, None), (7, 7), (123, 1),
                                           (2**40 + 9, 25)]):
            obs = np.random.default_rng(100 + i).standard_normal(
                (policy.T_o, d)).astype(np.float32)
            chunk = policy.sample_chunk(obs, seed=seed, steps=steps)
            cases.append({
                "ckpt": name, "seed": seed, "steps": steps,
                "obs": [[float(v) for v in row] for row in obs],
                "chunk": [[float(v) for v in row] for row in chunk],
            })
    raw = [[0.1, 0.2], [-0.3, 1.7]]
    chunk = state_dp.sample_chunk(np.asarray(raw, dtype=np.float32), seed=5, steps=10)
    cases.append({"ckpt": "state_dp", "seed": 5, "steps": 10, "obs": raw,
                  "chunk": [[float(v) for v in row] for row in chunk]})
    dump("parity.json", cases)

    # --- golden frames ---
    dump("goldens.json", {k: v.hex() for k, v in golden_frames().items()})

    # --- noise rng ---
    rngs = {}
    for seed in (0, 1, 42, 2**52 + 3):
        u64 = NoiseRng(seed)
        uni = NoiseRng(seed)
        nrm5 = NoiseRng(seed)
        nrm3 = NoiseRng(seed)
        nrm3.normals(3)
        rngs[str(seed)] = {
            "u64": [str(u64.next_u64()) for _ in range(5)],
            "uniform": [uni.uniform() for _ in range(5)],
            "normals5": list(NoiseRng(seed).normals(5)),
            "normals4": list(NoiseRng(seed).normals(4)),
            # normals(3) burns two full pairs; the next uniform must match
            # a fresh generator's fifth draw
            "uniform_after_normals3": nrm3.uniform(),
        }
        nrm5.normals(5)
    dump("rng.json", rngs)

    # --- schedule + sampler timesteps ---
    scheds = []
    for T, bmin, bmax in [(100, 1e-4, 0.02), (5, 0.1, 0.3), (1, 1e-4, 0.02),
                          (250, 1e-5, 0.5)]:
        s = make_schedule(T, bmin, bmax)
        scheds.append({"T": T, "beta_min": bmin, "beta_max": bmax,
                       "betas": list(s.betas), "alpha_bars": list(s.alpha_bars)})
    taus = [{"T": T, "steps": S, "taus": [int(v) for v in ddim_taus(T, S)]}
            for T, S in [(100, 10), (100, 100), (100, 1), (7, 3), (50, 7), (3, 2)]]
    dump("schedule.json", {"schedules": scheds, "taus": taus})

    # --- timestep embedding ---
    temb = [{"t": t, "dim": dim, "row": list(timestep_embedding(np.array([t]), dim)[0])}
            for t, dim in [(0, 32), (7, 32), (49, 32), (3, 8)]]
    dump("temb.json", temb)

    # --- normalizer ---
    rng = np.random.default_rng(9)
    data = rng.standard_normal((20, 4)) * [1.0, 10.0, 0.0, 0.01] + [0, -5, 0.7, 2]
    norm = MinMaxNormalizer().fit(data)
    rows = rng.standard_normal((3, 4))
    dump("normalizer.json", {
        "table": norm.to_json(),
        "rows": [list(r) for r in rows],
        "transformed": [list(r) for r in norm.transform(rows)],
        "inverted": [list(r) for r in norm.inverse_transform(rows)],
    })


if __name__ == "__main__":
    main()
