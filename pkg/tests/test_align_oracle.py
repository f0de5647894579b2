"""Randomized equivalence between align() and the brute-force reference."""

import random
import time

from deskbot.frames import FieldValue, UnifiedFrame
from deskbot.recorder import RawRecording, SessionMeta, StreamSpec, align

from reference_align import reference_align

META = SessionMeta(task="reach", operator="qa", seed=0, view_id="front")


def random_recording(r: random.Random):
    """1 command + 1..3 obs/state streams; jitter, drops, occasional ties."""
    n_obs = r.randint(1, 3)
    duration_s = r.uniform(0.25, 0.5)
    streams = []
    roles = ["observation", "state"]
    for k in range(n_obs):
        hz = r.randint(10, 200)
        streams.append((StreamSpec(f"obs/s{k}", hz, roles[k % 2]), hz))
    cmd_hz = r.randint(10, 200)
    streams.append((StreamSpec("cmd/c", cmd_hz, "command"), cmd_hz))

    frames = {}
    for si, (spec, hz) in enumerate(streams):
        name = f"x{si}"  # merged obs fields must have unique names
        period = 1e9 / hz
        t = r.uniform(0, period)  # staggered starts
        fs = []
        seq = 0
        while t < duration_s * 1e9:
            jitter = r.uniform(-0.3, 0.3) * period
            t_ns = max(0, round(t + jitter))
            if r.random() > 0.12:  # ~12% drop rate
                fs.append(UnifiedFrame(spec.topic, "dev", seq, t_ns,
                                       {name: FieldValue.f32([float(seq)])}))
                seq += 1
                if r.random() < 0.05:  # duplicate timestamp, higher seq
                    fs.append(UnifiedFrame(spec.topic, "dev", seq, t_ns,
                                           {name: FieldValue.f32([float(seq)])}))
                    seq += 1
            t += period
        if len(fs) < 2:  # keep validate/align preconditions satisfiable
            fs = [UnifiedFrame(spec.topic, "dev", i, round(i * period),
                               {name: FieldValue.f32([float(i)])}) for i in range(2)]
        fs.sort(key=lambda f: (f.t_ns, f.seq))
        frames[spec.topic] = fs
    return RawRecording(meta=META, specs=[s for s, _ in streams], frames=frames)


def test_align_matches_bruteforce_on_random_timelines():
    r = random.Random(20260816)
    t_start = time.monotonic()
    n_nonempty = 0
    for case in range(1000):
        rec = random_recording(r)
        min_obs = min(s.nominal_hz for s in rec.specs if s.role != "command")
        align_hz = r.uniform(2.0, min_obs)
        if r.random() < 0.5:
            budget = None
        else:
            budget = {s.topic: r.randint(1, 4) * s.nominal_period_ns
                      for s in rec.specs}
        ep = align(rec, align_hz=align_hz, staleness_max=budget)
        ref = reference_align(rec, align_hz=align_hz, staleness_max=budget)
        assert ep.ticks == ref, f"case {case} diverged"
        if ep.ticks:
            n_nonempty += 1
    elapsed = time.monotonic() - t_start
    assert n_nonempty > 500  # the generator must exercise real alignments
    assert elapsed < 5.0, f"alignment oracle sweep took {elapsed:.2f}s"
