"""Capture, frequency QA, timestamp alignment, and episode persistence.

Streams are captured at their native rates and aligned afterwards onto a
fixed-frequency tick grid: observation/state streams contribute the latest
frame at or before each tick (zero-order hold), the command stream
contributes the earliest frame after the tick (the action label). Ticks at
the episode ends that violate per-stream staleness bounds, or that have no
lookahead command, are trimmed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bus import Bus, Subscription
from .errors import (
    AlignRateTooHigh,
    EmptyOverlap,
    EpisodeIOError,
    InsufficientFrames,
    NoData,
    SchemaMismatch,
)
from .frames import FieldValue, UnifiedFrame, decode_json, encode_json, fields_from_json, fields_to_json

ROLES = ("observation", "state", "command")


@dataclass(frozen=True)
class StreamSpec:
    topic: str
    nominal_hz: float
    role: str
    rate_tolerance_frac: float = 0.05
    max_period_std_frac: float = 0.25

    def __post_init__(self):
        if self.nominal_hz <= 0:
            raise ValueError(f"nominal_hz must be > 0, got {self.nominal_hz}")
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        for name in ("rate_tolerance_frac", "max_period_std_frac"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {v}")

    @property
    def nominal_period_ns(self) -> int:
        return round(1e9 / self.nominal_hz)


@dataclass
class SessionMeta:
    task: str
    operator: str
    seed: int
    view_id: str


@dataclass
class RawRecording:
    meta: SessionMeta
    specs: list[StreamSpec]
    frames: dict[str, list[UnifiedFrame]]
    drops: dict[str, int] = field(default_factory=dict)


@dataclass
class TopicFrequency:
    topic: str
    n_frames: int
    mean_hz: float
    period_std_ns: float
    passed: bool
    reasons: list[str]


@dataclass
class FrequencyReport:
    topics: dict[str, TopicFrequency]

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.topics.values())


@dataclass
class AlignedTick:
    t_ns: int
    obs: dict[str, FieldValue]
    action: dict[str, FieldValue]
    staleness_ns: dict[str, int]

    def __eq__(self, other):
        return (
            isinstance(other, AlignedTick)
            and self.t_ns == other.t_ns
            and self.obs == other.obs
            and self.action == other.action
            and self.staleness_ns == other.staleness_ns
        )


@dataclass
class AlignedEpisode:
    align_hz: float
    ticks: list[AlignedTick]
    meta: dict

    def __eq__(self, other):
        return (
            isinstance(other, AlignedEpisode)
            and self.align_hz == other.align_hz
            and self.ticks == other.ticks
            and self.meta == other.meta
        )

    def __len__(self):
        return len(self.ticks)


class Recorder:
    """Captures a set of unified streams from the bus exactly once each.

    Subscribe happens at construction so nothing published afterwards is
    missed; call :meth:`pump` periodically during long sessions and
    :meth:`stop` to assemble the recording.
    """

    def __init__(self, bus: Bus, specs: list[StreamSpec], meta: SessionMeta,
                 maxlen: int = 65536):
        self._specs = list(specs)
        self._meta = meta
        self._frames: dict[str, dict[tuple[str, int], UnifiedFrame]] = {
            s.topic: {} for s in specs
        }
        self._subs: dict[str, Subscription] = {
            s.topic: bus.subscribe(s.topic, maxlen=maxlen) for s in specs
        }

    def pump(self) -> None:
        for topic, sub in self._subs.items():
            store = self._frames[topic]
            for msg in sub.pop_all():
                frame = decode_json(msg.payload)
                key = (frame.source_id, frame.seq)
                if key not in store:  # dedup: (topic, source, seq) stored once
                    store[key] = frame

    def stop(self) -> RawRecording:
        self.pump()
        drops: dict[str, int] = {}
        for topic, sub in self._subs.items():
            for t, n in sub.dropped.items():
                drops[t] = drops.get(t, 0) + n
            sub.close()
        frames: dict[str, list[UnifiedFrame]] = {}
        for spec in self._specs:
            stored = sorted(self._frames[spec.topic].values(), key=lambda f: (f.t_ns, f.seq))
            if not stored:
                raise NoData(f"stream {spec.topic!r} produced zero frames")
            frames[spec.topic] = stored
        return RawRecording(meta=self._meta, specs=self._specs, frames=frames, drops=drops)


def validate_frequencies(rec: RawRecording, specs: list[StreamSpec] | None = None) -> FrequencyReport:
    """Check each stream's mean rate and inter-arrival jitter against spec."""
    specs = rec.specs if specs is None else specs
    out: dict[str, TopicFrequency] = {}
    for spec in specs:
        frames = rec.frames.get(spec.topic, [])
        n = len(frames)
        if n < 2:
            raise InsufficientFrames(f"stream {spec.topic!r} has {n} frame(s); need >= 2")
        t = np.array([f.t_ns for f in frames], dtype=np.int64)
        span_s = (t[-1] - t[0]) / 1e9
        mean_hz = (n - 1) / span_s if span_s > 0 else float("inf")
        gaps = np.diff(t).astype(np.float64)
        period_std_ns = float(np.std(gaps))
        reasons = []
        if abs(mean_hz - spec.nominal_hz) > spec.rate_tolerance_frac * spec.nominal_hz:
            reasons.append(
                f"mean_hz {mean_hz:.3f} outside {spec.nominal_hz} "
                f"+/- {spec.rate_tolerance_frac * 100:.0f}%"
            )
        period_ns = 1e9 / spec.nominal_hz
        if period_std_ns > spec.max_period_std_frac * period_ns:
            reasons.append(
                f"period std {period_std_ns:.0f} ns exceeds "
                f"{spec.max_period_std_frac:.2f}x nominal period"
            )
        out[spec.topic] = TopicFrequency(
            topic=spec.topic,
            n_frames=n,
            mean_hz=float(mean_hz),
            period_std_ns=period_std_ns,
            passed=not reasons,
            reasons=reasons,
        )
    return FrequencyReport(topics=out)


def default_staleness_max(specs: list[StreamSpec]) -> dict[str, int]:
    """Two nominal periods per stream: tolerates one dropped frame."""
    return {s.topic: 2 * s.nominal_period_ns for s in specs}


def align(rec: RawRecording, align_hz: float = 10.0,
          staleness_max: dict[str, int] | None = None) -> AlignedEpisode:
    """Resample a recording onto a fixed tick grid.

    Tick 0 sits at the latest first-frame timestamp across all streams; the
    grid step is round(1e9 / align_hz). Timestamp ties within a stream are
    broken toward the higher seq (latest information wins).
    """
    specs = rec.specs
    obs_specs = [s for s in specs if s.role in ("observation", "state")]
    cmd_specs = [s for s in specs if s.role == "command"]
    if len(cmd_specs) > 1:
        raise SchemaMismatch("at most one command stream is supported")
    if not obs_specs:
        raise SchemaMismatch("need at least one observation/state stream")
    min_nominal = min(s.nominal_hz for s in obs_specs)
    if align_hz > min_nominal:
        raise AlignRateTooHigh(
            f"align_hz {align_hz} exceeds slowest observation/state rate {min_nominal}"
        )
    if staleness_max is None:
        staleness_max = default_staleness_max(specs)

    # Sorted (t_ns, seq) views per stream; ties resolved by seq order.
    times: dict[str, np.ndarray] = {}
    ordered: dict[str, list[UnifiedFrame]] = {}
    for spec in specs:
        frames = sorted(rec.frames[spec.topic], key=lambda f: (f.t_ns, f.seq))
        if not frames:
            raise NoData(f"stream {spec.topic!r} is empty")
        ordered[spec.topic] = frames
        times[spec.topic] = np.array([f.t_ns for f in frames], dtype=np.int64)

    t0 = max(int(times[s.topic][0]) for s in specs)
    if any(int(times[s.topic][-1]) < t0 for s in specs):
        raise EmptyOverlap("streams share no time window")
    t_end = max(int(times[s.topic][-1]) for s in specs)
    step = round(1e9 / align_hz)
    n_candidates = (t_end - t0) // step + 1

    # Field names must be unique across the merged observation streams.
    seen_fields: dict[str, str] = {}
    for spec in obs_specs:
        for name in ordered[spec.topic][0].fields:
            if name in seen_fields:
                raise SchemaMismatch(
                    f"field {name!r} appears on both {seen_fields[name]!r} and {spec.topic!r}"
                )
            seen_fields[name] = spec.topic

    ticks: list[AlignedTick | None] = []
    for k in range(n_candidates):
        t_tick = t0 + k * step
        obs: dict[str, FieldValue] = {}
        staleness: dict[str, int] = {}
        ok = True
        for spec in obs_specs:
            # latest frame with t_ns <= tick
            idx = int(np.searchsorted(times[spec.topic], t_tick, side="right")) - 1
            if idx < 0:
                ok = False
                break
            frame = ordered[spec.topic][idx]
            staleness[spec.topic] = t_tick - frame.t_ns
            obs.update(frame.fields)
        if not ok:
            ticks.append(None)
            continue
        action: dict[str, FieldValue] = {}
        for spec in cmd_specs:
            # earliest frame with t_ns > tick (lookahead label)
            idx = int(np.searchsorted(times[spec.topic], t_tick, side="right"))
            if idx >= len(ordered[spec.topic]):
                ticks.append(None)
                ok = False
                break
            frame = ordered[spec.topic][idx]
            staleness[spec.topic] = frame.t_ns - t_tick
            action.update(frame.fields)
        if not ok:
            continue
        ticks.append(AlignedTick(t_ns=t_tick, obs=obs, action=action, staleness_ns=staleness))

    def violates(tick: AlignedTick | None) -> bool:
        if tick is None:
            return True
        return any(
            tick.staleness_ns[t] > staleness_max.get(t, 2**63 - 1)
            for t in tick.staleness_ns
        )

    lo, hi = 0, len(ticks)
    while lo < hi and violates(ticks[lo]):
        lo += 1
    while hi > lo and violates(ticks[hi - 1]):
        hi -= 1
    kept = [t for t in ticks[lo:hi] if t is not None]

    meta = {
        "task": rec.meta.task,
        "operator": rec.meta.operator,
        "seed": rec.meta.seed,
        "view_id": rec.meta.view_id,
        "align_hz": align_hz,
        "streams": _stream_stats(rec),
        "drops": dict(sorted(rec.drops.items())),
    }
    return AlignedEpisode(align_hz=align_hz, ticks=kept, meta=meta)


def _stream_stats(rec: RawRecording) -> list[dict]:
    report = validate_frequencies(rec)
    out = []
    for spec in rec.specs:
        tf = report.topics[spec.topic]
        out.append({
            "topic": spec.topic,
            "nominal_hz": spec.nominal_hz,
            "role": spec.role,
            "n_frames": tf.n_frames,
            "mean_hz": tf.mean_hz,
            "period_std_ns": tf.period_std_ns,
            "pass": tf.passed,
        })
    return out


# --- persistence ---
#
# Episode directory layout:
#   meta.json       session metadata + per-stream stats + drop counters
#   raw/<topic>.jsonl   one unified frame per line ("/" -> "__" in filenames)
#   aligned.jsonl   one tick per line

def _topic_filename(topic: str) -> str:
    return topic.replace("/", "__") + ".jsonl"


def _tick_to_json(tick: AlignedTick) -> dict:
    return {
        "t_ns": tick.t_ns,
        "obs": fields_to_json(tick.obs),
        "action": fields_to_json(tick.action),
        "staleness_ns": {k: int(v) for k, v in sorted(tick.staleness_ns.items())},
    }


def _tick_from_json(obj: dict) -> AlignedTick:
    return AlignedTick(
        t_ns=int(obj["t_ns"]),
        obs=fields_from_json(obj["obs"], "obs"),
        action=fields_from_json(obj["action"], "action"),
        staleness_ns={k: int(v) for k, v in obj["staleness_ns"].items()},
    )


def save_episode(ep: AlignedEpisode, directory: str | Path,
                 recording: RawRecording | None = None) -> Path:
    """Write an aligned episode (and optionally its raw streams) to disk."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "meta.json").write_text(
            json.dumps(ep.meta, sort_keys=True, separators=(",", ":")) + "\n",
            encoding="utf-8",
        )
        with open(directory / "aligned.jsonl", "w", encoding="utf-8") as fh:
            for tick in ep.ticks:
                fh.write(json.dumps(_tick_to_json(tick), separators=(",", ":")) + "\n")
        if recording is not None:
            rawdir = directory / "raw"
            rawdir.mkdir(exist_ok=True)
            for topic, frames in recording.frames.items():
                with open(rawdir / _topic_filename(topic), "wb") as fh:
                    for frame in frames:
                        fh.write(encode_json(frame) + b"\n")
    except OSError as e:
        raise EpisodeIOError(f"cannot write episode to {directory}: {e}") from e
    return directory


def load_episode(directory: str | Path) -> AlignedEpisode:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    aligned_path = directory / "aligned.jsonl"
    if not meta_path.exists():
        raise SchemaMismatch(f"{directory} has no meta.json")
    if not aligned_path.exists():
        raise SchemaMismatch(f"{directory} has no aligned.jsonl")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        ticks = []
        with open(aligned_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    ticks.append(_tick_from_json(json.loads(line)))
    except OSError as e:
        raise EpisodeIOError(f"cannot read episode from {directory}: {e}") from e
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise SchemaMismatch(f"corrupt episode in {directory}: {e}") from e
    for key in ("task", "operator", "seed", "view_id", "align_hz"):
        if key not in meta:
            raise SchemaMismatch(f"meta.json missing {key!r}")
    return AlignedEpisode(align_hz=float(meta["align_hz"]), ticks=ticks, meta=meta)


def load_raw_recording(directory: str | Path) -> RawRecording:
    """Rebuild the raw streams of a saved episode (for re-alignment)."""
    directory = Path(directory)
    meta_obj = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
    specs = [
        StreamSpec(topic=s["topic"], nominal_hz=s["nominal_hz"], role=s["role"])
        for s in meta_obj["streams"]
    ]
    frames: dict[str, list[UnifiedFrame]] = {}
    for spec in specs:
        path = directory / "raw" / _topic_filename(spec.topic)
        if not path.exists():
            raise SchemaMismatch(f"missing raw stream file {path}")
        topic_frames = []
        with open(path, "rb") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    topic_frames.append(decode_json(line))
        frames[spec.topic] = topic_frames
    meta = SessionMeta(task=meta_obj["task"], operator=meta_obj["operator"],
                       seed=meta_obj["seed"], view_id=meta_obj["view_id"])
    return RawRecording(meta=meta, specs=specs, frames=frames,
                        drops={k: int(v) for k, v in meta_obj.get("drops", {}).items()})
