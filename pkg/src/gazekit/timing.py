"""Timestamp provenance, stream correlation, and latency instrumentation.

Two free-running camera streams are correlated purely by timestamp.
Hardware timestamps are taken at the start of sensor exposure and are
treated as ground truth; software timestamps arrive after readout, transfer
and decompression, modeled as exposure + offset + Gaussian jitter.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

HARDWARE = "hardware"
SOFTWARE = "software"

# one 30 Hz frame period: default pairing gap limit
DEFAULT_MAX_GAP = 1.0 / 30.0

# processing stages between sensor exposure and broadcast
PIPELINE_STAGES = ("readout", "transfer", "decompress", "detect", "map", "broadcast")


@dataclass(frozen=True)
class ClockModel:
    """Timestamp source model for one camera stream."""

    kind: str = HARDWARE
    offset: float = 0.0
    jitter_sd: float = 0.0

    def __post_init__(self):
        if self.kind not in (HARDWARE, SOFTWARE):
            raise ValueError(f"unknown clock kind {self.kind!r}")
        if self.jitter_sd < 0:
            raise ValueError("jitter_sd must be >= 0")
        if self.kind == HARDWARE and self.offset != 0.0:
            raise ValueError("hardware clocks have zero offset")

    def to_json(self) -> dict:
        return {"kind": self.kind, "offset": self.offset, "jitter_sd": self.jitter_sd}

    @classmethod
    def from_json(cls, d: dict) -> "ClockModel":
        return cls(**d)


def hardware_clock() -> ClockModel:
    return ClockModel(kind=HARDWARE)


def software_clock(offset: float, jitter_sd: float) -> ClockModel:
    return ClockModel(kind=SOFTWARE, offset=offset, jitter_sd=jitter_sd)


def stamp(exposure: float, clock: ClockModel, rng: np.random.Generator | None = None) -> float:
    """Timestamp a frame exposure event under the given clock model."""
    if clock.kind == HARDWARE:
        return float(exposure)
    t = exposure + clock.offset
    if clock.jitter_sd > 0.0:
        if rng is None:
            raise ValueError("software clock with jitter needs an rng")
        t += rng.normal(0.0, clock.jitter_sd)
    return float(t)


def jitter_stat(timestamps) -> float:
    """Standard deviation of successive inter-frame intervals."""
    ts = np.asarray(timestamps, dtype=np.float64)
    if ts.size < 3:
        raise ValueError("need at least 3 timestamps")
    intervals = np.diff(ts)
    if (intervals <= 0).any():
        raise ValueError("timestamps must be strictly increasing")
    return float(np.std(intervals, ddof=1))


def pair_by_time(a, b, max_gap: float = DEFAULT_MAX_GAP) -> list[tuple[int, int]]:
    """Pair each element of b with the temporally nearest element of a.

    Both series must be sorted.  Pairs further apart than max_gap are
    dropped; exact ties break toward the earlier a element.  Returns (a
    index, b index) pairs in b order.
    """
    ta = np.asarray(a, dtype=np.float64)
    tb = np.asarray(b, dtype=np.float64)
    if (np.diff(ta) < 0).any() or (np.diff(tb) < 0).any():
        raise ValueError("series must be sorted")
    if ta.size == 0 or tb.size == 0:
        return []
    right = np.searchsorted(ta, tb)
    left = np.clip(right - 1, 0, ta.size - 1)
    right = np.clip(right, 0, ta.size - 1)
    d_left = np.abs(ta[left] - tb)
    d_right = np.abs(ta[right] - tb)
    pick = np.where(d_left <= d_right, left, right)  # <= ties toward earlier
    dist = np.minimum(d_left, d_right)
    return [(int(i), int(j)) for j, i in enumerate(pick) if dist[j] <= max_gap]


@dataclass(frozen=True)
class FrameTrace:
    """Stage durations for one frame of one stream."""

    stream_id: str
    exposure: float
    durations: dict[str, float]

    @property
    def total(self) -> float:
        return sum(self.durations.values())

    @property
    def publish_time(self) -> float:
        return self.exposure + self.total


@dataclass(frozen=True)
class LatencyReport:
    """Aggregate per-stage latency statistics for one stream."""

    stream_id: str
    stages: tuple[str, ...]
    stage_mean: dict[str, float]
    stage_sd: dict[str, float]
    total_mean: float
    total_sd: float
    sample_count: int

    def to_json(self) -> dict:
        return {
            "stream": self.stream_id,
            "stages": {
                s: {"mean": self.stage_mean[s], "sd": self.stage_sd[s]} for s in self.stages
            },
            "total": {"mean": self.total_mean, "sd": self.total_sd},
            "samples": self.sample_count,
        }

    def table(self) -> str:
        lines = [f"stream: {self.stream_id}  (n={self.sample_count})"]
        for s in self.stages:
            lines.append(f"  {s:<12} {self.stage_mean[s] * 1e3:8.3f} ms  sd {self.stage_sd[s] * 1e3:7.3f} ms")
        lines.append(f"  {'total':<12} {self.total_mean * 1e3:8.3f} ms  sd {self.total_sd * 1e3:7.3f} ms")
        return "\n".join(lines)


def measure_pipeline(traces) -> dict[str, LatencyReport]:
    """Aggregate frame traces into one latency report per stream."""
    by_stream: dict[str, list[FrameTrace]] = {}
    for tr in traces:
        by_stream.setdefault(tr.stream_id, []).append(tr)
    reports = {}
    for stream, items in by_stream.items():
        if len(items) < 2:
            raise ValueError(f"stream {stream!r} needs at least 2 frames")
        stages = tuple(items[0].durations.keys())
        per_stage = {s: np.array([t.durations[s] for t in items]) for s in stages}
        totals = np.array([t.total for t in items])
        reports[stream] = LatencyReport(
            stream_id=stream,
            stages=stages,
            stage_mean={s: float(v.mean()) for s, v in per_stage.items()},
            stage_sd={s: float(v.std(ddof=0)) for s, v in per_stage.items()},
            total_mean=float(totals.mean()),
            total_sd=float(totals.std(ddof=0)),
            sample_count=len(items),
        )
    return reports


def simulate_traces(
    stream_id: str,
    n: int,
    stage_means: dict[str, float],
    stage_sds: dict[str, float] | None = None,
    fps: float = 30.0,
    seed: int = 0,
) -> list[FrameTrace]:
    """Simulated stage-instrumented run with Gaussian stage noise."""
    if n < 2:
        raise ValueError("need at least 2 frames")
    rng = np.random.default_rng([seed, 0x71E])
    stage_sds = stage_sds or {}
    traces = []
    for k in range(n):
        durations = {}
        for name, mean in stage_means.items():
            sd = stage_sds.get(name, 0.0)
            value = mean if sd == 0 else mean + rng.normal(0.0, sd)
            durations[name] = max(0.0, float(value))
        traces.append(FrameTrace(stream_id=stream_id, exposure=k / fps, durations=durations))
    return traces


def run_live_pipeline(frames, params=None, model=None, bus=None) -> tuple[list, list[FrameTrace]]:
    """Run detection (and optional mapping/broadcast) with wall-clock stage timing.

    Capture-side stages (readout, transfer, decompress) are hardware-bound
    and reported as zero on the desk harness; detect, map and broadcast are
    measured with a monotonic performance counter.
    """
    from .detect import detect as run_detect
    from .gazemap import map_gaze
    from .gaze_io import pupil_payload, gaze_payload

    results = []
    traces = []
    for frame in frames:
        t0 = time.perf_counter()
        datum = run_detect(frame, params)
        t1 = time.perf_counter()
        gaze = None
        if model is not None and datum is not None:
            gaze = map_gaze(datum, model)
        t2 = time.perf_counter()
        if bus is not None:
            if datum is not None:
                bus.publish("pupil", pupil_payload(datum))
            if gaze is not None:
                bus.publish("gaze", gaze_payload(gaze))
        t3 = time.perf_counter()
        results.append((datum, gaze))
        traces.append(
            FrameTrace(
                stream_id=frame.stream_id,
                exposure=frame.timestamp,
                durations={
                    "readout": 0.0,
                    "transfer": 0.0,
                    "decompress": 0.0,
                    "detect": t1 - t0,
                    "map": t2 - t1,
                    "broadcast": t3 - t2,
                },
            )
        )
    return results, traces


@dataclass(frozen=True)
class TwoStreamRun:
    """Event log of a simulated eye + scene dual-lane run."""

    eye_traces: list[FrameTrace]
    scene_traces: list[FrameTrace]

    def eye_publishes(self) -> list[tuple[float, float]]:
        return [(t.exposure, t.publish_time) for t in self.eye_traces]

    def scene_arrivals(self) -> list[tuple[float, float]]:
        """(exposure, host arrival) where arrival ends the capture stages."""
        out = []
        for t in self.scene_traces:
            capture = sum(t.durations.get(s, 0.0) for s in ("readout", "transfer", "decompress"))
            out.append((t.exposure, t.exposure + capture))
        return out


def simulate_two_stream_run(
    eye_means: dict[str, float],
    scene_means: dict[str, float],
    n_eye: int = 100,
    eye_fps: float = 30.0,
    scene_fps: float = 24.0,
    eye_sds: dict[str, float] | None = None,
    scene_sds: dict[str, float] | None = None,
    seed: int = 0,
) -> TwoStreamRun:
    """Two independent lanes; eye results publish as soon as they are ready.

    Synchronicity is sacrificed for recency: no eye publish ever waits on
    the temporally containing scene frame.
    """
    n_scene = max(2, int(n_eye * scene_fps / eye_fps))
    eye = simulate_traces("eye", n_eye, eye_means, eye_sds, fps=eye_fps, seed=seed)
    scene = simulate_traces("scene", n_scene, scene_means, scene_sds, fps=scene_fps, seed=seed + 1)
    return TwoStreamRun(eye_traces=eye, scene_traces=scene)
