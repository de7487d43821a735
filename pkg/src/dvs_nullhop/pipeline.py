"""Frame timing for the collect -> normalize -> CNN pipeline, plus an
end-to-end driver that runs the functional model and the timing model
side by side.

Timing never feeds back into the functional results.
"""
from __future__ import annotations

import csv
import enum
import io
import queue
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .aer_stream import DAVIS240, EventsLike, SensorGeometry, as_event_array
from .histogram import (DEFAULT_K_EVENTS, DEFAULT_RESOLUTION, DoubleBuffer, EventHistogram,
                        collect_frames, map_coordinates)
from .normalizer import (NORM_LANE_LATENCY_CYCLES, NORM_LANES, DEFAULT_VARIANT, NormVariant,
                         norm_pipeline_cycles, normalize_fixed)
from .nullhop import MacStats, NetworkConfig, predict, run_network
from .sparsity import encode, frame_to_feature_map

CNN_FRAME_S = 6e-3            # measured minimum per-frame time with FPGA normalization
CNN_FRAME_PRIOR_S = 8e-3      # earlier AXI-DMA controller figure
SOFTWARE_OVERHEAD_S = 4e-3    # USB + cAER collection/normalization, opaque
NORM_CLOCK_HZ = 60e6
PEAK_RATE_EPS = 2000 / 6e-3   # 2k events in 6 ms


class Mode(str, enum.Enum):
    SEQUENTIAL = "sequential"
    PIPELINED = "pipelined"


@dataclass(frozen=True)
class StageTiming:
    """One pipeline stage. ``kind`` selects how the duration is obtained:

    * ``fixed``: ``value`` seconds
    * ``events``: ``value`` events collected at the stream's event rate
    * ``cycles``: ``value`` clock cycles at ``clock_hz``
    """
    name: str
    kind: str
    value: float
    clock_hz: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("fixed", "events", "cycles"):
            raise ValueError(f"unknown stage kind {self.kind!r}")
        if self.value <= 0:
            raise ValueError(f"stage {self.name!r} needs a positive duration")
        if self.kind == "cycles" and not (self.clock_hz and self.clock_hz > 0):
            raise ValueError(f"stage {self.name!r} needs a positive clock_hz")

    @classmethod
    def fixed(cls, name: str, seconds: float) -> StageTiming:
        return cls(name, "fixed", seconds)

    @classmethod
    def events(cls, name: str, k_events: int) -> StageTiming:
        return cls(name, "events", k_events)

    @classmethod
    def cycles(cls, name: str, cycles: int, clock_hz: float) -> StageTiming:
        return cls(name, "cycles", cycles, clock_hz)

    def duration(self, event_rate_eps: Optional[float] = None) -> float:
        if self.kind == "fixed":
            return float(self.value)
        if self.kind == "cycles":
            return self.value / self.clock_hz
        if event_rate_eps is None:
            raise ValueError(f"stage {self.name!r} depends on the event rate; none given")
        return collection_duration(self.value, event_rate_eps)


def collection_duration(k_events: float, rate_eps: float) -> float:
    """Seconds to gather ``k_events`` at ``rate_eps`` events per second."""
    if rate_eps <= 0:
        raise ValueError("event rate must be positive")
    return k_events / rate_eps


def software_baseline_stages(cnn_s: float = CNN_FRAME_S,
                             overhead_s: float = SOFTWARE_OVERHEAD_S) -> list[StageTiming]:
    return [StageTiming.fixed("software", overhead_s), StageTiming.fixed("cnn", cnn_s)]


def fpga_stages(k_events: int = DEFAULT_K_EVENTS, pixel_count: int = 64 * 64,
                cnn_s: float = CNN_FRAME_S, clock_hz: float = NORM_CLOCK_HZ,
                lanes: int = NORM_LANES, lane_latency: int = NORM_LANE_LATENCY_CYCLES,
                lane_interval: Optional[int] = NORM_LANES) -> list[StageTiming]:
    """Collection, the NORM block bank, and the accelerator.

    ``lane_interval`` defaults to the lane count, i.e. the bank sustains one
    pixel per clock after its fill latency.
    """
    cyc = norm_pipeline_cycles(pixel_count, lane_latency, lanes, lane_interval)
    return [StageTiming.events("collection", k_events),
            StageTiming.cycles("normalize", cyc, clock_hz),
            StageTiming.fixed("cnn", cnn_s)]


@dataclass(frozen=True)
class StageRecord:
    frame_seq: int
    stage: str
    start: float
    end: float
    stalled: float = 0.0  # time the finished frame waited before this stage
    held: float = 0.0     # source stage only: time it was kept from starting


@dataclass
class PipelineTrace:
    mode: Mode
    stage_names: list[str]
    durations: list[float]  # nominal per-stage durations
    records: list[StageRecord] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return len(self.records) // max(1, len(self.stage_names))

    def frame(self, f: int) -> list[StageRecord]:
        n = len(self.stage_names)
        return self.records[f * n:(f + 1) * n]

    @property
    def latencies(self) -> list[float]:
        return [fr[-1].end - fr[0].start for fr in map(self.frame, range(self.n_frames))]

    @property
    def latency(self) -> float:
        return float(np.mean(self.latencies)) if self.records else 0.0

    @property
    def period(self) -> float:
        n = self.n_frames
        if n >= 2:
            return (self.frame(n - 1)[-1].end - self.frame(0)[-1].end) / (n - 1)
        return sum(self.durations) if self.mode is Mode.SEQUENTIAL else max(self.durations)

    @property
    def fps(self) -> float:
        return 1.0 / self.period

    @property
    def binding_stage(self) -> str:
        return self.stage_names[int(np.argmax(self.durations))]

    @property
    def total_stall(self) -> float:
        return sum(r.stalled for r in self.records)

    @property
    def total_held(self) -> float:
        return sum(r.held for r in self.records)

    def summary(self) -> dict:
        return {"mode": self.mode.value, "frames": self.n_frames,
                "period_ms": float(self.period * 1e3), "fps": float(self.fps),
                "latency_ms": float(self.latency * 1e3), "binding_stage": self.binding_stage,
                "stall_ms": float(self.total_stall * 1e3),
                "source_held_ms": float(self.total_held * 1e3),
                "stage_ms": {n: float(d * 1e3) for n, d in zip(self.stage_names, self.durations)}}

    def to_csv(self, sink=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame_seq", "stage", "t_start_us", "t_end_us", "stalled_us"])
        for r in self.records:
            w.writerow([r.frame_seq, r.stage, f"{r.start * 1e6:.3f}", f"{r.end * 1e6:.3f}",
                        f"{r.stalled * 1e6:.3f}"])
        text = buf.getvalue()
        if sink is not None:
            sink.write(text)
        return text


def simulate(stages: Sequence[StageTiming], n_frames: int, mode=Mode.PIPELINED,
             event_rate_eps: Optional[float] = None,
             source_times: Optional[Sequence[tuple[float, float]]] = None) -> PipelineTrace:
    """Schedule ``n_frames`` frames through ``stages``.

    SEQUENTIAL runs each frame through every stage before the next frame
    starts. PIPELINED overlaps frames. By default the first stage is held
    back just long enough that no frame ever waits between stages, so every
    frame's latency equals the sum of stage durations and the steady-state
    period is the slowest stage. With ``source_times`` the first stage is
    pinned to the given ``(start, end)`` intervals (a sensor cannot be held),
    later stages start as soon as they are free, and waiting frames are
    recorded as stalls.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if not stages:
        raise ValueError("at least one stage is required")
    mode = Mode(mode)
    names = [s.name for s in stages]
    if source_times is not None:
        if len(source_times) < n_frames:
            raise ValueError("need one source interval per frame")
        src = [(float(a), float(b)) for a, b in source_times[:n_frames]]
        d0 = [b - a for a, b in src]
        rest = [s.duration(event_rate_eps) for s in stages[1:]]
        nominal = [float(np.mean(d0))] + rest
    else:
        src = None
        nominal = [s.duration(event_rate_eps) for s in stages]
    trace = PipelineTrace(mode, names, nominal)
    ns = len(stages)
    prev_end = [0.0] * ns  # end time of each stage for the previous frame
    for f in range(n_frames):
        d = list(nominal)
        if src is not None:
            d[0] = d0[f]
        if mode is Mode.SEQUENTIAL or f == 0:
            t = prev_end[-1] if f else 0.0
            held = 0.0
            if src is not None:
                start0 = max(src[f][0], t)
            else:
                start0 = t
            starts = [start0]
            for s in range(1, ns):
                starts.append(starts[-1] + d[s - 1])
            stalls = [0.0] * ns
        elif src is None:
            offs = np.concatenate([[0.0], np.cumsum(d[:-1])])
            start0 = float(max(prev_end[s] - offs[s] for s in range(ns)))
            held = start0 - prev_end[0]
            starts = [start0 + float(offs[s]) for s in range(ns)]
            stalls = [0.0] * ns
        else:
            held = 0.0
            starts, stalls = [src[f][0]], [0.0]
            ready = src[f][1]
            for s in range(1, ns):
                st = max(ready, prev_end[s])
                starts.append(st)
                stalls.append(st - ready)
                ready = st + d[s]
        for s in range(ns):
            end = starts[s] + d[s]
            trace.records.append(StageRecord(f, names[s], starts[s], end, stalls[s],
                                             held if s == 0 else 0.0))
            prev_end[s] = end
    return trace


def speedup(seq: PipelineTrace, pip: PipelineTrace) -> float:
    """Relative frame-rate gain, ``(seq.period - pip.period) / pip.period``."""
    if seq.n_frames != pip.n_frames:
        raise ValueError("traces must cover the same number of frames")
    return (seq.period - pip.period) / pip.period


# -- end to end ---------------------------------------------------------------

@dataclass(frozen=True)
class Classification:
    frame_seq: int
    class_index: int
    label: str
    scores: tuple[int, ...]  # Q.8 raw


@dataclass
class EndToEndResult:
    classifications: list[Classification]
    trace: Optional[PipelineTrace]
    layer_stats: list[list[MacStats]]  # per frame, per layer

    @property
    def mac_stats(self) -> MacStats:
        total = MacStats()
        for frame in self.layer_stats:
            for s in frame:
                total = total + s
        return total

    def classifications_csv(self) -> str:
        lines = ["frame_seq,class_index,label,scores_raw"]
        for c in self.classifications:
            lines.append(f"{c.frame_seq},{c.class_index},{c.label},{' '.join(map(str, c.scores))}")
        return "\n".join(lines) + "\n"


def _classify(hist: EventHistogram, net: NetworkConfig, variant: NormVariant, masked: bool):
    nf = normalize_fixed(hist, variant)
    cfm = encode(frame_to_feature_map(nf, masked))
    scores, stats = run_network(cfm, net)
    idx = predict(scores)
    return Classification(hist.frame_seq, idx, net.labels[idx], tuple(int(s) for s in scores)), stats


def _threaded_frames(arr: np.ndarray, net, variant, masked, k_events, resolution,
                     geometry, polarity_mode, crop):
    """Collector thread feeds a DoubleBuffer; this thread normalizes and classifies.

    The collector blocks while both buffers are out, so no event is lost.
    """
    db = DoubleBuffer(k_events, resolution, geometry, polarity_mode, crop)
    cond = threading.Condition()
    handoff: queue.Queue = queue.Queue()
    errors = []

    def collector():
        try:
            for ev in arr.tolist():
                with cond:
                    while db.active is None:
                        cond.wait()
                    frame = db.accumulate(ev)
                if frame is not None:
                    handoff.put(frame)
        except BaseException as exc:  # surfaced in the consumer
            errors.append(exc)
        finally:
            handoff.put(None)

    worker = threading.Thread(target=collector, name="collector", daemon=True)
    worker.start()
    results = []
    while (frame := handoff.get()) is not None:
        db.claim(frame)
        results.append(_classify(frame, net, variant, masked))
        with cond:
            db.release(frame)
            cond.notify_all()
    worker.join()
    if errors:
        raise errors[0]
    return results


def end_to_end(events: EventsLike, net: NetworkConfig,
               stages: Optional[Sequence[StageTiming]] = None, *,
               k_events: int = DEFAULT_K_EVENTS,
               resolution: tuple[int, int] = DEFAULT_RESOLUTION,
               geometry: SensorGeometry = DAVIS240, polarity_mode: str = "count",
               crop=None, variant: NormVariant = DEFAULT_VARIANT, masked: bool = True,
               mode=Mode.PIPELINED, threaded: bool = False, collection: str = "rate",
               event_rate_eps: Optional[float] = None) -> EndToEndResult:
    """Collect -> normalize (fixed point) -> compress -> run network, per frame.

    ``collection='rate'`` times the collection stage as ``k_events / rate``
    with the stream's mean rate (or ``event_rate_eps``); ``'timestamps'``
    uses each frame's actual first and last event times.
    """
    arr = as_event_array(events)
    if threaded:
        results = _threaded_frames(arr, net, variant, masked, k_events, resolution,
                                   geometry, polarity_mode, crop)
    else:
        results = [_classify(h, net, variant, masked)
                   for h in collect_frames(arr, k_events, resolution, geometry, polarity_mode, crop)]
    classes = [r[0] for r in results]
    layer_stats = [r[1] for r in results]
    if stages is None:
        stages = fpga_stages(k_events, resolution[0] * resolution[1])
    trace = None
    if classes:
        *_, inside = map_coordinates(arr["x"], arr["y"], geometry, resolution, crop)
        t = arr["t"][inside].astype(np.float64) * 1e-6
        if collection == "timestamps":
            src = [(t[f * k_events], t[(f + 1) * k_events - 1]) for f in range(len(classes))]
            trace = simulate(stages, len(classes), mode, event_rate_eps, source_times=src)
        elif collection == "rate":
            rate = event_rate_eps
            if rate is None:
                span = float(t[-1] - t[0]) if len(t) > 1 else 0.0
                rate = len(t) / span if span > 0 else float("inf")
            trace = simulate(stages, len(classes), mode, rate)
        else:
            raise ValueError("collection must be 'rate' or 'timestamps'")
    return EndToEndResult(classes, trace, layer_stats)
