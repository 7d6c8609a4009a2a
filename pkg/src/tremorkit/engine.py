"""The live session engine.

The :class:`Engine` is a deterministic, single-threaded state machine: it
consumes decoded sensor frames and clinician commands in one total order,
dequantizes, runs the active view transform, fans processed batches out to
subscriber sinks, and appends everything needed for exact replay to the log.
:class:`SessionRunner` wraps it with the reader/processing threads and the
bounded command queue used in live operation. :func:`replay_log` rebuilds the
identical session state from a log alone.
"""

from __future__ import annotations

import io
import json
import time
from dataclasses import dataclass, field, replace
from queue import Empty, Queue
from threading import Event, Thread
from typing import Iterable, Optional, Union

import numpy as np

from . import logfile
from .dsp import (FilterSpec, TimeSeries, design_filter, dominant_frequency,
                  hilbert_envelope, pca_scores, peak_stats, periodogram,
                  psd_from_rms, rms_detrended)
from .session import (AnnotationError, DbsParams, Session, SessionMeta,
                      SideEffect, apply_dbs_step, format_event,
                      task_from_label)
from .simulate import AXIS_NAMES, QuantizedStream, SensorConfig, dequantize_counts
from .wire import FLAG_SATURATION, Frame, FrameDecoder, encode_frame

VIEW_KINDS = ("raw", "filtered", "norm", "envelope", "pca", "short_term_power")


class EngineError(Exception):
    pass


@dataclass(frozen=True)
class ViewSpec:
    """The active display transform: one kind, applied to the enabled axes."""

    kind: str = "raw"
    filter_spec: Optional[FilterSpec] = None
    power_window: int = 50          # samples, for short_term_power

    def __post_init__(self):
        if self.kind not in VIEW_KINDS:
            raise ValueError(f"unknown view {self.kind!r}")
        if self.kind == "filtered" and self.filter_spec is None:
            raise ValueError("filtered view needs a filter spec")
        if self.power_window < 1:
            raise ValueError("power_window must be >= 1")

    def to_doc(self) -> dict:
        doc = {"kind": self.kind, "power_window": self.power_window}
        if self.filter_spec is not None:
            doc["filter"] = {
                "family": self.filter_spec.family, "order": self.filter_spec.order,
                "response": self.filter_spec.response,
                "cutoffs": list(self.filter_spec.cutoffs),
                "ripple_db": self.filter_spec.ripple_db,
            }
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "ViewSpec":
        fspec = None
        if "filter" in doc:
            f = doc["filter"]
            fspec = FilterSpec(family=f["family"], order=f["order"],
                               response=f["response"], cutoffs=tuple(f["cutoffs"]),
                               ripple_db=f.get("ripple_db", 0.5))
        return cls(kind=doc["kind"], filter_spec=fspec,
                   power_window=doc.get("power_window", 50))


@dataclass(frozen=True)
class EngineConfig:
    sensor: SensorConfig = field(default_factory=SensorConfig)
    view: ViewSpec = field(default_factory=ViewSpec)
    enabled_axes: tuple[int, ...] = tuple(range(9))
    chunk_frames: int = 20
    dbs_defaults: DbsParams = field(default_factory=lambda: DbsParams(3.0, "V", 130, 60))
    dominant_min_freq: float = 0.5
    perf_sample_every: int = 2000      # frames between logged performance samples

    def __post_init__(self):
        if self.chunk_frames < 1:
            raise ValueError("chunk_frames must be >= 1")
        if self.perf_sample_every < 1:
            raise ValueError("perf_sample_every must be >= 1")
        if not self.enabled_axes or any(not 0 <= a < 9 for a in self.enabled_axes):
            raise ValueError("enabled_axes must name at least one of the 9 axes")

    def to_doc(self) -> dict:
        return {
            "sensor": self.sensor.to_doc(),
            "view": self.view.to_doc(),
            "enabled_axes": list(self.enabled_axes),
            "chunk_frames": self.chunk_frames,
            "dbs_defaults": {
                "amplitude": self.dbs_defaults.amplitude, "unit": self.dbs_defaults.unit,
                "frequency": self.dbs_defaults.frequency,
                "pulse_width": self.dbs_defaults.pulse_width,
            },
            "dominant_min_freq": self.dominant_min_freq,
            "perf_sample_every": self.perf_sample_every,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "EngineConfig":
        return cls(
            sensor=SensorConfig.from_doc(doc["sensor"]),
            view=ViewSpec.from_doc(doc["view"]),
            enabled_axes=tuple(doc["enabled_axes"]),
            chunk_frames=doc["chunk_frames"],
            dbs_defaults=DbsParams(**doc["dbs_defaults"]),
            dominant_min_freq=doc.get("dominant_min_freq", 0.5),
            perf_sample_every=doc.get("perf_sample_every", 2000),
        )


# --------------------------------------------------------------------------
# View transforms
# --------------------------------------------------------------------------

class _ViewState:
    """Streaming realization of one ViewSpec.

    raw/filtered/norm/short_term_power are exactly streaming (state carries
    across batches); envelope and pca are computed per delivered batch, which
    is deterministic because batch boundaries are part of the logged truth.
    """

    def __init__(self, spec: ViewSpec, config: EngineConfig):
        self.spec = spec
        self.config = config
        fs = config.sensor.fs
        self.channels: tuple[str, ...]
        if spec.kind in ("raw", "filtered", "envelope"):
            self.channels = tuple(AXIS_NAMES[a] for a in config.enabled_axes)
        elif spec.kind == "norm":
            self.channels = ("accel_norm",)
        elif spec.kind == "pca":
            self.channels = ("pc1", "pc2", "pc3")
        else:
            self.channels = tuple(AXIS_NAMES[a] + "_pow" for a in config.enabled_axes)
        if spec.kind == "filtered":
            self._filters = [design_filter(spec.filter_spec, fs) for _ in config.enabled_axes]
        if spec.kind == "short_term_power":
            self._tails = [np.zeros(0) for _ in config.enabled_axes]

    def process(self, phys: np.ndarray) -> np.ndarray:
        axes = list(self.config.enabled_axes)
        kind = self.spec.kind
        if kind == "raw":
            return phys[:, axes]
        if kind == "filtered":
            out = np.empty((phys.shape[0], len(axes)))
            for i, axis in enumerate(axes):
                out[:, i] = self._filters[i].process(phys[:, axis])
            return out
        if kind == "norm":
            return np.linalg.norm(phys[:, 0:3], axis=1)[:, None]
        if kind == "envelope":
            out = np.empty((phys.shape[0], len(axes)))
            for i, axis in enumerate(axes):
                x = phys[:, axis]
                if x.size >= 8:
                    out[:, i] = hilbert_envelope(
                        TimeSeries(x, self.config.sensor.fs)).samples
                else:
                    out[:, i] = np.abs(x - x.mean())
            return out
        if kind == "pca":
            accel = phys[:, 0:3]
            if accel.shape[0] < 2:
                return np.zeros((accel.shape[0], 3))
            return pca_scores(accel).scores
        # short_term_power: sliding mean of x^2 carried across batches
        w = self.spec.power_window
        out = np.empty((phys.shape[0], len(axes)))
        for i, axis in enumerate(axes):
            joined = np.concatenate([self._tails[i], phys[:, axis] ** 2])
            means = np.empty(phys.shape[0])
            for n in range(phys.shape[0]):
                end = self._tails[i].size + n + 1
                lo = max(0, end - w)
                means[n] = joined[lo:end].mean()
            out[:, i] = means
            self._tails[i] = joined[max(0, joined.size - (w - 1)):]
        return out


@dataclass(frozen=True)
class ProcessedBatch:
    start_index: int
    samples: np.ndarray            # (n, channels)
    channels: tuple[str, ...]
    view_kind: str
    recv_time: Optional[float] = None
    emit_time: Optional[float] = None


class DisplaySink:
    """Bounded drop-oldest subscriber; never blocks the engine."""

    def __init__(self, maxlen: int = 64, name: str = "display"):
        from collections import deque
        self.name = name
        self.batches = deque(maxlen=maxlen)
        self.events = deque(maxlen=maxlen * 4)
        self.drops = 0
        self._maxlen = maxlen

    def on_batch(self, batch: ProcessedBatch):
        if len(self.batches) == self._maxlen:
            self.drops += 1
        self.batches.append(batch)

    def on_event(self, doc: dict):
        self.events.append(doc)


class CaptureSink:
    """Lossless subscriber for offline checks."""

    def __init__(self):
        self.batches: list[ProcessedBatch] = []
        self.events: list[dict] = []
        self.drops = 0

    def on_batch(self, batch: ProcessedBatch):
        self.batches.append(batch)

    def on_event(self, doc: dict):
        self.events.append(doc)

    def processed_matrix(self) -> np.ndarray:
        return np.vstack([b.samples for b in self.batches]) if self.batches else np.zeros((0, 0))


@dataclass
class LatencyStats:
    """Per-sample processing cost and source-to-sink delivery latency."""

    mean_per_sample_ms: float
    p95_per_sample_ms: float
    max_per_sample_ms: float
    samples: int
    e2e_p95_ms: Optional[float] = None
    e2e_max_ms: Optional[float] = None

    def to_doc(self) -> dict:
        return {
            "mean_per_sample_ms": self.mean_per_sample_ms,
            "p95_per_sample_ms": self.p95_per_sample_ms,
            "max_per_sample_ms": self.max_per_sample_ms,
            "samples": self.samples,
            "e2e_p95_ms": self.e2e_p95_ms,
            "e2e_max_ms": self.e2e_max_ms,
        }


# --------------------------------------------------------------------------
# Engine
# --------------------------------------------------------------------------

COMMANDS = ("start_task", "stop_task", "score", "dbs_step", "dbs_set",
            "side_effect", "set_point", "set_view")


class Engine:
    """Deterministic session core; not thread-safe by itself (one caller at a
    time, which SessionRunner guarantees in live mode)."""

    def __init__(self, config: EngineConfig, meta: SessionMeta,
                 log: Union[str, io.BufferedIOBase, None] = None):
        self.config = config
        self.meta = meta
        self.session = Session(meta)
        self.pending_dbs = (meta.dbs_device.initial if meta.dbs_device
                            else config.dbs_defaults)
        self.sample_count = 0
        self.frame_count = 0
        self.saturated_frames = 0
        self.gap_events = 0
        self.missing_frames = 0
        self.failed: Optional[str] = None
        self._decoder = FrameDecoder()
        self._decode_errors_seen = 0
        self._pending: list[Frame] = []
        self._pending_recv: Optional[float] = None
        self._store: list[np.ndarray] = []
        self._last_seq: Optional[int] = None
        self._view = _ViewState(config.view, config)
        self._sinks: list = []
        self._proc_ms: list[float] = []
        self._log_fh = None
        self._owns_log = False
        if isinstance(log, (str, bytes)) or hasattr(log, "__fspath__"):
            self._log_fh = open(log, "wb")
            self._owns_log = True
        elif log is not None:
            self._log_fh = log
        self._writer = logfile.LogWriter(self._log_fh) if self._log_fh else None
        self._finalized = False
        if self._writer:
            self._write_record(logfile.REC_SESSION_HEADER, {
                "meta": json.loads(meta.to_json()),
                "config": config.to_doc(),
            })

    def _write_record(self, rec_type: int, doc: Optional[dict] = None,
                      raw: Optional[bytes] = None) -> None:
        """All log writes funnel through here: a write failure is a hard stop."""
        if not self._writer:
            return
        try:
            if raw is not None:
                self._writer.write_frames(raw)
            else:
                self._writer.write_json(rec_type, doc)
        except OSError as exc:
            self.failed = f"log write failed: {exc}"
            raise EngineError(self.failed) from exc

    # -- subscribers ---------------------------------------------------------

    def subscribe(self, sink) -> None:
        self._sinks.append(sink)

    def _emit_event(self, doc: dict) -> None:
        for sink in self._sinks:
            sink.on_event(doc)

    # -- frame path -----------------------------------------------------------

    def _require_live(self):
        if self.failed:
            raise EngineError(f"engine stopped: {self.failed}")
        if self._finalized:
            raise EngineError("session already finalized")

    def feed_bytes(self, data: bytes, recv_time: Optional[float] = None) -> None:
        """Decode incoming link bytes; full chunks of frames are processed."""
        self._require_live()
        frames = self._decoder.feed(data)
        errors = self._decoder.crc_failures + self._decoder.bytes_skipped
        if errors > self._decode_errors_seen:
            doc = {"action": "decode_error",
                   "crc_failures": self._decoder.crc_failures,
                   "bytes_skipped": self._decoder.bytes_skipped,
                   "sample_index": self.sample_count}
            self._decode_errors_seen = errors
            self._log_event(doc, log=False)
        self.feed_frames(frames, recv_time)

    def feed_frames(self, frames: Iterable[Frame], recv_time: Optional[float] = None) -> None:
        self._require_live()
        for frame in frames:
            if self._pending_recv is None:
                self._pending_recv = recv_time
            self._pending.append(frame)
            if len(self._pending) >= self.config.chunk_frames:
                self._process_batch()

    def flush(self) -> None:
        """Process any partial batch immediately."""
        if self._pending:
            self._process_batch()

    def _process_batch(self) -> None:
        frames, self._pending = self._pending, []
        recv_time, self._pending_recv = self._pending_recv, None
        if not frames:
            return
        # sequence accounting precedes processing so gaps carry the right index
        for f in frames:
            if self._last_seq is not None:
                missing = (f.seq - self._last_seq - 1) & 0xFFFF
                if missing:
                    self.gap_events += 1
                    self.missing_frames += missing
                    self._log_event({"action": "frame_gap", "after_seq": self._last_seq,
                                     "missing": missing,
                                     "sample_index": self.sample_count})
            self._last_seq = f.seq
            if f.flags & FLAG_SATURATION:
                self.saturated_frames += 1
        encoded = b"".join(encode_frame(f) for f in frames)
        self._write_record(logfile.REC_FRAME_BATCH, raw=encoded)
        t0 = time.perf_counter()
        counts = np.array([f.payload for f in frames], dtype=np.float64)
        phys = dequantize_counts(counts, self.config.sensor)
        processed = self._view.process(phys)
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
        self._proc_ms.append(elapsed_ms / len(frames))
        start = self.sample_count
        self._store.append(phys)
        self.sample_count += len(frames)
        self.frame_count += len(frames)
        every = self.config.perf_sample_every
        if self.sample_count // every > start // every:
            self._write_record(logfile.REC_PERF,
                               {"action": "perf", "sample_index": self.sample_count,
                                **self.latency_stats().to_doc()})
        batch = ProcessedBatch(start_index=start, samples=processed,
                               channels=self._view.channels,
                               view_kind=self._view.spec.kind,
                               recv_time=recv_time, emit_time=time.perf_counter())
        for sink in self._sinks:
            sink.on_batch(batch)

    # -- commands --------------------------------------------------------------

    def _log_event(self, doc: dict, log: bool = True) -> None:
        if log and self._writer:
            rec_type = (logfile.REC_CONFIG_CHANGE if doc["action"] == "set_view"
                        else logfile.REC_EVENT)
            self._write_record(rec_type, doc)
        self._emit_event(doc)

    def command(self, action: str, **args) -> dict:
        """Execute one clinician command at the current stream position.

        Pending frames are flushed first so the stamped sample index is the
        true position. Returns an ack dict; rejected commands change nothing.
        """
        self._require_live()
        if action not in COMMANDS:
            return {"ok": False, "action": action, "error": f"unknown command {action!r}"}
        self.flush()
        sample_index = self.sample_count
        try:
            doc = self._apply(action, args, sample_index, wall_time=time.time())
        except (AnnotationError, ValueError, KeyError) as exc:
            return {"ok": False, "action": action, "error": str(exc),
                    "sample_index": sample_index}
        self._log_event(doc)
        ack = {"ok": True, "action": action, "sample_index": sample_index}
        for key in ("task_index", "event", "pending_dbs", "view"):
            if key in doc:
                ack[key] = doc[key]
        return ack

    def _apply(self, action: str, args: dict, sample_index: int,
               wall_time: Optional[float] = None) -> dict:
        """State transition for one command; returns the loggable event doc."""
        doc = {"action": action, "sample_index": sample_index}
        if action == "start_task":
            task = task_from_label(args["task"])
            e = self.session.start_task(task, sample_index, wall_time)
            doc.update(task=task.label, task_index=e.task_index)
        elif action == "stop_task":
            closed = self.session.stop_task(sample_index)
            doc.update(task_index=closed.task_index, event=format_event(closed),
                       sample_range=list(closed.sample_range))
        elif action == "score":
            e = self.session.set_score(int(args["value"]))
            doc.update(value=int(args["value"]), task_index=e.task_index)
        elif action == "dbs_step":
            self.pending_dbs = apply_dbs_step(self.pending_dbs, args["field"],
                                              args["step"])
            doc.update(field=args["field"], step=args["step"],
                       pending_dbs=self._dbs_doc(self.pending_dbs))
        elif action == "dbs_set":
            e = self.session.set_dbs(self.pending_dbs)
            doc.update(task_index=e.task_index,
                       pending_dbs=self._dbs_doc(self.pending_dbs))
        elif action == "side_effect":
            effect = SideEffect(int(args["code"]))
            e = self.session.set_side_effect(effect)
            doc.update(code=int(effect), task_index=e.task_index)
        elif action == "set_point":
            e = self.session.set_point()
            doc.update(task_index=e.task_index)
        elif action == "set_view":
            view = ViewSpec.from_doc(args["view"]) if isinstance(args["view"], dict) \
                else args["view"]
            self.config = replace(self.config, view=view)
            self._view = _ViewState(view, self.config)
            doc.update(view=view.to_doc())
        return doc

    @staticmethod
    def _dbs_doc(params: DbsParams) -> dict:
        return {"amplitude": params.amplitude, "unit": params.unit,
                "frequency": params.frequency, "pulse_width": params.pulse_width}

    # -- lifecycle ---------------------------------------------------------------

    def finalize(self) -> None:
        if self._finalized:
            return
        self.flush()
        if self._writer:
            self._write_record(logfile.REC_SESSION_END, {
                "sample_count": self.sample_count,
                "frame_count": self.frame_count,
                "gap_events": self.gap_events,
                "missing_frames": self.missing_frames,
                "saturated_frames": self.saturated_frames,
                "latency": self.latency_stats().to_doc(),
            })
            self._writer.flush()
        if self._owns_log:
            self._log_fh.close()
        self._finalized = True

    def latency_stats(self) -> LatencyStats:
        if not self._proc_ms:
            return LatencyStats(0.0, 0.0, 0.0, 0)
        arr = np.asarray(self._proc_ms)
        return LatencyStats(
            mean_per_sample_ms=float(arr.mean()),
            p95_per_sample_ms=float(np.percentile(arr, 95)),
            max_per_sample_ms=float(arr.max()),
            samples=self.sample_count,
        )

    def state_digest(self) -> dict:
        """Comparable snapshot of everything a replay must reproduce."""
        return {
            "sample_count": self.sample_count,
            "frame_count": self.frame_count,
            "events": [
                {"string": format_event(e), "range": list(e.sample_range)}
                for e in self.session.events
            ],
            "open_task": (self.session.open_event.task.label
                          if self.session.open_event else None),
            "open_index": (self.session.open_event.task_index
                           if self.session.open_event else None),
            "pending_dbs": self._dbs_doc(self.pending_dbs),
            "gap_events": self.gap_events,
            "missing_frames": self.missing_frames,
        }

    # -- analysis -------------------------------------------------------------

    def physical_samples(self) -> np.ndarray:
        if not self._store:
            return np.zeros((0, 9))
        return np.vstack(self._store)

    def pre_analysis(self) -> dict:
        """Per-task time/frequency statistics over the logged raw samples."""
        if not self.session.events:
            raise EngineError("no closed tasks to analyze")
        phys = self.physical_samples()
        fs = self.config.sensor.fs
        tasks = []
        for e in self.session.events:
            start, end = e.sample_range
            seg = phys[start:min(end, phys.shape[0])]
            channels = {}
            series = {AXIS_NAMES[i]: seg[:, i] for i in range(9)}
            series["accel_norm"] = np.linalg.norm(seg[:, 0:3], axis=1)
            for name, x in series.items():
                channels[name] = _channel_stats(x, fs, self.config.dominant_min_freq)
            tasks.append({
                "task_index": e.task_index,
                "task": e.task.label,
                "event": format_event(e),
                "sample_range": [start, end],
                "duration_s": (end - start) / fs,
                "channels": channels,
            })
        return {"pseudo_id": self.meta.pseudo_id, "fs": fs, "tasks": tasks}


def _channel_stats(x: np.ndarray, fs: float, min_freq: float) -> dict:
    if x.size < 2 or float(np.ptp(x - x.mean())) == 0.0:
        return {"rms": 0.0, "peak_to_peak": 0.0, "abs_peak": 0.0,
                "psd": 0.0, "dominant_hz": None}
    ts = TimeSeries(x, fs)
    rms = rms_detrended(ts)
    pkpk, abs_peak = peak_stats(ts)
    spec = periodogram(TimeSeries(x - x.mean(), fs))
    dom = dominant_frequency(spec, min_freq=min_freq)
    return {"rms": rms, "peak_to_peak": pkpk, "abs_peak": abs_peak,
            "psd": psd_from_rms(rms, fs), "dominant_hz": dom}


def render_pre_analysis(report: dict) -> str:
    lines = [f"session {report['pseudo_id']}  fs {report['fs']} Hz"]
    for task in report["tasks"]:
        lines.append(f"\n[{task['event']}]  samples {task['sample_range'][0]}.."
                     f"{task['sample_range'][1]}  ({task['duration_s']:.2f} s)")
        lines.append(f"{'channel':<12}{'rms':>12}{'pk-pk':>12}{'|peak|':>12}"
                     f"{'psd/rtHz':>12}{'dom Hz':>9}")
        for name, st in task["channels"].items():
            dom = "-" if st["dominant_hz"] is None else f"{st['dominant_hz']:.2f}"
            lines.append(f"{name:<12}{st['rms']:>12.4g}{st['peak_to_peak']:>12.4g}"
                         f"{st['abs_peak']:>12.4g}{st['psd']:>12.4g}{dom:>9}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Replay
# --------------------------------------------------------------------------

def replay_log(path) -> Engine:
    """Rebuild the full session state from a log.

    Frames are re-fed batch-for-batch and logged commands re-applied in
    order, asserting that their recorded sample indices line up, so the
    returned engine's reports equal the live session's.
    """
    records = logfile.read_log(path)
    if not records or records[0].type != logfile.REC_SESSION_HEADER:
        raise logfile.LogError("log does not start with a session header", -1)
    header = records[0].json()
    config = EngineConfig.from_doc(header["config"])
    meta = SessionMeta.from_json(json.dumps(header["meta"]))
    engine = Engine(config, meta, log=None)
    for record in records[1:]:
        if record.type == logfile.REC_FRAME_BATCH:
            engine.feed_frames(record.frames())
            engine.flush()
        elif record.type in (logfile.REC_EVENT, logfile.REC_CONFIG_CHANGE):
            doc = record.json()
            action = doc["action"]
            if action in ("decode_error", "frame_gap"):
                continue
            if doc["sample_index"] != engine.sample_count:
                raise logfile.LogError(
                    f"command {action!r} recorded at sample {doc['sample_index']} "
                    f"but replay is at {engine.sample_count}", record.seq)
            engine._apply(action, _args_from_doc(doc), doc["sample_index"])
        elif record.type == logfile.REC_SESSION_END:
            end = record.json()
            if end["frame_count"] != engine.frame_count:
                raise logfile.LogError("frame count mismatch against trailer", record.seq)
    return engine


def _args_from_doc(doc: dict) -> dict:
    action = doc["action"]
    if action == "start_task":
        return {"task": doc["task"]}
    if action == "score":
        return {"value": doc["value"]}
    if action == "dbs_step":
        return {"field": doc["field"], "step": doc["step"]}
    if action == "side_effect":
        return {"code": doc["code"]}
    if action == "set_view":
        return {"view": doc["view"]}
    return {}


# --------------------------------------------------------------------------
# Live runner
# --------------------------------------------------------------------------

class SessionRunner:
    """Reader thread + single processing thread around one Engine.

    Frames and commands merge into one ordered queue; that order is the
    replayable truth. Display sinks are bounded and lossy; the log sink
    inside the engine is lossless.
    """

    def __init__(self, engine: Engine, source: Iterable[bytes],
                 ack_timeout_s: float = 5.0):
        self.engine = engine
        self._source = source
        self._queue: Queue = Queue(maxsize=256)
        self._done = Event()
        self._source_done = Event()
        self._ack_timeout = ack_timeout_s
        self._e2e_ms: list[float] = []
        self.error: Optional[str] = None
        self._reader = Thread(target=self._read_loop, daemon=True)
        self._proc = Thread(target=self._process_loop, daemon=True)

    def start(self) -> "SessionRunner":
        self._proc.start()
        self._reader.start()
        return self

    def _read_loop(self):
        try:
            for chunk in self._source:
                self._queue.put(("bytes", chunk, time.perf_counter()))
        finally:
            self._queue.put(("source_end", None, None))

    def _process_loop(self):
        while not self._done.is_set():
            try:
                kind, payload, stamp = self._queue.get(timeout=0.1)
            except Empty:
                continue
            try:
                if kind == "bytes":
                    before = len(self.engine._proc_ms)
                    self.engine.feed_bytes(payload, recv_time=stamp)
                    if len(self.engine._proc_ms) > before:
                        self._e2e_ms.append((time.perf_counter() - stamp) * 1000.0)
                elif kind == "cmd":
                    action, args, box = payload
                    box["ack"] = self.engine.command(action, **args)
                    stamp.set()
                elif kind == "source_end":
                    self._source_done.set()
            except EngineError as exc:
                self.error = str(exc)
                self._source_done.set()
                self._done.set()

    def command(self, action: str, **args) -> dict:
        """Thread-safe command entry; blocks for the ack."""
        box: dict = {}
        ready = Event()
        self._queue.put(("cmd", (action, args, box), ready))
        if not ready.wait(self._ack_timeout):
            raise EngineError("command ack timed out")
        return box["ack"]

    def wait_source_end(self, timeout: Optional[float] = None) -> bool:
        return self._source_done.wait(timeout)

    def close(self, wait_for_source: bool = True) -> LatencyStats:
        """Drain, stop threads, finalize the log, return latency statistics.

        With ``wait_for_source=False`` the runner stops immediately, abandoning
        whatever the source has not yet produced.
        """
        if wait_for_source:
            self.wait_source_end(timeout=self._ack_timeout * 4)
            while not self._queue.empty() and not self._done.is_set():
                time.sleep(0.005)
        self._done.set()
        self._proc.join(timeout=2.0)
        self._reader.join(timeout=2.0)
        if not self.engine.failed:
            self.engine.finalize()
        stats = self.engine.latency_stats()
        if self._e2e_ms:
            arr = np.asarray(self._e2e_ms)
            stats.e2e_p95_ms = float(np.percentile(arr, 95))
            stats.e2e_max_ms = float(arr.max())
        return stats


# --------------------------------------------------------------------------
# Sources
# --------------------------------------------------------------------------

def byte_source(stream: QuantizedStream, chunk_frames: int = 20,
                seq_start: int = 0, pace_hz: Optional[float] = None) -> Iterable[bytes]:
    """Encode a quantized stream as wire chunks; with ``pace_hz`` the chunks
    are released at real-time rate."""
    frames = []
    sat = stream.saturated_rows
    for i, raw in enumerate(stream.frames()):
        flags = FLAG_SATURATION if sat is not None and bool(sat[i]) else 0
        frames.append(Frame(seq=(seq_start + i) & 0xFFFF, t=raw.t,
                            payload=raw.counts(), flags=flags))
    chunk_s = chunk_frames / pace_hz if pace_hz else 0.0
    next_t = time.perf_counter()
    for lo in range(0, len(frames), chunk_frames):
        if pace_hz:
            next_t += chunk_s
            delay = next_t - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
        yield b"".join(encode_frame(f) for f in frames[lo:lo + chunk_frames])
