"""Feature pipeline: cut a fixed-length window from the middle of each motor
task, band-pass it, turn each axis into a normalized power spectrum (whole
window or short-time windows) and concatenate across the nine IMU axes into
one predictor vector.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .dsp import FilterSpec, TimeSeries, design_filter, periodogram
from .session import FN, HM, PP, RP, MotorTask
from .simulate import (AXIS_NAMES, Recording, SensorConfig, TaskScenario,
                       default_scenario, dequantize, quantize, synth_task)

DEFAULT_SEGMENT_S = 5.0
DEFAULT_BAND = (0.25, 20.0)
DEFAULT_WINDOW_S = 3.0
DEFAULT_HOP_S = 1.0


@dataclass(frozen=True)
class SegmentSource:
    """Where a segment came from, for stable dataset ordering."""

    subject: str
    hand: str = ""
    task_index: int = 0

    def key(self) -> tuple:
        return (self.subject, self.hand, self.task_index)


@dataclass(frozen=True)
class Segment:
    """Fixed-duration, nine-channel cut of one motor task."""

    label: MotorTask
    data: np.ndarray                 # (n, 9) in the fixed axis order
    fs: float
    source: SegmentSource
    duration_s: float = DEFAULT_SEGMENT_S

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        want = round(self.duration_s * self.fs)
        if data.ndim != 2 or data.shape[1] != 9:
            raise ValueError("segment data must be (n, 9)")
        if data.shape[0] != want:
            raise ValueError(f"segment must be exactly {want} samples, got {data.shape[0]}")


def segment_mid(recording: Recording, span: tuple[int, int], label: MotorTask,
                source: SegmentSource, duration_s: float = DEFAULT_SEGMENT_S) -> Segment:
    """Cut a ``duration_s`` window centered on the task span midpoint.

    The window is half-open and starts at span_start + (span_len - n)//2, so a
    12 s span at 200 Hz yields samples [3.5 s, 8.5 s).
    """
    start, end = span
    n_seg = round(duration_s * recording.fs)
    if end - start < n_seg:
        raise ValueError(f"span shorter than segment ({end - start} < {n_seg} samples)")
    if start < 0 or end > len(recording):
        raise ValueError("span outside recording")
    seg_start = start + (end - start - n_seg) // 2
    data = recording.axes_matrix()[seg_start:seg_start + n_seg]
    return Segment(label=label, data=data, fs=recording.fs, source=source,
                   duration_s=duration_s)


# --------------------------------------------------------------------------
# Feature vectors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureLayout:
    """Index map of a predictor vector: (axis, window, bin) -> position.

    Positions run axis-major, then window, then bin; bins are the spectrum
    bins whose center frequency falls inside the retained band.
    """

    mode: str                       # "fft" or "stft"
    axes: tuple[str, ...]
    n_windows: int
    bin_freqs: tuple[float, ...]
    band: tuple[float, float]
    fs: float
    window_len_s: float
    hop_s: float

    def __len__(self):
        return len(self.axes) * self.n_windows * len(self.bin_freqs)

    def index(self, axis: int, window: int, bin_: int) -> int:
        nb, nw = len(self.bin_freqs), self.n_windows
        if not (0 <= axis < len(self.axes) and 0 <= window < nw and 0 <= bin_ < nb):
            raise IndexError("(axis, window, bin) outside layout")
        return (axis * nw + window) * nb + bin_

    def unravel(self, position: int) -> tuple[int, int, int]:
        nb, nw = len(self.bin_freqs), self.n_windows
        if not 0 <= position < len(self):
            raise IndexError("position outside layout")
        axis, rest = divmod(position, nw * nb)
        window, bin_ = divmod(rest, nb)
        return axis, window, bin_

    def descriptor(self) -> dict:
        return {
            "mode": self.mode,
            "axes": list(self.axes),
            "n_windows": self.n_windows,
            "bin_freqs": list(self.bin_freqs),
            "band": list(self.band),
            "fs": self.fs,
            "window_len_s": self.window_len_s,
            "hop_s": self.hop_s,
        }

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.descriptor(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_descriptor(cls, doc: dict) -> "FeatureLayout":
        return cls(mode=doc["mode"], axes=tuple(doc["axes"]), n_windows=doc["n_windows"],
                   bin_freqs=tuple(doc["bin_freqs"]), band=tuple(doc["band"]),
                   fs=doc["fs"], window_len_s=doc["window_len_s"], hop_s=doc["hop_s"])


@dataclass(frozen=True)
class FeatureVector:
    """Concatenated unit-sum power-spectrum blocks for one segment.

    Each (axis, window) block sums to 1, except blocks whose raw power was
    zero: those stay all-zero and are listed in ``degenerate_blocks``.
    """

    values: np.ndarray
    layout: FeatureLayout
    degenerate_blocks: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.shape != (len(self.layout),):
            raise ValueError("values length does not match layout")
        if np.any(values < 0):
            raise ValueError("feature values must be nonnegative")

    def block(self, axis: int, window: int) -> np.ndarray:
        lo = self.layout.index(axis, window, 0)
        return self.values[lo:lo + len(self.layout.bin_freqs)]


def _band_bins(nfft: int, fs: float, band: tuple[float, float]) -> np.ndarray:
    freqs = np.arange(nfft // 2 + 1) * (fs / nfft)
    return np.nonzero((freqs >= band[0]) & (freqs <= band[1]))[0]


def extract_features(seg: Segment, mode: str = "stft",
                     window_len_s: float = DEFAULT_WINDOW_S,
                     hop_s: float = DEFAULT_HOP_S,
                     band: tuple[float, float] = DEFAULT_BAND) -> FeatureVector:
    """Per axis: band-pass, power spectrum (whole segment for "fft", hopped
    windows for "stft"), keep in-band bins, normalize each (axis, window)
    block to unit sum, concatenate.

    The segment mean is removed ahead of the causal band-pass so a constant
    offset cannot leak through the filter's startup transient.
    """
    if mode not in ("fft", "stft"):
        raise ValueError("mode must be 'fft' or 'stft'")
    n = seg.data.shape[0]
    if mode == "fft":
        win, hop = n, n
    else:
        win = round(window_len_s * seg.fs)
        hop = round(hop_s * seg.fs)
        if win < 2 or hop < 1 or win > n:
            raise ValueError("invalid window/hop for this segment")
    starts = list(range(0, n - win + 1, hop))
    bins = _band_bins(win, seg.fs, band)
    if bins.size == 0:
        raise ValueError("retained band contains no spectrum bins")
    layout = FeatureLayout(
        mode=mode, axes=AXIS_NAMES, n_windows=len(starts),
        bin_freqs=tuple((bins * (seg.fs / win)).tolist()),
        band=band, fs=seg.fs,
        window_len_s=win / seg.fs, hop_s=hop / seg.fs,
    )
    bp = design_filter(FilterSpec("butterworth", 3, "bandpass", band), seg.fs)
    values = np.empty(len(layout))
    degenerate = []
    for axis in range(9):
        x = seg.data[:, axis]
        bp.reset()
        filtered = bp.process(x - x.mean())
        for w, start in enumerate(starts):
            spec = periodogram(TimeSeries(filtered[start:start + win], seg.fs))
            block = spec.power[bins]
            total = block.sum()
            if total > 0.0:
                block = block / total
            else:
                degenerate.append((axis, w))
            lo = layout.index(axis, w, 0)
            values[lo:lo + bins.size] = block
    return FeatureVector(values=values, layout=layout,
                         degenerate_blocks=tuple(degenerate))


# --------------------------------------------------------------------------
# Datasets
# --------------------------------------------------------------------------

@dataclass
class Dataset:
    """Feature matrix with labels and the layout its columns follow."""

    X: np.ndarray                    # (n, p)
    y: list[str]
    layout: FeatureLayout
    sources: list[SegmentSource] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] != len(self.y):
            raise ValueError("X rows must match labels")
        if self.X.size and not np.all(np.isfinite(self.X)):
            raise ValueError("features must be finite")

    def __len__(self):
        return self.X.shape[0]

    def class_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for label in self.y:
            counts[label] = counts.get(label, 0) + 1
        return counts


def build_dataset(segments: Iterable[Segment], mode: str = "stft",
                  window_len_s: float = DEFAULT_WINDOW_S, hop_s: float = DEFAULT_HOP_S,
                  band: tuple[float, float] = DEFAULT_BAND) -> Dataset:
    """Extract features for every segment, in a stable order independent of
    the order segments arrive in."""
    ordered = sorted(segments, key=lambda s: (s.source.key(), s.label.label))
    if not ordered:
        empty_layout = FeatureLayout(mode=mode, axes=AXIS_NAMES, n_windows=0,
                                     bin_freqs=(), band=band, fs=0.0,
                                     window_len_s=window_len_s, hop_s=hop_s)
        return Dataset(X=np.zeros((0, 0)), y=[], layout=empty_layout)
    rows, labels, sources = [], [], []
    layout = None
    for seg in ordered:
        fv = extract_features(seg, mode=mode, window_len_s=window_len_s,
                              hop_s=hop_s, band=band)
        if layout is None:
            layout = fv.layout
        elif fv.layout != layout:
            raise ValueError("segments produce mixed feature layouts")
        rows.append(fv.values)
        labels.append(seg.label.label)
        sources.append(seg.source)
    return Dataset(X=np.vstack(rows), y=labels, layout=layout, sources=sources)


def save_dataset(dataset: Dataset, path) -> None:
    """One JSON header line (layout descriptor), then label-first CSV rows."""
    with open(path, "w") as fh:
        fh.write(json.dumps(dataset.layout.descriptor(), sort_keys=True) + "\n")
        for label, row in zip(dataset.y, dataset.X):
            fh.write(label + "," + ",".join(repr(float(v)) for v in row) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        header = fh.readline()
        layout = FeatureLayout.from_descriptor(json.loads(header))
        labels, rows = [], []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            labels.append(parts[0])
            rows.append(np.array([float(v) for v in parts[1:]]))
    X = np.vstack(rows) if rows else np.zeros((0, len(layout)))
    return Dataset(X=X, y=labels, layout=layout)


# --------------------------------------------------------------------------
# Synthetic pilot corpus
# --------------------------------------------------------------------------

def _jitter_scenario(base: TaskScenario, rng: np.random.Generator, seed: int) -> TaskScenario:
    """Vary tremor and motion parameters across simulated subjects."""
    tremor = base.tremor
    if tremor is not None:
        tremor = replace(
            tremor,
            center_hz=tremor.center_hz + rng.uniform(-0.3, 0.3),
            rms_mg=tremor.rms_mg * rng.uniform(0.8, 1.25),
        )
    macro = base.macro
    if macro is not None:
        if macro.kind == "reach":
            macro = replace(macro, peak_accel_mg=macro.peak_accel_mg * rng.uniform(0.85, 1.15),
                            rep_duration_s=macro.rep_duration_s * rng.uniform(0.9, 1.1))
        else:
            macro = replace(macro, freq_hz=macro.freq_hz * rng.uniform(0.85, 1.15),
                            amplitude_deg=macro.amplitude_deg * rng.uniform(0.85, 1.1))
    return replace(base, tremor=tremor, macro=macro, seed=seed)


def synthetic_corpus(n_per_class: int = 20, seed: int = 0,
                     config: Optional[SensorConfig] = None,
                     duration_s: float = 12.0,
                     tasks: Sequence[MotorTask] = (RP, PP, FN, HM),
                     quantize_loop: bool = True) -> list[Segment]:
    """Simulated pilot study: ``n_per_class`` recordings per task, one per
    (subject, hand). Each recording is synthesized, optionally pushed through
    the quantize/dequantize loop, and cut to its mid-position segment."""
    config = config or SensorConfig()
    master = np.random.default_rng(seed)
    segments = []
    for t_idx, task in enumerate(tasks):
        for i in range(n_per_class):
            subject = f"s{i // 2:02d}"
            hand = "L" if i % 2 == 0 else "R"
            rec_seed = int(master.integers(0, 2**31 - 1))
            scenario = _jitter_scenario(default_scenario(task, duration_s=duration_s),
                                        master, rec_seed)
            rec = synth_task(scenario, config)
            if quantize_loop:
                rec = dequantize(quantize(rec, config), config)
            margin = round(0.5 * config.fs)
            span = (margin, len(rec) - margin)
            segments.append(segment_mid(rec, span, task,
                                        SegmentSource(subject=subject, hand=hand,
                                                      task_index=t_idx + 1)))
    return segments
