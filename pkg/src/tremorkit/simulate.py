"""Synthetic 9-axis IMU source: deterministic task motion plus configurable
Gaussian sensor noise, quantized to raw counts like the real front end.

Units throughout: accelerometer mg, gyroscope dps, magnetometer gauss.
Sample output is counts = round(value * sensitivity), clipped at the
full-scale count for the configured range.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Iterator, Optional, Union

import numpy as np

from .dsp import FilterSpec, TimeSeries, design_filter
from .session import FN, HM, PP, RP, MotorTask, task_from_label

G_MG = 1000.0                 # 1 g in mg
MS2_PER_G = 9.80665           # m/s^2 per g
EARTH_FIELD_GAUSS = (0.22, 0.0, 0.41)

# counts per physical unit at each range setting
ACCEL_SENSITIVITY = {2: 15.0, 4: 7.5, 8: 3.75, 16: 1.875}          # per mg
GYRO_SENSITIVITY = {250: 120.0, 500: 60.0, 1000: 30.0, 2000: 15.0}  # per dps
MAG_SENSITIVITY = {4: 6842.0, 8: 3421.0, 12: 2281.0, 16: 1711.0}    # per gauss

INT16_MAX = 32767

TREMOR_BANDS = {
    "physiological": (9.0, 13.0),
    "pd_rest": (3.0, 6.0),
    "et_action": (2.0, 7.0),
}


@dataclass(frozen=True)
class SensorConfig:
    """Front-end configuration mirroring the IMU register settings."""

    fs: float = 200.0
    accel_range_g: int = 2
    gyro_range_dps: int = 500
    mag_range_gauss: int = 4
    accel_sensitivity: Optional[float] = None     # counts per mg
    gyro_sensitivity: Optional[float] = None      # counts per dps
    mag_sensitivity: Optional[float] = None       # counts per gauss
    accel_noise_psd_ug: float = 260.0             # ug/sqrt(Hz), low-noise mode max
    gyro_noise_psd_dps: float = 0.025             # dps/sqrt(Hz)
    mag_rms_noise_mgauss: tuple[float, float, float] = (3.2, 3.2, 4.1)
    noise_bandwidth_hz: Optional[float] = None    # defaults to fs

    def __post_init__(self):
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        for value, table, name in (
            (self.accel_range_g, ACCEL_SENSITIVITY, "accel_range_g"),
            (self.gyro_range_dps, GYRO_SENSITIVITY, "gyro_range_dps"),
            (self.mag_range_gauss, MAG_SENSITIVITY, "mag_range_gauss"),
        ):
            if value not in table:
                raise ValueError(f"{name}={value} not a supported range {sorted(table)}")
        if self.accel_sensitivity is None:
            object.__setattr__(self, "accel_sensitivity", ACCEL_SENSITIVITY[self.accel_range_g])
        if self.gyro_sensitivity is None:
            object.__setattr__(self, "gyro_sensitivity", GYRO_SENSITIVITY[self.gyro_range_dps])
        if self.mag_sensitivity is None:
            object.__setattr__(self, "mag_sensitivity", MAG_SENSITIVITY[self.mag_range_gauss])
        for sens, full in (
            (self.accel_sensitivity, self.accel_range_g * G_MG),
            (self.gyro_sensitivity, self.gyro_range_dps),
            (self.mag_sensitivity, self.mag_range_gauss),
        ):
            if sens * full > INT16_MAX + 1:
                raise ValueError("sensitivity * full scale exceeds 16-bit signed output")

    @property
    def noise_bandwidth(self) -> float:
        return self.fs if self.noise_bandwidth_hz is None else self.noise_bandwidth_hz

    def full_scale_counts(self, channel: str) -> int:
        if channel == "accel":
            return round(self.accel_sensitivity * self.accel_range_g * G_MG)
        if channel == "gyro":
            return round(self.gyro_sensitivity * self.gyro_range_dps)
        if channel == "mag":
            return round(self.mag_sensitivity * self.mag_range_gauss)
        raise ValueError(f"unknown channel {channel!r}")

    def noise_sigma(self, channel: str, axis: int = 0) -> float:
        """Standard deviation of the white sample noise in channel units."""
        bw = self.noise_bandwidth
        if channel == "accel":
            return self.accel_noise_psd_ug * 1e-3 * math.sqrt(bw)   # -> mg
        if channel == "gyro":
            return self.gyro_noise_psd_dps * math.sqrt(bw)
        if channel == "mag":
            return self.mag_rms_noise_mgauss[axis] * 1e-3           # -> gauss, already RMS
        raise ValueError(f"unknown channel {channel!r}")

    def to_doc(self) -> dict:
        doc = asdict(self)
        doc["mag_rms_noise_mgauss"] = list(self.mag_rms_noise_mgauss)
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "SensorConfig":
        doc = dict(doc)
        doc["mag_rms_noise_mgauss"] = tuple(doc.get("mag_rms_noise_mgauss", (3.2, 3.2, 4.1)))
        return cls(**doc)


def gen_noise(config: SensorConfig, channel: str, n: int, seed,
              axis: int = 0) -> TimeSeries:
    """Zero-mean Gaussian white noise for one sensor axis, reproducible per seed.

    For accel/gyro the sample sigma is PSD * sqrt(noise bandwidth); the
    magnetometer uses its per-axis RMS figure directly.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    sigma = config.noise_sigma(channel, axis)
    rng = np.random.default_rng(seed)
    return TimeSeries(sigma * rng.standard_normal(n), config.fs)


# --------------------------------------------------------------------------
# Task scenarios
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TremorSpec:
    """Narrow-band oscillation: a Gaussian process band-passed around
    ``center_hz`` and scaled so the dominant axis has the requested RMS."""

    center_hz: float = 12.7
    bandwidth_hz: float = 2.5
    rms_mg: float = 4.5
    axis_weights: tuple[float, float, float] = (0.25, 1.0, 0.25)

    def __post_init__(self):
        if self.center_hz <= 0 or self.bandwidth_hz <= 0:
            raise ValueError("tremor center and bandwidth must be positive")
        if self.rms_mg < 0:
            raise ValueError("tremor rms must be >= 0")

    def band(self) -> Optional[str]:
        for name, (lo, hi) in TREMOR_BANDS.items():
            if lo <= self.center_hz <= hi:
                return name
        return None


@dataclass(frozen=True)
class ReachMotion:
    """Minimum-jerk there-and-back reach, repeated and evenly spaced."""

    kind: str = field(default="reach", init=False)
    repetitions: int = 3
    rep_duration_s: float = 3.0
    peak_accel_mg: float = 580.0
    axis: int = 1

    def __post_init__(self):
        if self.repetitions < 1 or self.rep_duration_s <= 0:
            raise ValueError("reach needs >=1 repetition of positive duration")


@dataclass(frozen=True)
class RollMotion:
    """Sinusoidal pronation/supination about the sensor roll (x) axis."""

    kind: str = field(default="roll", init=False)
    freq_hz: float = 1.2
    amplitude_deg: float = 45.0

    def __post_init__(self):
        if self.freq_hz <= 0 or self.amplitude_deg <= 0:
            raise ValueError("roll needs positive frequency and amplitude")


MacroMotion = Union[ReachMotion, RollMotion]


@dataclass(frozen=True)
class TaskScenario:
    """Everything needed to synthesize one motor-task recording."""

    task: MotorTask
    duration_s: float = 12.0
    tremor: Optional[TremorSpec] = None
    macro: Optional[MacroMotion] = None
    gravity_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    drift_mg_per_s: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        norm = math.sqrt(sum(c * c for c in self.gravity_axis))
        if norm == 0:
            raise ValueError("gravity_axis must be a nonzero vector")
        object.__setattr__(self, "gravity_axis",
                           tuple(c / norm for c in self.gravity_axis))

    def to_json(self) -> str:
        doc = asdict(self)
        doc["task"] = self.task.label
        if self.macro is not None:
            doc["macro"] = asdict(self.macro)
            doc["macro"]["kind"] = self.macro.kind
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TaskScenario":
        doc = json.loads(text)
        task = task_from_label(doc.pop("task"))
        tremor = doc.pop("tremor", None)
        macro = doc.pop("macro", None)
        kwargs = dict(doc)
        kwargs["gravity_axis"] = tuple(kwargs.get("gravity_axis", (0, 0, 1)))
        kwargs["drift_mg_per_s"] = tuple(kwargs.get("drift_mg_per_s", (0, 0, 0)))
        if tremor is not None:
            tremor["axis_weights"] = tuple(tremor.get("axis_weights", (0.25, 1.0, 0.25)))
            kwargs["tremor"] = TremorSpec(**tremor)
        if macro is not None:
            kind = macro.pop("kind")
            kwargs["macro"] = ReachMotion(**macro) if kind == "reach" else RollMotion(**macro)
        return cls(task=task, **kwargs)


def default_scenario(task: MotorTask, seed: int = 0, duration_s: float = 12.0) -> TaskScenario:
    """Stock scenario for each built-in motor task, sized to avoid saturation
    at the default sensor ranges."""
    if task == RP:
        return TaskScenario(task=task, duration_s=duration_s, seed=seed,
                            tremor=TremorSpec(center_hz=11.0, bandwidth_hz=2.0, rms_mg=1.2),
                            drift_mg_per_s=(0.02, 0.05, 0.02))
    if task == PP:
        return TaskScenario(task=task, duration_s=duration_s, seed=seed,
                            tremor=TremorSpec(center_hz=12.7, bandwidth_hz=0.8, rms_mg=4.5),
                            drift_mg_per_s=(0.02, 0.08, 0.03))
    if task == FN:
        return TaskScenario(task=task, duration_s=duration_s, seed=seed,
                            tremor=TremorSpec(center_hz=10.0, bandwidth_hz=3.0, rms_mg=3.0),
                            macro=ReachMotion(),
                            drift_mg_per_s=(0.02, 0.05, 0.02))
    if task == HM:
        return TaskScenario(task=task, duration_s=duration_s, seed=seed,
                            tremor=TremorSpec(center_hz=11.0, bandwidth_hz=2.5, rms_mg=2.0),
                            macro=RollMotion())
    return TaskScenario(task=task, duration_s=duration_s, seed=seed)


# --------------------------------------------------------------------------
# Synthesis
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Recording:
    """One synthesized 9-axis recording in physical units."""

    accel_mg: np.ndarray    # (n, 3)
    gyro_dps: np.ndarray    # (n, 3)
    mag_gauss: np.ndarray   # (n, 3)
    fs: float

    def __post_init__(self):
        n = self.accel_mg.shape[0]
        if self.accel_mg.shape != (n, 3) or self.gyro_dps.shape != (n, 3) or self.mag_gauss.shape != (n, 3):
            raise ValueError("all channel groups must be (n, 3)")

    def __len__(self):
        return self.accel_mg.shape[0]

    def axes_matrix(self) -> np.ndarray:
        """(n, 9) matrix in fixed axis order: accel xyz, gyro xyz, mag xyz."""
        return np.hstack([self.accel_mg, self.gyro_dps, self.mag_gauss])

    def axis_series(self, index: int) -> TimeSeries:
        return TimeSeries(self.axes_matrix()[:, index], self.fs)


AXIS_NAMES = ("accel_x", "accel_y", "accel_z", "gyro_x", "gyro_y", "gyro_z",
              "mag_x", "mag_y", "mag_z")


def _minimum_jerk_accel(n_leg: int) -> np.ndarray:
    """Acceleration of a unit minimum-jerk leg, normalized to peak 1."""
    tau = (np.arange(n_leg) + 0.5) / n_leg
    j = 60.0 * tau - 180.0 * tau ** 2 + 120.0 * tau ** 3
    return j / 5.7735026919  # max |60t - 180t^2 + 120t^3| on [0, 1]


def _reach_profile(motion: ReachMotion, n: int, fs: float) -> np.ndarray:
    """Acceleration trace (mg) of evenly spaced there-and-back reaches."""
    out = np.zeros(n)
    slot = n / motion.repetitions
    n_rep = round(motion.rep_duration_s * fs)
    n_leg = max(2, n_rep // 2)
    leg = _minimum_jerk_accel(n_leg)
    for i in range(motion.repetitions):
        start = int(round(i * slot + (slot - 2 * n_leg) / 2.0))
        start = max(0, start)
        for sign, offset in ((1.0, 0), (-1.0, n_leg)):
            a, b = start + offset, start + offset + n_leg
            if a >= n:
                break
            seg = leg[: max(0, min(b, n) - a)]
            out[a:a + seg.size] += sign * motion.peak_accel_mg * seg
    return out


def _band_limited_process(n: int, fs: float, center: float, bandwidth: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS Gaussian process band-passed around ``center``."""
    lo = max(0.05, center - bandwidth / 2.0)
    hi = min(fs / 2.0 * 0.98, center + bandwidth / 2.0)
    if lo >= hi:
        raise ValueError("tremor band collapses at this sample rate")
    warmup = round(2.0 * fs)
    white = rng.standard_normal(n + warmup)
    bp = design_filter(FilterSpec("butterworth", 3, "bandpass", (lo, hi)), fs)
    shaped = bp.process(white)[warmup:]
    rms = float(np.sqrt(np.mean(shaped ** 2)))
    return shaped / rms if rms > 0 else shaped


def _roll_angle(motion: RollMotion, n: int, fs: float) -> np.ndarray:
    t = np.arange(n) / fs
    return math.radians(motion.amplitude_deg) * np.sin(2.0 * math.pi * motion.freq_hz * t)


def _rotate_about_x(vec: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """World vector expressed in a sensor frame rolled by theta about x."""
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty((theta.size, 3))
    out[:, 0] = vec[0]
    out[:, 1] = c * vec[1] + s * vec[2]
    out[:, 2] = -s * vec[1] + c * vec[2]
    return out


def synth_task(scenario: TaskScenario, config: SensorConfig) -> Recording:
    """Synthesize the physical-unit 9-axis recording for one scenario.

    Accelerometer = gravity projection + macro-motion + band-limited tremor +
    linear drift + white noise. Gyro and magnetometer follow the trajectory
    orientation, with their own noise models.
    """
    fs = config.fs
    n = round(scenario.duration_s * fs)
    t = np.arange(n) / fs
    streams = np.random.SeedSequence(scenario.seed).spawn(8)
    rngs = [np.random.default_rng(s) for s in streams]

    theta = np.zeros(n)
    omega_x_dps = np.zeros(n)
    if isinstance(scenario.macro, RollMotion):
        theta = _roll_angle(scenario.macro, n, fs)
        m = scenario.macro
        omega_x_dps = (m.amplitude_deg * 2.0 * math.pi * m.freq_hz
                       * np.cos(2.0 * math.pi * m.freq_hz * t))

    gravity = G_MG * np.asarray(scenario.gravity_axis)
    accel = _rotate_about_x(gravity, theta)

    if isinstance(scenario.macro, ReachMotion):
        accel[:, scenario.macro.axis] += _reach_profile(scenario.macro, n, fs)

    if scenario.tremor is not None and scenario.tremor.rms_mg > 0:
        process = scenario.tremor.rms_mg * _band_limited_process(
            n, fs, scenario.tremor.center_hz, scenario.tremor.bandwidth_hz, rngs[0])
        for axis, weight in enumerate(scenario.tremor.axis_weights):
            accel[:, axis] += weight * process

    accel += np.outer(t, np.asarray(scenario.drift_mg_per_s))
    for axis in range(3):
        accel[:, axis] += config.noise_sigma("accel") * rngs[1 + axis].standard_normal(n)

    gyro = np.zeros((n, 3))
    gyro[:, 0] = omega_x_dps
    gyro += config.noise_sigma("gyro") * rngs[4].standard_normal((n, 3))

    mag = _rotate_about_x(np.asarray(EARTH_FIELD_GAUSS), theta)
    for axis in range(3):
        mag[:, axis] += config.noise_sigma("mag", axis) * rngs[5 + axis].standard_normal(n)

    return Recording(accel_mg=accel, gyro_dps=gyro, mag_gauss=mag, fs=fs)


def vibration_scenario(freq_hz: float, pkpk_ms2: float, duration_s: float,
                       config: Optional[SensorConfig] = None, seed: int = 0) -> TimeSeries:
    """Pure sine of the given peak-to-peak acceleration on top of gravity DC
    and sensor noise: the bench-exciter stand-in."""
    config = config or SensorConfig()
    if freq_hz >= config.fs / 2.0:
        raise ValueError("excitation frequency must be below Nyquist")
    if pkpk_ms2 < 0 or duration_s <= 0:
        raise ValueError("need nonnegative amplitude and positive duration")
    n = round(duration_s * config.fs)
    t = np.arange(n) / config.fs
    amp_mg = pkpk_ms2 / 2.0 / MS2_PER_G * 1000.0
    rng = np.random.default_rng(seed)
    samples = (G_MG + amp_mg * np.sin(2.0 * math.pi * freq_hz * t)
               + config.noise_sigma("accel") * rng.standard_normal(n))
    return TimeSeries(samples, config.fs)


# --------------------------------------------------------------------------
# Quantization
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RawFrame:
    """One timestamped 9-axis sample in raw counts."""

    t: int
    accel: tuple[int, int, int]
    gyro: tuple[int, int, int]
    mag: tuple[int, int, int]

    def counts(self) -> tuple[int, ...]:
        return self.accel + self.gyro + self.mag


@dataclass
class QuantizedStream:
    """Counts for a whole recording plus the silent-clipping statistic."""

    counts: np.ndarray          # (n, 9) int32
    fs: float
    saturation_count: int       # clipped values across all channels
    saturated_rows: np.ndarray = None   # (n,) bool, any channel clipped
    t0: int = 0

    def __len__(self):
        return self.counts.shape[0]

    def frames(self) -> Iterator[RawFrame]:
        for i in range(self.counts.shape[0]):
            row = self.counts[i]
            yield RawFrame(
                t=self.t0 + i,
                accel=(int(row[0]), int(row[1]), int(row[2])),
                gyro=(int(row[3]), int(row[4]), int(row[5])),
                mag=(int(row[6]), int(row[7]), int(row[8])),
            )


def quantize(recording: Recording, config: SensorConfig, t0: int = 0) -> QuantizedStream:
    """counts = round(value * sensitivity), clipped at full scale.

    Clipping is silent but tallied in ``saturation_count``.
    """
    groups = (
        (recording.accel_mg, config.accel_sensitivity, config.full_scale_counts("accel")),
        (recording.gyro_dps, config.gyro_sensitivity, config.full_scale_counts("gyro")),
        (recording.mag_gauss, config.mag_sensitivity, config.full_scale_counts("mag")),
    )
    cols = []
    saturated = 0
    row_hit = np.zeros(len(recording), dtype=bool)
    for values, sens, full in groups:
        raw = np.rint(values * sens)
        clipped = np.clip(raw, -full, full)
        hits = raw != clipped
        saturated += int(np.count_nonzero(hits))
        row_hit |= hits.any(axis=1)
        cols.append(clipped.astype(np.int32))
    return QuantizedStream(counts=np.hstack(cols), fs=config.fs,
                           saturation_count=saturated, saturated_rows=row_hit, t0=t0)


def dequantize(stream: QuantizedStream, config: SensorConfig) -> Recording:
    """Counts back to physical units (exact to within half an LSB)."""
    c = stream.counts.astype(np.float64)
    return Recording(
        accel_mg=c[:, 0:3] / config.accel_sensitivity,
        gyro_dps=c[:, 3:6] / config.gyro_sensitivity,
        mag_gauss=c[:, 6:9] / config.mag_sensitivity,
        fs=stream.fs,
    )


def dequantize_counts(counts: np.ndarray, config: SensorConfig) -> np.ndarray:
    """(n, 9) counts -> (n, 9) physical units in the fixed axis order."""
    c = np.asarray(counts, dtype=np.float64)
    out = np.empty_like(c)
    out[:, 0:3] = c[:, 0:3] / config.accel_sensitivity
    out[:, 3:6] = c[:, 3:6] / config.gyro_sensitivity
    out[:, 6:9] = c[:, 6:9] / config.mag_sensitivity
    return out
