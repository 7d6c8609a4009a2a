"""Clinical session domain model: motor tasks, rating scores, DBS parameters,
side effects, annotation events and their compact string encoding.

Event strings look like ``5-FN/S3/DBS-3.5V-130Hz-60us/SE6`` and decode to a
structured :class:`AnnotationEvent`. The encoding is canonical: formatting a
parsed string reproduces it byte for byte, and parsing a formatted event
reproduces the event.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional


class AnnotationError(Exception):
    """A session-ordering or annotation rule was violated."""


class EventParseError(ValueError):
    """Malformed event string. Carries the byte offset of the offending field."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


# --------------------------------------------------------------------------
# Motor tasks
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MotorTask:
    """A visually guided hand-movement task, identified by a short label."""

    label: str
    description: str = ""

    def __post_init__(self):
        if not self.label:
            raise ValueError("motor task label must be non-empty")


RP = MotorTask("RP", "rest position")
PP = MotorTask("PP", "posture position")
FN = MotorTask("FN", "finger to nose")
HM = MotorTask("HM", "hand movement (pronation/supination)")

BUILTIN_TASKS = {t.label: t for t in (RP, PP, FN, HM)}


def task_from_label(label: str, custom: Optional[dict[str, MotorTask]] = None) -> MotorTask:
    """Resolve a task label against the built-in kinds plus optional custom ones."""
    if label in BUILTIN_TASKS:
        return BUILTIN_TASKS[label]
    if custom and label in custom:
        return custom[label]
    raise KeyError(f"unknown motor task label: {label!r}")


# --------------------------------------------------------------------------
# Rating score and side effects
# --------------------------------------------------------------------------

SCORE_MIN, SCORE_MAX = 0, 4


def validate_score(value: int) -> int:
    """Rating scores run 0 (absent) through 4 (severe)."""
    if not isinstance(value, int) or isinstance(value, bool) or not SCORE_MIN <= value <= SCORE_MAX:
        raise ValueError(f"rating score must be an integer in [{SCORE_MIN}, {SCORE_MAX}], got {value!r}")
    return value


class SideEffect(IntEnum):
    """Stimulation side effects. Codes are 0-based; the event-string index is
    1-based drop-down position (``SE6`` is speech impairment)."""

    NONE = 0
    MUSCLE_CRAMPS = 1
    PARAESTHESIA = 2
    HEADACHE = 3
    DYSKINESIA = 4
    SPEECH_IMPAIRMENT = 5
    VISUAL_COMPLAINT = 6
    COGNITIVE_IMPAIRMENT = 7

    @property
    def menu_index(self) -> int:
        return self.value + 1

    @classmethod
    def from_menu_index(cls, index: int) -> "SideEffect":
        if not 1 <= index <= 8:
            raise ValueError(f"side-effect menu index must be in [1, 8], got {index}")
        return cls(index - 1)


SIDE_EFFECT_NAMES = {
    SideEffect.NONE: "None",
    SideEffect.MUSCLE_CRAMPS: "muscle cramps",
    SideEffect.PARAESTHESIA: "paraesthesia",
    SideEffect.HEADACHE: "headache",
    SideEffect.DYSKINESIA: "dyskinesia",
    SideEffect.SPEECH_IMPAIRMENT: "speech impairment",
    SideEffect.VISUAL_COMPLAINT: "visual complaint",
    SideEffect.COGNITIVE_IMPAIRMENT: "cognitive impairment",
}


# --------------------------------------------------------------------------
# DBS parameters
# --------------------------------------------------------------------------

AMPLITUDE_RANGE = (0.1, 20.0)        # per 0.1-step grid, mA or V
FREQUENCY_RANGE = (2, 255)           # integer Hz
PULSE_WIDTH_RANGE = (10, 450)        # multiples of 10 us

DBS_STEPS = {
    "amplitude": (0.1, 0.5),
    "frequency": (1, 2, 5, 10),
    "pulse_width": (10,),
}


def _amp_tenths(value: float) -> int:
    tenths = round(value * 10)
    if abs(value * 10 - tenths) > 1e-6:
        raise ValueError(f"amplitude must sit on the 0.1 grid, got {value}")
    return tenths


@dataclass(frozen=True)
class DbsParams:
    """Stimulation settings: amplitude (mA or V), frequency (Hz), pulse width (us).

    Amplitude lives on a 0.1 grid in [0.1, 20.0]; frequency is an integer in
    [2, 255]; pulse width is a multiple of 10 in [10, 450].
    """

    amplitude: float
    unit: str = "mA"           # "mA" or "V"
    frequency: int = 130
    pulse_width: int = 60

    def __post_init__(self):
        if self.unit not in ("mA", "V"):
            raise ValueError(f"amplitude unit must be 'mA' or 'V', got {self.unit!r}")
        tenths = _amp_tenths(self.amplitude)
        lo, hi = AMPLITUDE_RANGE
        if not round(lo * 10) <= tenths <= round(hi * 10):
            raise ValueError(f"amplitude {self.amplitude} outside [{lo}, {hi}]")
        object.__setattr__(self, "amplitude", tenths / 10.0)
        if not isinstance(self.frequency, int) or not FREQUENCY_RANGE[0] <= self.frequency <= FREQUENCY_RANGE[1]:
            raise ValueError(f"frequency {self.frequency!r} outside {FREQUENCY_RANGE} or not an integer")
        if (not isinstance(self.pulse_width, int) or self.pulse_width % 10
                or not PULSE_WIDTH_RANGE[0] <= self.pulse_width <= PULSE_WIDTH_RANGE[1]):
            raise ValueError(f"pulse width {self.pulse_width!r} must be a multiple of 10 in {PULSE_WIDTH_RANGE}")


def apply_dbs_step(params: DbsParams, field_name: str, step) -> DbsParams:
    """Nudge one DBS field by a permitted increment, clamped to its legal range.

    Permitted magnitudes: amplitude 0.1 or 0.5; frequency 1, 2, 5 or 10;
    pulse width 10. ``step`` may be negative. Anything else is rejected.
    """
    if field_name not in DBS_STEPS:
        raise ValueError(f"unknown DBS field {field_name!r}")
    allowed = DBS_STEPS[field_name]
    if not any(abs(abs(step) - a) < 1e-9 for a in allowed):
        raise ValueError(f"step {step!r} not permitted for {field_name} (allowed: +/-{allowed})")
    if field_name == "amplitude":
        lo, hi = (round(v * 10) for v in AMPLITUDE_RANGE)
        tenths = _amp_tenths(params.amplitude) + round(step * 10)
        tenths = min(max(tenths, lo), hi)
        return replace(params, amplitude=tenths / 10.0)
    if field_name == "frequency":
        value = min(max(params.frequency + int(step), FREQUENCY_RANGE[0]), FREQUENCY_RANGE[1])
        return replace(params, frequency=value)
    value = min(max(params.pulse_width + int(step), PULSE_WIDTH_RANGE[0]), PULSE_WIDTH_RANGE[1])
    return replace(params, pulse_width=value)


# --------------------------------------------------------------------------
# Annotation events
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AnnotationEvent:
    """One scored, DBS-tagged motor-task record within a session.

    ``sample_range`` is the half-open [start, end) frame-index span of the
    task; it and ``wall_time`` are stamped by the engine, not by the parser.
    """

    task_index: int
    task: MotorTask
    score: Optional[int] = None
    dbs: Optional[DbsParams] = None
    side_effect: Optional[SideEffect] = None
    set_point: bool = False
    sample_range: Optional[tuple[int, int]] = None
    wall_time: Optional[float] = None

    def __post_init__(self):
        if not isinstance(self.task_index, int) or self.task_index < 1:
            raise ValueError(f"task_index must be a positive integer, got {self.task_index!r}")
        if self.score is not None:
            validate_score(self.score)
        if self.sample_range is not None:
            start, end = self.sample_range
            if not start < end:
                raise ValueError(f"sample_range must satisfy start < end, got {self.sample_range}")

    def without_engine_stamps(self) -> "AnnotationEvent":
        """Copy with engine-filled fields cleared, for grammar round-trips."""
        return replace(self, sample_range=None, wall_time=None)


def _format_amplitude(value: float) -> str:
    tenths = _amp_tenths(value)
    if tenths % 10 == 0:
        return str(tenths // 10)
    return f"{tenths // 10}.{tenths % 10}"


def format_event(e: AnnotationEvent) -> str:
    """Render an event in the canonical wire form, e.g. ``5-FN/S3/DBS-3.5V-130Hz-60us/SE6``.

    Field order is fixed: index-task, score, DBS, side effect, set-point.
    Micro is spelled ``us`` so logs stay ASCII.
    """
    parts = [f"{e.task_index}-{e.task.label}"]
    if e.score is not None:
        parts.append(f"S{e.score}")
    if e.dbs is not None:
        parts.append(
            f"DBS-{_format_amplitude(e.dbs.amplitude)}{e.dbs.unit}-{e.dbs.frequency}Hz-{e.dbs.pulse_width}us"
        )
    if e.side_effect is not None:
        parts.append(f"SE{e.side_effect.menu_index}")
    if e.set_point:
        parts.append("SP")
    return "/".join(parts)


class _Cursor:
    __slots__ = ("s", "pos")

    def __init__(self, s: str):
        self.s = s
        self.pos = 0

    def eof(self) -> bool:
        return self.pos >= len(self.s)

    def peek(self) -> str:
        return self.s[self.pos] if self.pos < len(self.s) else ""

    def take_digits(self, what: str) -> str:
        start = self.pos
        while not self.eof() and self.s[self.pos].isdigit():
            self.pos += 1
        if self.pos == start:
            raise EventParseError(f"expected digits for {what}", start)
        return self.s[start:self.pos]

    def expect(self, literal: str, what: str):
        if not self.s.startswith(literal, self.pos):
            raise EventParseError(f"expected {literal!r} for {what}", self.pos)
        self.pos += len(literal)


def _parse_int(cur: _Cursor, what: str, lo: int, hi: int, allow_leading_zero=False) -> int:
    start = cur.pos
    digits = cur.take_digits(what)
    if not allow_leading_zero and len(digits) > 1 and digits[0] == "0":
        raise EventParseError(f"leading zero in {what}", start)
    value = int(digits)
    if not lo <= value <= hi:
        raise EventParseError(f"{what} {value} outside [{lo}, {hi}]", start)
    return value


def parse_event(s: str, custom_tasks: Optional[dict[str, MotorTask]] = None) -> AnnotationEvent:
    """Parse a canonical event string back into an :class:`AnnotationEvent`.

    ``sample_range`` and ``wall_time`` are left unset. Errors report the byte
    offset of the offending field.
    """
    cur = _Cursor(s)
    index = _parse_int(cur, "task index", 1, 10**9)
    cur.expect("-", "index/task separator")
    label_start = cur.pos
    end = s.find("/", cur.pos)
    label = s[cur.pos:] if end < 0 else s[cur.pos:end]
    if not label:
        raise EventParseError("empty task label", label_start)
    try:
        task = task_from_label(label, custom_tasks)
    except KeyError:
        raise EventParseError(f"unknown task label {label!r}", label_start) from None
    cur.pos += len(label)

    score = None
    dbs = None
    side_effect = None
    set_point = False

    if s.startswith("/S", cur.pos) and not s.startswith("/SE", cur.pos) and not s.startswith("/SP", cur.pos):
        cur.expect("/S", "score")
        score_start = cur.pos
        digits = cur.take_digits("score")
        if len(digits) != 1:
            raise EventParseError("score must be a single digit", score_start)
        score = int(digits)
        if not SCORE_MIN <= score <= SCORE_MAX:
            raise EventParseError(f"score {score} outside [{SCORE_MIN}, {SCORE_MAX}]", score_start)

    if s.startswith("/DBS-", cur.pos):
        cur.expect("/DBS-", "DBS block")
        amp_start = cur.pos
        whole = cur.take_digits("amplitude")
        if len(whole) > 1 and whole[0] == "0":
            raise EventParseError("leading zero in amplitude", amp_start)
        frac = ""
        if cur.peek() == ".":
            cur.pos += 1
            frac = cur.take_digits("amplitude fraction")
            if len(frac) != 1 or frac == "0":
                # canonical form carries exactly one non-zero decimal digit
                raise EventParseError("non-canonical amplitude", amp_start)
        amplitude = int(whole) + (int(frac) / 10.0 if frac else 0.0)
        if cur.peek() == "m":
            cur.expect("mA", "amplitude unit")
            unit = "mA"
        elif cur.peek() == "V":
            cur.expect("V", "amplitude unit")
            unit = "V"
        else:
            raise EventParseError("expected amplitude unit 'mA' or 'V'", cur.pos)
        cur.expect("-", "DBS separator")
        freq = _parse_int(cur, "frequency", *FREQUENCY_RANGE)
        cur.expect("Hz-", "frequency unit")
        pw_start = cur.pos
        pw = _parse_int(cur, "pulse width", *PULSE_WIDTH_RANGE)
        if pw % 10:
            raise EventParseError(f"pulse width {pw} not a multiple of 10", pw_start)
        cur.expect("us", "pulse-width unit")
        try:
            dbs = DbsParams(amplitude=amplitude, unit=unit, frequency=freq, pulse_width=pw)
        except ValueError as exc:
            raise EventParseError(str(exc), amp_start) from None

    if s.startswith("/SE", cur.pos):
        cur.expect("/SE", "side effect")
        menu = _parse_int(cur, "side-effect index", 1, 8)
        side_effect = SideEffect.from_menu_index(menu)

    if s.startswith("/SP", cur.pos):
        cur.expect("/SP", "set-point marker")
        set_point = True

    if not cur.eof():
        raise EventParseError(f"trailing input {s[cur.pos:]!r}", cur.pos)

    return AnnotationEvent(
        task_index=index, task=task, score=score, dbs=dbs,
        side_effect=side_effect, set_point=set_point,
    )


# --------------------------------------------------------------------------
# Session metadata and the session event ledger
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProcedureFlags:
    medication_on: bool = False
    medication_off: bool = False
    dbs_programming: bool = False


@dataclass(frozen=True)
class DbsDevice:
    pulse_generator: str
    electrodes: str
    initial: DbsParams


@dataclass(frozen=True)
class SessionMeta:
    """Patient/session header recorded once at the start of a session."""

    pseudo_id: str
    disease: str = ""
    sensor_placement: str = ""
    procedure: ProcedureFlags = field(default_factory=ProcedureFlags)
    dbs_device: Optional[DbsDevice] = None

    def __post_init__(self):
        if not self.pseudo_id:
            raise ValueError("pseudo_id must be non-empty")
        if self.procedure.dbs_programming and self.dbs_device is None:
            raise ValueError("dbs_programming sessions require a dbs_device")

    def to_json(self) -> str:
        doc = {
            "pseudo_id": self.pseudo_id,
            "disease": self.disease,
            "sensor_placement": self.sensor_placement,
            "procedure": {
                "medication_on": self.procedure.medication_on,
                "medication_off": self.procedure.medication_off,
                "dbs_programming": self.procedure.dbs_programming,
            },
        }
        if self.dbs_device is not None:
            doc["dbs_device"] = {
                "pulse_generator": self.dbs_device.pulse_generator,
                "electrodes": self.dbs_device.electrodes,
                "initial": {
                    "amplitude": self.dbs_device.initial.amplitude,
                    "unit": self.dbs_device.initial.unit,
                    "frequency": self.dbs_device.initial.frequency,
                    "pulse_width": self.dbs_device.initial.pulse_width,
                },
            }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SessionMeta":
        doc = json.loads(text)
        device = None
        if "dbs_device" in doc:
            d = doc["dbs_device"]
            device = DbsDevice(
                pulse_generator=d["pulse_generator"],
                electrodes=d["electrodes"],
                initial=DbsParams(**d["initial"]),
            )
        return cls(
            pseudo_id=doc["pseudo_id"],
            disease=doc.get("disease", ""),
            sensor_placement=doc.get("sensor_placement", ""),
            procedure=ProcedureFlags(**doc.get("procedure", {})),
            dbs_device=device,
        )


class Session:
    """Ordered annotation ledger for one recording session.

    Exactly one task may be open at a time. Closed events keep strictly
    increasing task indices 1..n. Scores may only be attached while a task is
    open and only if not already set; re-scoring after closing is not allowed.
    """

    def __init__(self, meta: SessionMeta):
        self.meta = meta
        self.events: list[AnnotationEvent] = []
        self.open_event: Optional[AnnotationEvent] = None
        self._open_start: Optional[int] = None

    @property
    def next_index(self) -> int:
        return len(self.events) + (2 if self.open_event else 1)

    def start_task(self, task: MotorTask, sample_index: int, wall_time: Optional[float] = None) -> AnnotationEvent:
        if self.open_event is not None:
            raise AnnotationError("a motor task is already open")
        self.open_event = AnnotationEvent(
            task_index=len(self.events) + 1, task=task, wall_time=wall_time,
        )
        self._open_start = sample_index
        return self.open_event

    def stop_task(self, sample_index: int) -> AnnotationEvent:
        if self.open_event is None:
            raise AnnotationError("no active motor task")
        start = self._open_start if self._open_start is not None else 0
        if sample_index <= start:
            sample_index = start + 1  # zero-length tasks are closed with a single frame
        closed = replace(self.open_event, sample_range=(start, sample_index))
        self.events.append(closed)
        self.open_event = None
        self._open_start = None
        return closed

    def _require_open(self) -> AnnotationEvent:
        if self.open_event is None:
            raise AnnotationError("no active motor task")
        return self.open_event

    def set_score(self, value: int) -> AnnotationEvent:
        e = self._require_open()
        validate_score(value)
        if e.score is not None:
            raise AnnotationError(f"task {e.task_index} already scored")
        self.open_event = replace(e, score=value)
        return self.open_event

    def set_dbs(self, params: DbsParams) -> AnnotationEvent:
        e = self._require_open()
        self.open_event = replace(e, dbs=params)
        return self.open_event

    def set_side_effect(self, effect: SideEffect) -> AnnotationEvent:
        e = self._require_open()
        self.open_event = replace(e, side_effect=effect)
        return self.open_event

    def set_point(self) -> AnnotationEvent:
        e = self._require_open()
        self.open_event = replace(e, set_point=True)
        return self.open_event

    def record(self, e: AnnotationEvent) -> None:
        """Append a closed event verbatim (replay path). Enforces ordering."""
        if self.open_event is not None:
            raise AnnotationError("cannot record a closed event while a task is open")
        expected = len(self.events) + 1
        if e.task_index != expected:
            if any(prev.task_index == e.task_index for prev in self.events):
                raise AnnotationError(f"duplicate task index {e.task_index}")
            raise AnnotationError(f"task index {e.task_index} breaks ordering (expected {expected})")
        if e.sample_range is None:
            raise AnnotationError("recorded events must carry a sample range")
        self.events.append(e)

    def event_strings(self) -> list[str]:
        return [format_event(e) for e in self.events]
