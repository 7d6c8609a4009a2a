"""Binary frame codec and register-style configuration protocol for the
sensor link, plus sequence-gap tracking and throughput accounting.

Wire unit: a 2-byte sync preamble 0xA5 0x5A followed by the 27-byte frame
body: seq (u16) | t (u32) | 9 x i16 payload | flags (u8) | crc (u16), all
big-endian. The CRC is CCITT-FALSE over seq..flags. See PROTOCOL.md.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional

SYNC = b"\xa5\x5a"
BODY_LEN = 27                       # seq..crc
WIRE_LEN = len(SYNC) + BODY_LEN     # 29 on the wire
_BODY_FMT = ">HI9hB"                # seq, t, payload, flags (crc appended)

FLAG_SATURATION = 0x01
FLAG_MARKER = 0x02


class FrameError(Exception):
    """Base class for frame decoding failures."""


class BadSync(FrameError):
    pass


class BadCrc(FrameError):
    pass


class Truncated(FrameError):
    pass


def _crc_table():
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
        table.append(crc)
    return table


_CRC_TABLE = _crc_table()


def crc16_ccitt(data: bytes, init: int = 0xFFFF) -> int:
    crc = init
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[((crc >> 8) ^ b) & 0xFF]
    return crc


@dataclass(frozen=True)
class Frame:
    """One sensor frame: wrapping sequence number, 32-bit sample index,
    nine 16-bit signed channel counts and a flags byte."""

    seq: int
    t: int
    payload: tuple[int, ...]
    flags: int = 0

    def __post_init__(self):
        if not 0 <= self.seq <= 0xFFFF:
            raise ValueError("seq must fit in 16 bits")
        if not 0 <= self.t <= 0xFFFFFFFF:
            raise ValueError("t must fit in 32 bits")
        payload = tuple(int(v) for v in self.payload)
        if len(payload) != 9:
            raise ValueError("payload must carry 9 channel counts")
        if any(not -32768 <= v <= 32767 for v in payload):
            raise ValueError("payload counts must fit in signed 16 bits")
        if not 0 <= self.flags <= 0xFF:
            raise ValueError("flags must fit in 8 bits")
        object.__setattr__(self, "payload", payload)


def encode_frame(f: Frame) -> bytes:
    """Frame -> 29 wire bytes (sync + 27-byte body)."""
    body = struct.pack(_BODY_FMT, f.seq, f.t, *f.payload, f.flags)
    return SYNC + body + struct.pack(">H", crc16_ccitt(body))


def decode_frame(buf: bytes, offset: int = 0) -> Frame:
    """Decode one frame whose sync starts at ``offset``.

    Raises BadSync / Truncated / BadCrc, each distinguishable.
    """
    if buf[offset:offset + 2] != SYNC:
        raise BadSync(f"no sync at offset {offset}")
    start = offset + 2
    end = start + BODY_LEN
    if len(buf) < end:
        raise Truncated(f"need {BODY_LEN} body bytes after sync, have {len(buf) - start}")
    body = buf[start:end - 2]
    (crc,) = struct.unpack(">H", buf[end - 2:end])
    if crc16_ccitt(body) != crc:
        raise BadCrc(f"crc mismatch at offset {offset}")
    fields = struct.unpack(_BODY_FMT, body)
    return Frame(seq=fields[0], t=fields[1], payload=fields[2:11], flags=fields[11])


class FrameDecoder:
    """Resynchronizing stream decoder.

    Feed arbitrary byte chunks; complete valid frames come back in order.
    Corruption is skipped by scanning for the next sync; nothing raises.
    """

    def __init__(self):
        self._buf = bytearray()
        self.frames_ok = 0
        self.crc_failures = 0
        self.bytes_skipped = 0

    def feed(self, data: bytes) -> list[Frame]:
        self._buf.extend(data)
        out = []
        pos = 0
        buf = self._buf
        while True:
            idx = buf.find(SYNC, pos)
            if idx < 0:
                # keep a possible first sync byte, but only from unconsumed bytes
                keep = 1 if len(buf) > pos and buf[-1] == SYNC[0] else 0
                self.bytes_skipped += len(buf) - pos - keep
                del buf[:len(buf) - keep]
                return out
            self.bytes_skipped += idx - pos
            if len(buf) - idx < WIRE_LEN:
                del buf[:idx]
                return out
            try:
                out.append(decode_frame(buf, idx))
                self.frames_ok += 1
                pos = idx + WIRE_LEN
            except BadCrc:
                self.crc_failures += 1
                self.bytes_skipped += 1
                pos = idx + 1


def encode_stream(frames: Iterable[Frame]) -> bytes:
    return b"".join(encode_frame(f) for f in frames)


# --------------------------------------------------------------------------
# Sequence gaps
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Gap:
    index: int        # position in the observed stream where the jump occurred
    after_seq: int    # last sequence number seen before the gap
    missing: int      # frames lost, modulo 2**16


@dataclass
class GapReport:
    gaps: list[Gap] = field(default_factory=list)
    frames_seen: int = 0

    @property
    def total_missing(self) -> int:
        return sum(g.missing for g in self.gaps)


def detect_gaps(seqs: Iterable[int]) -> GapReport:
    """Find discontinuities in a wrapping 16-bit sequence stream."""
    report = GapReport()
    prev: Optional[int] = None
    for i, seq in enumerate(seqs):
        report.frames_seen += 1
        if prev is not None:
            missing = (seq - prev - 1) & 0xFFFF
            if missing:
                report.gaps.append(Gap(index=i, after_seq=prev, missing=missing))
        prev = seq
    return report


# --------------------------------------------------------------------------
# Register configuration files
# --------------------------------------------------------------------------

class ConfigParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class ConfigCommand:
    """Ordered register writes uploaded to the sensor before streaming."""

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("configuration must contain at least one register write")
        seen = set()
        for addr, value in self.pairs:
            if not 0 <= addr <= 0xFF or not 0 <= value <= 0xFF:
                raise ValueError(f"register pair (0x{addr:X}, 0x{value:X}) outside 8-bit range")
            if addr in seen:
                raise ValueError(f"duplicate register address 0x{addr:02X}")
            seen.add(addr)


def parse_config_file(text: str) -> ConfigCommand:
    """Parse ``ADDR=VALUE`` hex lines; ``#`` starts a comment."""
    pairs = []
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"expected ADDR=VALUE, got {line!r}", lineno)
        left, right = (part.strip() for part in line.split("=", 1))
        try:
            addr = int(left, 16)
            value = int(right, 16)
        except ValueError:
            raise ConfigParseError(f"malformed hex in {line!r}", lineno) from None
        if not 0 <= addr <= 0xFF or not 0 <= value <= 0xFF:
            raise ConfigParseError(f"{line!r} outside 8-bit range", lineno)
        if addr in seen:
            raise ConfigParseError(
                f"duplicate address 0x{addr:02X} (first on line {seen[addr]})", lineno)
        seen[addr] = lineno
        pairs.append((addr, value))
    if not pairs:
        raise ConfigParseError("no register writes found", 1)
    return ConfigCommand(pairs=tuple(pairs))


def format_config_file(cmd: ConfigCommand) -> str:
    return "\n".join(f"0x{addr:02X}=0x{value:02X}" for addr, value in cmd.pairs) + "\n"


# --------------------------------------------------------------------------
# Throughput accounting
# --------------------------------------------------------------------------

LINK_BUDGET_KBPS = 560.0     # radio link ceiling
IMU_BUDGET_KBPS = 144.0      # sensor-side transfer ceiling


def throughput_report(fs: float) -> dict:
    """Steady-state data rates at ``fs`` frames per second."""
    return {
        "fs": fs,
        "frame_body_kbps": BODY_LEN * fs * 8 / 1000.0,
        "wire_kbps": WIRE_LEN * fs * 8 / 1000.0,
        "sensor_payload_kbps": 18 * fs * 8 / 1000.0,
        "link_budget_kbps": LINK_BUDGET_KBPS,
        "imu_budget_kbps": IMU_BUDGET_KBPS,
    }
