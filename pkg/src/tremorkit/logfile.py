"""Session log: an append-only stream of length-prefixed records.

Record wire form (big-endian): type (u8) | seq (u32) | length (u32) | body.
Frame batches store the original encoded sensor frames byte for byte, so a
log replays exactly; annotations, configuration changes and performance
samples are JSON bodies, so a log is still greppable.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator

from .wire import Frame, FrameDecoder

REC_SESSION_HEADER = 0x01
REC_FRAME_BATCH = 0x02
REC_EVENT = 0x03
REC_CONFIG_CHANGE = 0x04
REC_PERF = 0x05
REC_SESSION_END = 0x06

_JSON_TYPES = {REC_SESSION_HEADER, REC_EVENT, REC_CONFIG_CHANGE, REC_PERF, REC_SESSION_END}
_HEADER = struct.Struct(">BII")


class LogError(Exception):
    """Log is truncated or corrupt. ``last_good_seq`` names the last record
    that read back intact (-1 if none did)."""

    def __init__(self, message: str, last_good_seq: int):
        super().__init__(f"{message} (last good record seq {last_good_seq})")
        self.last_good_seq = last_good_seq


@dataclass(frozen=True)
class LogRecord:
    type: int
    seq: int
    body: bytes

    def json(self) -> dict:
        if self.type not in _JSON_TYPES:
            raise ValueError("record body is binary, not JSON")
        return json.loads(self.body.decode())

    def frames(self) -> list[Frame]:
        if self.type != REC_FRAME_BATCH:
            raise ValueError("not a frame batch record")
        decoder = FrameDecoder()
        frames = decoder.feed(self.body)
        if decoder.bytes_skipped or decoder.crc_failures:
            raise LogError("frame batch body does not decode cleanly", self.seq)
        return frames


class LogWriter:
    """Sequential writer; every record gets the next sequence number."""

    def __init__(self, fh: BinaryIO):
        self._fh = fh
        self._seq = 0

    @property
    def records_written(self) -> int:
        return self._seq

    def _write(self, rec_type: int, body: bytes) -> int:
        seq = self._seq
        self._fh.write(_HEADER.pack(rec_type, seq, len(body)))
        self._fh.write(body)
        self._seq += 1
        return seq

    def write_json(self, rec_type: int, doc: dict) -> int:
        return self._write(rec_type, json.dumps(doc, sort_keys=True).encode())

    def write_frames(self, encoded: bytes) -> int:
        return self._write(REC_FRAME_BATCH, encoded)

    def flush(self):
        self._fh.flush()


def read_records(fh: BinaryIO) -> Iterator[LogRecord]:
    """Yield records; raise LogError on truncation, gaps, or bad types."""
    last_good = -1
    expected = 0
    while True:
        header = fh.read(_HEADER.size)
        if not header:
            return
        if len(header) < _HEADER.size:
            raise LogError("truncated record header", last_good)
        rec_type, seq, length = _HEADER.unpack(header)
        if rec_type not in _JSON_TYPES and rec_type != REC_FRAME_BATCH:
            raise LogError(f"unknown record type 0x{rec_type:02X}", last_good)
        if seq != expected:
            raise LogError(f"record sequence jump to {seq}", last_good)
        body = fh.read(length)
        if len(body) < length:
            raise LogError("truncated record body", last_good)
        record = LogRecord(type=rec_type, seq=seq, body=body)
        if rec_type in _JSON_TYPES:
            try:
                record.json()
            except (ValueError, UnicodeDecodeError):
                raise LogError("corrupt JSON record body", last_good) from None
        last_good = seq
        expected = seq + 1
        yield record


def read_log(path) -> list[LogRecord]:
    with open(path, "rb") as fh:
        return list(read_records(fh))
