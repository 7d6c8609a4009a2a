"""WebSocket session API: JSON commands and acks, pushed annotation events,
and binary processed-frame batches for strip-chart subscribers.

Message shapes are documented in PROTOCOL.md. Each connection gets its own
bounded drop-oldest sink, so a slow chart never stalls the engine.
"""

from __future__ import annotations

import json
import struct
import threading
import time
from websockets.sync.server import serve

from .engine import DisplaySink, ProcessedBatch, SessionRunner

_BATCH_HEADER = struct.Struct(">IHBB")


def encode_batch(batch: ProcessedBatch) -> bytes:
    """start_index (u32) | sample count (u16) | channels (u8) | 0 | f32 data.

    Samples are row-major float32 big-endian, one row per sample.
    """
    samples = batch.samples.astype(">f4")
    n, ch = samples.shape
    return _BATCH_HEADER.pack(batch.start_index, n, ch, 0) + samples.tobytes()


def decode_batch(data: bytes) -> tuple[int, "np.ndarray"]:
    import numpy as np

    start, n, ch, _ = _BATCH_HEADER.unpack(data[:_BATCH_HEADER.size])
    flat = np.frombuffer(data, dtype=">f4", offset=_BATCH_HEADER.size)
    return start, flat.reshape(n, ch).astype(float)


class EngineServer:
    """Serves one live session to any number of console clients."""

    def __init__(self, runner: SessionRunner, host: str = "127.0.0.1", port: int = 8765):
        self.runner = runner
        self.host = host
        self.port = port
        self._server = None
        self._threads: list[threading.Thread] = []
        self._stopping = threading.Event()

    # -- per-connection plumbing ---------------------------------------------

    def _pump(self, conn, sink: DisplaySink, subscribed: threading.Event):
        """Drain one client's sink: events as JSON, batches as binary."""
        try:
            while not self._stopping.is_set():
                sent = False
                while sink.events:
                    doc = sink.events.popleft()
                    conn.send(json.dumps({"type": "event", **doc}))
                    sent = True
                if subscribed.is_set():
                    while sink.batches:
                        conn.send(encode_batch(sink.batches.popleft()))
                        sent = True
                if not sent:
                    time.sleep(0.005)
        except Exception:
            return  # connection closed

    def _handle(self, conn):
        sink = DisplaySink(maxlen=128, name=f"ws-{id(conn):x}")
        subscribed = threading.Event()
        self.runner.engine.subscribe(sink)
        pump = threading.Thread(target=self._pump, args=(conn, sink, subscribed),
                                daemon=True)
        pump.start()
        self._threads.append(pump)
        engine = self.runner.engine
        try:
            for message in conn:
                if isinstance(message, bytes):
                    continue
                try:
                    doc = json.loads(message)
                except json.JSONDecodeError:
                    conn.send(json.dumps({"type": "error", "error": "bad json"}))
                    continue
                mid = doc.get("id")
                kind = doc.get("type")
                if kind == "command":
                    ack = self.runner.command(doc.get("action", ""),
                                              **doc.get("args", {}))
                    conn.send(json.dumps({"type": "ack", "id": mid, **ack}))
                elif kind == "subscribe":
                    subscribed.set()
                    conn.send(json.dumps({
                        "type": "stream_config", "id": mid,
                        "channels": list(engine._view.channels),
                        "view": engine.config.view.to_doc(),
                        "fs": engine.config.sensor.fs,
                    }))
                elif kind == "unsubscribe":
                    subscribed.clear()
                    conn.send(json.dumps({"type": "ack", "id": mid, "ok": True}))
                elif kind == "list_events":
                    conn.send(json.dumps({
                        "type": "events", "id": mid,
                        "events": engine.session.event_strings(),
                        "open_task": (engine.session.open_event.task.label
                                      if engine.session.open_event else None),
                    }))
                elif kind == "state":
                    conn.send(json.dumps({"type": "state", "id": mid,
                                          **engine.state_digest()}))
                else:
                    conn.send(json.dumps({"type": "error", "id": mid,
                                          "error": f"unknown message type {kind!r}"}))
        finally:
            if sink in engine._sinks:
                engine._sinks.remove(sink)

    # -- lifecycle --------------------------------------------------------------

    def start(self) -> "EngineServer":
        self._server = serve(self._handle, self.host, self.port)
        thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        thread.start()
        self._threads.append(thread)
        if self.port == 0:   # pick the bound port back up for tests
            self.port = self._server.socket.getsockname()[1]
        return self

    def stop(self):
        self._stopping.set()
        if self._server is not None:
            self._server.shutdown()

    @property
    def url(self) -> str:
        return f"ws://{self.host}:{self.port}"
