"""Recording to disk and real-time pub-sub broadcast.

The recording format is a plain CSV with header
``gaze x,gaze y,pupil x,pupil y,timestamp,confidence``; position and
timestamp columns carry six decimal places, confidence up to six
significant digits.  Timestamps are seconds since the first captured frame.

The message bus fans out to per-subscriber bounded queues (drop-oldest,
1024 deep) so a slow consumer can never block the detection pipeline.  The
wire format frames each message as 2-byte big-endian topic length, topic
bytes, 4-byte big-endian payload length, payload bytes; the payload is a
UTF-8 JSON object mirroring the datum plus its per-topic "seq" number.  The
same framing is used in-process and over TCP.
"""

from __future__ import annotations

import json
import math
import os
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass

from .core import GazeDatum, PupilDatum

GAZE_HEADER = "gaze x,gaze y,pupil x,pupil y,timestamp,confidence"
QUEUE_BOUND = 1024
TOPICS = ("pupil", "gaze", "surface", "latency")


@dataclass(frozen=True)
class RecordRow:
    """One recorded sample in the Table-style gaze CSV schema."""

    gaze_x: float
    gaze_y: float
    pupil_x: float
    pupil_y: float
    timestamp: float
    confidence: float

    def __post_init__(self):
        if math.isfinite(self.confidence) and not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")

    @classmethod
    def from_gaze(cls, g: GazeDatum) -> "RecordRow":
        return cls(
            gaze_x=g.norm_pos[0],
            gaze_y=g.norm_pos[1],
            pupil_x=g.base.norm_pos[0],
            pupil_y=g.base.norm_pos[1],
            timestamp=g.timestamp,
            confidence=g.confidence,
        )

    def values(self) -> tuple[float, ...]:
        return (self.gaze_x, self.gaze_y, self.pupil_x, self.pupil_y, self.timestamp, self.confidence)


def format_row(row: RecordRow) -> str:
    """Serialize one row; six decimals, confidence trimmed to 6 significant."""
    v = row.values()
    return ",".join([f"{x:.6f}" for x in v[:5]] + [f"{v[5]:.6g}"])


def parse_row(line: str) -> RecordRow:
    parts = line.split(",")
    if len(parts) != 6:
        raise ValueError(f"expected 6 fields, got {len(parts)}")
    return RecordRow(*(float(p) for p in parts))


@dataclass(frozen=True)
class WriteSummary:
    n_written: int
    rejected: tuple[tuple[int, str], ...]


def write_recording(rows, directory, timestamps: dict[str, list[float]] | None = None) -> WriteSummary:
    """Write gaze.csv (and per-stream timestamp files) to a directory.

    Rows containing non-finite fields are rejected with a diagnostic rather
    than written.
    """
    os.makedirs(directory, exist_ok=True)
    rejected: list[tuple[int, str]] = []
    n = 0
    path = os.path.join(directory, "gaze.csv")
    with open(path, "w", newline="") as f:
        f.write(GAZE_HEADER + "\n")
        for i, row in enumerate(rows):
            bad = [v for v in row.values() if not math.isfinite(v)]
            if bad:
                rejected.append((i, f"non-finite field {bad[0]!r}"))
                continue
            f.write(format_row(row) + "\n")
            n += 1
        f.flush()
        os.fsync(f.fileno())
    for stream, ts in (timestamps or {}).items():
        with open(os.path.join(directory, f"timestamps_{stream}.csv"), "w", newline="") as f:
            f.write("timestamp\n")
            for t in ts:
                f.write(f"{t:.6f}\n")
            f.flush()
    return WriteSummary(n_written=n, rejected=tuple(rejected))


def read_recording(directory):
    """Yield RecordRows from a recording directory; strict about the schema."""
    path = os.path.join(directory, "gaze.csv")
    with open(path, "r", newline="") as f:
        header = f.readline().rstrip("\n")
        if header != GAZE_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                yield parse_row(line)
            except ValueError as err:
                raise ValueError(f"{path}: line {lineno}: {err}") from None


def read_timestamps(directory, stream: str) -> list[float]:
    path = os.path.join(directory, f"timestamps_{stream}.csv")
    with open(path) as f:
        header = f.readline().strip()
        if header != "timestamp":
            raise ValueError(f"{path}: unexpected header {header!r}")
        return [float(line) for line in f if line.strip()]


# --- pub-sub bus -------------------------------------------------------------


@dataclass(frozen=True)
class Message:
    topic: str
    payload: dict
    seq: int


def encode_message(m: Message) -> bytes:
    topic = m.topic.encode("utf-8")
    body = json.dumps({"seq": m.seq, **m.payload}, separators=(",", ":")).encode("utf-8")
    return struct.pack(">H", len(topic)) + topic + struct.pack(">I", len(body)) + body


def decode_message(buf: bytes, pos: int = 0) -> tuple[Message, int]:
    """Decode one framed message starting at pos; returns (message, next pos)."""
    (tlen,) = struct.unpack_from(">H", buf, pos)
    pos += 2
    topic = buf[pos : pos + tlen].decode("utf-8")
    pos += tlen
    (plen,) = struct.unpack_from(">I", buf, pos)
    pos += 4
    body = json.loads(buf[pos : pos + plen].decode("utf-8"))
    pos += plen
    seq = body.pop("seq")
    return Message(topic=topic, payload=body, seq=seq), pos


class Subscription:
    """Bounded FIFO view of one topic prefix; oldest messages drop first."""

    def __init__(self, prefix: str, bound: int = QUEUE_BOUND):
        self.prefix = prefix
        self._queue: deque[Message] = deque()
        self._bound = bound
        self._lock = threading.Lock()
        self._ready = threading.Condition(self._lock)
        self._closed = False
        self.drops = 0

    def _offer(self, m: Message) -> None:
        with self._ready:
            if self._closed:
                return
            if len(self._queue) >= self._bound:
                self._queue.popleft()
                self.drops += 1
            self._queue.append(m)
            self._ready.notify()

    def get(self, timeout: float | None = None) -> Message | None:
        with self._ready:
            if not self._queue and not self._closed:
                self._ready.wait(timeout)
            if self._queue:
                return self._queue.popleft()
            return None

    def close(self) -> None:
        with self._ready:
            self._closed = True
            self._ready.notify_all()

    @property
    def closed(self) -> bool:
        return self._closed

    def __iter__(self):
        while True:
            m = self.get(timeout=0.1)
            if m is None:
                if self._closed:
                    return
                continue
            yield m


class MessageBus:
    """In-process fan-out bus with per-topic sequence numbers."""

    def __init__(self):
        self._subs: list[Subscription] = []
        self._seq: dict[str, int] = {}
        self._lock = threading.Lock()
        self._closed = False

    def subscribe(self, prefix: str = "") -> Subscription:
        sub = Subscription(prefix)
        with self._lock:
            if self._closed:
                sub.close()
            else:
                self._subs.append(sub)
        return sub

    def publish(self, topic: str, payload: dict) -> Message:
        with self._lock:
            seq = self._seq.get(topic, 0)
            self._seq[topic] = seq + 1
            subs = tuple(self._subs)
        m = Message(topic=topic, payload=payload, seq=seq)
        for sub in subs:
            if topic.startswith(sub.prefix):
                sub._offer(m)
        return m

    def publish_message(self, m: Message) -> None:
        """Deliver a pre-built message without assigning a sequence number."""
        with self._lock:
            subs = tuple(self._subs)
        for sub in subs:
            if m.topic.startswith(sub.prefix):
                sub._offer(m)

    def close(self) -> None:
        with self._lock:
            self._closed = True
            subs = tuple(self._subs)
        for sub in subs:
            sub.close()


# --- payload schemas ---------------------------------------------------------


def pupil_payload(p: PupilDatum) -> dict:
    return {
        "norm_pos": list(p.norm_pos),
        "confidence": p.confidence,
        "timestamp": p.timestamp,
        "ellipse": {
            "center": list(p.ellipse.center),
            "axes": [p.ellipse.a, p.ellipse.b],
            "angle": p.ellipse.theta,
        },
    }


def gaze_payload(g: GazeDatum) -> dict:
    return {
        "norm_pos": list(g.norm_pos),
        "base_norm_pos": list(g.base.norm_pos),
        "confidence": g.confidence,
        "timestamp": g.timestamp,
    }


# --- TCP streaming -----------------------------------------------------------


class StreamServer:
    """Serves bus messages to TCP clients using the framed wire format.

    Each client sends a 2-byte length-prefixed topic prefix on connect and
    then receives matching messages; a slow client drops oldest messages,
    never stalling publishers.
    """

    def __init__(self, bus: MessageBus, host: str = "127.0.0.1", port: int = 0):
        self.bus = bus
        self._sock = socket.create_server((host, port))
        self._sock.settimeout(0.2)
        self.address = self._sock.getsockname()
        self._running = True
        self._threads: list[threading.Thread] = []
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self):
        while self._running:
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            t = threading.Thread(target=self._serve_client, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_client(self, conn: socket.socket):
        try:
            raw = self._recv_exact(conn, 2)
            (plen,) = struct.unpack(">H", raw)
            prefix = self._recv_exact(conn, plen).decode("utf-8") if plen else ""
            sub = self.bus.subscribe(prefix)
            while self._running and not sub.closed:
                m = sub.get(timeout=0.2)
                if m is None:
                    continue
                conn.sendall(encode_message(m))
        except (OSError, ConnectionError):
            pass
        finally:
            conn.close()

    @staticmethod
    def _recv_exact(conn: socket.socket, n: int) -> bytes:
        buf = b""
        while len(buf) < n:
            chunk = conn.recv(n - len(buf))
            if not chunk:
                raise ConnectionError("client closed")
            buf += chunk
        return buf

    def close(self):
        self._running = False
        self._sock.close()


def replay_recording(rows, bus: MessageBus, realtime: bool = True, speed: float = 1.0) -> int:
    """Publish recorded rows over the bus, pacing by recorded timestamps."""
    count = 0
    start_wall = time.perf_counter()
    t0 = None
    for row in rows:
        if t0 is None:
            t0 = row.timestamp
        if realtime:
            target = (row.timestamp - t0) / speed
            delay = target - (time.perf_counter() - start_wall)
            if delay > 0:
                time.sleep(delay)
        bus.publish("gaze", {
            "norm_pos": [row.gaze_x, row.gaze_y],
            "base_norm_pos": [row.pupil_x, row.pupil_y],
            "confidence": row.confidence,
            "timestamp": row.timestamp,
        })
        count += 1
    return count
