"""Binary UDP telemetry/command protocol between the simulator and a remote peer.

All datagrams are little-endian and start with a 4-byte magic and a 1-byte
version. Layouts (byte offsets):

telemetry, 64 bytes, magic ``MGT1``::

    0 magic u32 | 4 version u8 | 5 breaker_state u8 | 6 fault_flag u8 | 7 pad
    8 seq u32 | 12 sim_time_us u64 | 20 bus_id u16 | 22 island_id u16
    24 frequency_hz f64 | 32 v_mag_pu f64 | 40 v_ang_rad f64 | 48 p_mw f64 | 56 q_mvar f64

The two flag bytes live in the header padding so the frame stays at 64 bytes.

command, 24 bytes, magic ``MGC1``::

    0 magic u32 | 4 version u8 | 5 pad[3] | 8 seq u32 | 12 breaker_id u16
    14 action u8 | 15 pad | 16 execute_at_us u64

sync, 12 bytes, magic ``MGS1`` (peer -> simulator, "done with frame seq")::

    0 magic u32 | 4 version u8 | 5 pad[3] | 8 seq u32

reply, 12 bytes, magic ``MGR1`` (simulator -> command sender)::

    0 magic u32 | 4 version u8 | 5 status u8 | 6 pad[2] | 8 seq u32
"""

from __future__ import annotations

import enum
import logging
import queue
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

VERSION = 1
TELEMETRY_MAGIC = 0x4D475431
COMMAND_MAGIC = 0x4D474331
SYNC_MAGIC = 0x4D475331
REPLY_MAGIC = 0x4D475231

TELEMETRY_SIZE = 64
COMMAND_SIZE = 24
SYNC_SIZE = 12
REPLY_SIZE = 12

ACTION_OPEN = 0
ACTION_CLOSE = 1

DEFAULT_TELEMETRY_PORT = 7401
DEFAULT_COMMAND_PORT = 7402

_TELEMETRY = struct.Struct("<IBBBxIQHHddddd")
_COMMAND = struct.Struct("<IB3xIHBxQ")
_SYNC = struct.Struct("<IB3xI")
_REPLY = struct.Struct("<IBB2xI")

assert _TELEMETRY.size == TELEMETRY_SIZE and _COMMAND.size == COMMAND_SIZE
assert _SYNC.size == SYNC_SIZE and _REPLY.size == REPLY_SIZE

U16, U32, U64 = 0xFFFF, 0xFFFFFFFF, 0xFFFFFFFFFFFFFFFF


class MalformedDatagram(ValueError):
    pass


class ReplyStatus(enum.IntEnum):
    ACCEPTED = 0
    UNKNOWN_BREAKER = 1
    REJECTED = 2


@dataclass(frozen=True)
class TelemetryFrame:
    seq: int
    sim_time_us: int
    bus_id: int
    island_id: int
    frequency_hz: float
    v_mag_pu: float
    v_ang_rad: float
    p_mw: float
    q_mvar: float
    breaker_state: int
    fault_flag: int

    @property
    def sim_time(self) -> float:
        return self.sim_time_us / 1e6


@dataclass(frozen=True)
class BreakerCommand:
    seq: int
    breaker_id: int
    action: int
    execute_at_us: int = 0

    def __post_init__(self) -> None:
        if self.action not in (ACTION_OPEN, ACTION_CLOSE):
            raise ValueError(f"action must be 0 or 1, got {self.action}")


def _check_range(name: str, value: int, top: int) -> None:
    if not 0 <= value <= top:
        raise ValueError(f"{name}={value} out of range")


def encode_telemetry(frame: TelemetryFrame) -> bytes:
    _check_range("seq", frame.seq, U32)
    _check_range("sim_time_us", frame.sim_time_us, U64)
    _check_range("bus_id", frame.bus_id, U16)
    _check_range("island_id", frame.island_id, U16)
    _check_range("breaker_state", frame.breaker_state, 0xFF)
    _check_range("fault_flag", frame.fault_flag, 0xFF)
    return _TELEMETRY.pack(TELEMETRY_MAGIC, VERSION, frame.breaker_state, frame.fault_flag,
                           frame.seq, frame.sim_time_us, frame.bus_id, frame.island_id,
                           frame.frequency_hz, frame.v_mag_pu, frame.v_ang_rad, frame.p_mw, frame.q_mvar)


def _header(data: bytes, size: int, magic: int, what: str) -> None:
    if len(data) != size:
        raise MalformedDatagram(f"{what}: expected {size} bytes, got {len(data)}")
    got_magic, version = struct.unpack_from("<IB", data)
    if got_magic != magic:
        raise MalformedDatagram(f"{what}: bad magic 0x{got_magic:08X}")
    if version != VERSION:
        raise MalformedDatagram(f"{what}: unsupported version {version}")


def decode_telemetry(data: bytes) -> TelemetryFrame:
    _header(data, TELEMETRY_SIZE, TELEMETRY_MAGIC, "telemetry")
    (_, _, brk, fault, seq, t_us, bus, island, f, v, ang, p, q) = _TELEMETRY.unpack(data)
    return TelemetryFrame(seq, t_us, bus, island, f, v, ang, p, q, brk, fault)


def encode_command(cmd: BreakerCommand) -> bytes:
    _check_range("seq", cmd.seq, U32)
    _check_range("breaker_id", cmd.breaker_id, U16)
    _check_range("execute_at_us", cmd.execute_at_us, U64)
    return _COMMAND.pack(COMMAND_MAGIC, VERSION, cmd.seq, cmd.breaker_id, cmd.action, cmd.execute_at_us)


def decode_command(data: bytes) -> BreakerCommand:
    _header(data, COMMAND_SIZE, COMMAND_MAGIC, "command")
    if any(data[5:8]) or data[15]:
        raise MalformedDatagram("command: non-zero padding")
    _, _, seq, breaker_id, action, at_us = _COMMAND.unpack(data)
    if action not in (ACTION_OPEN, ACTION_CLOSE):
        raise MalformedDatagram(f"command: invalid action {action}")
    return BreakerCommand(seq, breaker_id, action, at_us)


def encode_sync(seq: int) -> bytes:
    _check_range("seq", seq, U32)
    return _SYNC.pack(SYNC_MAGIC, VERSION, seq)


def decode_sync(data: bytes) -> int:
    _header(data, SYNC_SIZE, SYNC_MAGIC, "sync")
    if any(data[5:8]):
        raise MalformedDatagram("sync: non-zero padding")
    return _SYNC.unpack(data)[2]


def encode_reply(seq: int, status: ReplyStatus) -> bytes:
    _check_range("seq", seq, U32)
    return _REPLY.pack(REPLY_MAGIC, VERSION, int(status), seq)


def decode_reply(data: bytes) -> tuple[int, ReplyStatus]:
    _header(data, REPLY_SIZE, REPLY_MAGIC, "reply")
    _, _, status, seq = _REPLY.unpack(data)
    try:
        return seq, ReplyStatus(status)
    except ValueError:
        raise MalformedDatagram(f"reply: unknown status {status}") from None


def peek_magic(data: bytes) -> int | None:
    return struct.unpack_from("<I", data)[0] if len(data) >= 4 else None


def parse_endpoint(text: str, default_host: str = "127.0.0.1") -> tuple[str, int]:
    """``host:port`` or bare ``port``."""
    host, sep, port = text.rpartition(":")
    if not sep:
        host, port = default_host, text
    try:
        num = int(port)
    except ValueError:
        raise ValueError(f"bad endpoint {text!r}") from None
    if not 0 <= num <= 0xFFFF:
        raise ValueError(f"port out of range in {text!r}")
    return host or default_host, num


# -- loop-side plumbing --------------------------------------------------------


@dataclass
class ListenerStats:
    datagrams: int = 0
    commands: int = 0
    syncs: int = 0
    malformed: int = 0


@dataclass(frozen=True)
class InboundCommand:
    command: BreakerCommand
    sender: tuple[str, int]


class TelemetryPublisher:
    """Sends frames from a bounded outbound queue on a background thread.

    When the queue is full the oldest frame is dropped, as UDP would.
    Replies to command senders share the same socket and queue.
    """

    def __init__(self, target: tuple[str, int], capacity: int = 4096):
        self.target = target
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._out: deque[tuple[bytes, tuple[str, int]]] = deque()
        self._capacity = capacity
        self._cv = threading.Condition()
        self._stop = False
        self.sent = 0
        self.dropped = 0
        self.send_errors = 0
        self._thread = threading.Thread(target=self._run, name="telemetry-publisher", daemon=True)
        self._thread.start()

    def publish(self, frame: TelemetryFrame) -> None:
        self.send_raw(encode_telemetry(frame), self.target)

    def send_raw(self, data: bytes, addr: tuple[str, int]) -> None:
        with self._cv:
            if len(self._out) >= self._capacity:
                self._out.popleft()
                self.dropped += 1
            self._out.append((data, addr))
            self._cv.notify()

    def flush(self, timeout: float = 2.0) -> bool:
        deadline = time.monotonic() + timeout
        with self._cv:
            while self._out:
                left = deadline - time.monotonic()
                if left <= 0:
                    return False
                self._cv.wait(left)
        return True

    def _run(self) -> None:
        while True:
            with self._cv:
                while not self._out and not self._stop:
                    self._cv.wait()
                if not self._out and self._stop:
                    return
                data, addr = self._out.popleft()
                self._cv.notify_all()
            try:
                self.sock.sendto(data, addr)
                self.sent += 1
            except OSError as exc:
                # fire-and-forget: a missing peer must not stop the simulation
                self.send_errors += 1
                logger.debug("telemetry send failed: %s", exc)

    def close(self) -> None:
        self.flush()
        with self._cv:
            self._stop = True
            self._cv.notify_all()
        self._thread.join(timeout=2.0)
        self.sock.close()


class CommandListener:
    """Receives command and sync datagrams on a background thread.

    Commands go to a bounded queue; when it is full the receiver blocks, so
    commands are never dropped here. Sync datagrams advance ``acked_seq``.
    """

    def __init__(self, bind: tuple[str, int], capacity: int = 1024):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.bind(bind)
        except OSError as exc:
            self.sock.close()
            raise OSError(f"cannot bind command listener to {bind[0]}:{bind[1]}: {exc}") from exc
        self.sock.settimeout(0.05)
        self.address = self.sock.getsockname()
        self.inbound: queue.Queue[InboundCommand] = queue.Queue(maxsize=capacity)
        self.stats = ListenerStats()
        self.acked_seq = -1
        self._cv = threading.Condition()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="command-listener", daemon=True)
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                data, sender = self.sock.recvfrom(2048)
            except socket.timeout:
                continue
            except OSError:
                if self._stop.is_set():
                    return
                continue
            self.handle(data, sender)

    def handle(self, data: bytes, sender: tuple[str, int]) -> None:
        self.stats.datagrams += 1
        magic = peek_magic(data)
        try:
            if magic == SYNC_MAGIC:
                seq = decode_sync(data)
                with self._cv:
                    self.stats.syncs += 1
                    self.acked_seq = max(self.acked_seq, seq)
                    self._cv.notify_all()
                return
            cmd = decode_command(data)
        except MalformedDatagram as exc:
            self.stats.malformed += 1
            logger.debug("dropped datagram from %s: %s", sender, exc)
            return
        self.stats.commands += 1
        while not self._stop.is_set():
            try:
                self.inbound.put(InboundCommand(cmd, sender), timeout=0.1)
                return
            except queue.Full:
                continue

    def wait_ack(self, seq: int, timeout: float) -> bool:
        deadline = time.monotonic() + timeout
        with self._cv:
            while self.acked_seq < seq:
                left = deadline - time.monotonic()
                if left <= 0:
                    return False
                self._cv.wait(left)
        return True

    def drain(self) -> list[InboundCommand]:
        out = []
        while True:
            try:
                out.append(self.inbound.get_nowait())
            except queue.Empty:
                return out

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2.0)
        self.sock.close()


class Pacing(enum.Enum):
    LOCKSTEP = "Lockstep"
    REALTIME = "RealTime"


@dataclass
class Pacer:
    """Real-time pacing sleeps until wall time catches up with sim time."""

    mode: Pacing = Pacing.LOCKSTEP
    _t0: float | None = field(default=None, repr=False)

    def wait_until(self, sim_time: float) -> None:
        if self.mode is not Pacing.REALTIME:
            return
        now = time.monotonic()
        if self._t0 is None:
            self._t0 = now - sim_time
        lag = self._t0 + sim_time - now
        if lag > 0:
            time.sleep(lag)
