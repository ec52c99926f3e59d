"""Frequency/voltage limit monitoring and breaker actuation scheduling."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

from .dynamics import EventKind, EventOrigin, SimEvent
from .model import BreakerState, GridModel, MG_PCC_BREAKER
from .netio import ACTION_CLOSE, ACTION_OPEN, BreakerCommand


class ViolationKind(enum.Enum):
    OVER_FREQ = "OverFreq"
    UNDER_FREQ = "UnderFreq"
    OVER_VOLT = "OverVolt"
    UNDER_VOLT = "UnderVolt"


@dataclass(frozen=True)
class ProtectionLimits:
    """IEEE 1547 category thresholds: OF1/UF1 in Hz, voltage band in p.u."""

    of1: float = 61.0
    uf1: float = 58.5
    ov: float = 1.05
    uv: float = 0.95
    f_nominal: float = 60.0

    def __post_init__(self) -> None:
        if not self.of1 > self.f_nominal > self.uf1:
            raise ValueError("frequency limits must bracket nominal")
        if not self.ov > 1.0 > self.uv:
            raise ValueError("voltage limits must bracket 1 p.u.")


@dataclass
class Violation:
    kind: ViolationKind
    bus: int
    t_start: float
    t_end: float
    extremum: float

    def __post_init__(self) -> None:
        if self.t_end < self.t_start:
            raise ValueError("violation ends before it starts")


@dataclass
class ViolationLog:
    """Closed intervals plus the ones still open, keyed by (kind, bus)."""

    closed: list[Violation] = field(default_factory=list)
    open: dict[tuple[ViolationKind, int], Violation] = field(default_factory=dict)
    samples: dict[tuple[ViolationKind, int], int] = field(default_factory=dict)

    @property
    def violations(self) -> list[Violation]:
        """All intervals ordered by start time, open ones included."""
        out = self.closed + list(self.open.values())
        return sorted(out, key=lambda v: (v.t_start, v.kind.value, v.bus))

    def of_kind(self, kind: ViolationKind, bus: int | None = None) -> list[Violation]:
        return [v for v in self.violations if v.kind is kind and (bus is None or v.bus == bus)]

    def sample_count(self, kind: ViolationKind, bus: int) -> int:
        return self.samples.get((kind, bus), 0)

    def duration(self, kind: ViolationKind, bus: int, dt: float) -> float:
        """Measure of the violating sample set, each sample weighted by dt."""
        return self.sample_count(kind, bus) * dt

    def _close(self, key: tuple[ViolationKind, int]) -> None:
        v = self.open.pop(key, None)
        if v is not None:
            self.closed.append(v)


def _outside(kind: ViolationKind, value: float, limits: ProtectionLimits) -> bool:
    if kind is ViolationKind.OVER_FREQ:
        return value > limits.of1
    if kind is ViolationKind.UNDER_FREQ:
        return value < limits.uf1
    if kind is ViolationKind.OVER_VOLT:
        return value > limits.ov
    return value < limits.uv


_WORSE = {
    ViolationKind.OVER_FREQ: max,
    ViolationKind.UNDER_FREQ: min,
    ViolationKind.OVER_VOLT: max,
    ViolationKind.UNDER_VOLT: min,
}


def check_limits(t: float, sample: Mapping[int, tuple[float, float]], limits: ProtectionLimits,
                 log: ViolationLog) -> list[Violation]:
    """Update ``log`` with one sample ``{bus: (f_hz, v_pu)}`` taken at time ``t``.

    Returns the violations opened by this sample. Buses reporting a non-finite
    frequency are de-energized; their open intervals are closed and nothing
    else is recorded for them.
    """
    opened = []
    for bus, (f, v) in sample.items():
        if not math.isfinite(f):
            for kind in ViolationKind:
                log._close((kind, bus))
            continue
        for kind in ViolationKind:
            value = f if kind in (ViolationKind.OVER_FREQ, ViolationKind.UNDER_FREQ) else v
            key = (kind, bus)
            if _outside(kind, value, limits):
                log.samples[key] = log.samples.get(key, 0) + 1
                cur = log.open.get(key)
                if cur is None:
                    cur = log.open[key] = Violation(kind, bus, t, t, value)
                    opened.append(cur)
                else:
                    cur.t_end = t
                    cur.extremum = _WORSE[kind](cur.extremum, value)
            else:
                log._close(key)
    return opened


class UnknownBreaker(KeyError):
    """Command addressed a breaker that does not exist (error reply code 1)."""

    code = 1


@dataclass(frozen=True)
class PendingActuation:
    step: int
    order: int
    event: SimEvent
    seq: int


@dataclass
class ActuationQueue:
    """Pending breaker actuations, quantized to integrator steps."""

    dt: float
    pending: list[PendingActuation] = field(default_factory=list)
    counter: int = 0

    def last_for(self, breaker: str) -> PendingActuation | None:
        mine = [p for p in self.pending if p.event.target == breaker]
        return mine[-1] if mine else None

    def pop_due(self, step: int) -> list[SimEvent]:
        due = [p for p in self.pending if p.step <= step]
        self.pending = [p for p in self.pending if p.step > step]
        return [p.event for p in sorted(due, key=lambda p: (p.step, p.order))]

    def __len__(self) -> int:
        return len(self.pending)


def resolve_breaker(model: GridModel, breaker_id: int) -> str:
    for br in model.breakers:
        if br.num == breaker_id:
            return br.id
    raise UnknownBreaker(f"no breaker with id {breaker_id}")


def schedule_breaker(cmd: BreakerCommand, queue: ActuationQueue, model: GridModel,
                     states: Mapping[str, BreakerState], now_step: int,
                     origin: EventOrigin = EventOrigin.REMOTE) -> PendingActuation | None:
    """Turn a remote command into a pending breaker event.

    The event lands on the first step boundary at or after both the requested
    time and ``now_step``, and never before an earlier command on the same
    breaker. A command that would not change the breaker's projected state is
    dropped and ``None`` returned.
    """
    name = resolve_breaker(model, cmd.breaker_id)
    if cmd.action not in (ACTION_OPEN, ACTION_CLOSE):
        raise ValueError(f"invalid action {cmd.action}")
    want = BreakerState.OPEN if cmd.action == ACTION_OPEN else BreakerState.CLOSED
    last = queue.last_for(name)
    if last is not None:
        projected = BreakerState.OPEN if last.event.kind is EventKind.BREAKER_OPEN else BreakerState.CLOSED
    else:
        projected = states[name]
    if projected is want:
        return None
    # microsecond integers keep the grid exact: 1_000_000 us at dt = 1 ms is step 1000
    dt_us = round(queue.dt * 1e6)
    step = -(-cmd.execute_at_us // dt_us) if cmd.execute_at_us else now_step
    step = max(step, now_step)
    if last is not None:
        step = max(step, last.step)
    kind = EventKind.BREAKER_OPEN if want is BreakerState.OPEN else EventKind.BREAKER_CLOSE
    item = PendingActuation(step=step, order=queue.counter,
                            event=SimEvent(step * queue.dt, kind, name, origin), seq=cmd.seq)
    queue.counter += 1
    queue.pending.append(item)
    return item


@dataclass
class Relay:
    """Limit monitor with optional auto-trip of the PCC breaker (off by default)."""

    limits: ProtectionLimits = field(default_factory=ProtectionLimits)
    auto_trip: bool = False
    trip_breaker: str = MG_PCC_BREAKER
    log: ViolationLog = field(default_factory=ViolationLog)
    tripped: bool = False

    def observe(self, t: float, sample: Mapping[int, tuple[float, float]]) -> list[SimEvent]:
        opened = check_limits(t, sample, self.limits, self.log)
        if opened and self.auto_trip and not self.tripped:
            self.tripped = True
            return [SimEvent(t, EventKind.BREAKER_OPEN, self.trip_breaker, EventOrigin.SCRIPTED)]
        return []
