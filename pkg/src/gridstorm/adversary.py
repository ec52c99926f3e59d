"""Standalone attacker: watch telemetry, detect an abnormal condition, actuate the PCC breaker."""

from __future__ import annotations

import argparse
import enum
import json
import logging
import math
import socket
import sys
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .netio import (
    ACTION_CLOSE, ACTION_OPEN, DEFAULT_COMMAND_PORT, DEFAULT_TELEMETRY_PORT, REPLY_MAGIC,
    BreakerCommand, MalformedDatagram, TelemetryFrame, decode_reply, decode_telemetry,
    encode_command, encode_sync, parse_endpoint, peek_magic,
)

logger = logging.getLogger(__name__)

US = 1_000_000
ATTACK_GRID_US = 100_000  # attacks start on the next 0.1 s mark after the trigger


class AttackKind(enum.Enum):
    FORCED_ISLANDING = "ForcedIslanding"
    SWITCHING_ATTACK = "SwitchingAttack"


class Mode(enum.IntEnum):
    MONITOR = 0
    TRIGGERED = 1
    EXECUTING = 2
    DONE = 3


@dataclass(frozen=True)
class AttackScenario:
    kind: AttackKind
    target_breaker: int = 1
    t_hold: float = 0.5
    cycle_period: float = 0.2
    reclose_delay: float = 0.1
    cycles: int = 3

    def __post_init__(self) -> None:
        if not self.reclose_delay < self.cycle_period:
            raise ValueError("reclose_delay must be shorter than cycle_period")
        if self.cycles < 1:
            raise ValueError("cycles must be at least 1")
        if self.t_hold <= 0 or self.reclose_delay <= 0:
            raise ValueError("dwell times must be positive")

    @classmethod
    def islanding(cls, target_breaker: int = 1) -> AttackScenario:
        return cls(AttackKind.FORCED_ISLANDING, target_breaker)

    @classmethod
    def switching(cls, target_breaker: int = 1) -> AttackScenario:
        return cls(AttackKind.SWITCHING_ATTACK, target_breaker)


@dataclass(frozen=True)
class DetectorConfig:
    warmup_frames: int = 10
    v_ratio: float = 0.9
    f_band: float = 0.3
    debounce: int = 5
    f_nominal: float = 60.0


@dataclass(frozen=True)
class DetectorState:
    mode: Mode = Mode.MONITOR
    baseline_v: float = float("nan")
    consecutive_abnormal: int = 0
    trigger_time: float | None = None
    frames_seen: int = 0
    last_seq: int = -1
    window: tuple[float, ...] = ()

    @property
    def warmed_up(self) -> bool:
        return not math.isnan(self.baseline_v)


def is_abnormal(frame: TelemetryFrame, baseline_v: float, cfg: DetectorConfig) -> bool:
    f, v = frame.frequency_hz, frame.v_mag_pu
    if not (math.isfinite(f) and math.isfinite(v)):
        return True
    return v < cfg.v_ratio * baseline_v or abs(f - cfg.f_nominal) > cfg.f_band


def observe(frame: TelemetryFrame, det: DetectorState, cfg: DetectorConfig = DetectorConfig()) -> DetectorState:
    """Advance the detector by one frame. Out-of-order frames are ignored."""
    if frame.seq <= det.last_seq:
        return det
    det = replace(det, frames_seen=det.frames_seen + 1, last_seq=frame.seq)
    if det.mode is not Mode.MONITOR:
        return det
    if not det.warmed_up:
        if not math.isfinite(frame.v_mag_pu):
            return det
        window = det.window + (frame.v_mag_pu,)
        baseline = sum(window) / len(window) if len(window) >= cfg.warmup_frames else float("nan")
        return replace(det, window=window, baseline_v=baseline)
    if is_abnormal(frame, det.baseline_v, cfg):
        n = det.consecutive_abnormal + 1
        if n >= cfg.debounce:
            return replace(det, consecutive_abnormal=n, mode=Mode.TRIGGERED, trigger_time=frame.sim_time)
        return replace(det, consecutive_abnormal=n)
    # normal frames keep refreshing a rolling baseline
    window = (det.window + (frame.v_mag_pu,))[-cfg.warmup_frames:]
    return replace(det, consecutive_abnormal=0, window=window, baseline_v=sum(window) / len(window))


def align_start_us(trigger_time_us: int, grid_us: int = ATTACK_GRID_US) -> int:
    """First grid mark strictly after the trigger instant."""
    return (trigger_time_us // grid_us + 1) * grid_us


def plan_attack(scenario: AttackScenario, t0: float, first_seq: int = 1) -> list[BreakerCommand]:
    if t0 < 0:
        raise ValueError("t0 must be non-negative")
    t0_us = round(t0 * US)
    b = scenario.target_breaker
    if scenario.kind is AttackKind.FORCED_ISLANDING:
        times = [(t0_us, ACTION_OPEN), (t0_us + round(scenario.t_hold * US), ACTION_CLOSE)]
    else:
        period, delay = round(scenario.cycle_period * US), round(scenario.reclose_delay * US)
        times = []
        for k in range(scenario.cycles):
            times += [(t0_us + k * period, ACTION_OPEN), (t0_us + k * period + delay, ACTION_CLOSE)]
    return [BreakerCommand(first_seq + i, b, action, at) for i, (at, action) in enumerate(times)]


@dataclass
class AttackReport:
    scenario: str
    target_breaker: int
    frames_seen: int = 0
    malformed: int = 0
    mode: str = Mode.MONITOR.name
    trigger_time: float | None = None
    attack_start: float | None = None
    commands: list[dict] = field(default_factory=list)
    replies: list[dict] = field(default_factory=list)
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


class NoContact(RuntimeError):
    """No telemetry arrived before the contact timeout."""


@dataclass(frozen=True)
class AttackerConfig:
    detector: DetectorConfig = DetectorConfig()
    contact_timeout: float = 10.0
    idle_timeout: float = 1.0
    sync: bool = True
    max_duration: float | None = None


def run_attacker(telemetry: tuple[str, int], command: tuple[str, int], scenario: AttackScenario,
                 cfg: AttackerConfig = AttackerConfig(), sock: socket.socket | None = None,
                 stop: threading.Event | None = None) -> AttackReport:
    """Monitor telemetry until the stream ends, attacking once on trigger.

    Commands and per-frame sync acknowledgements are sent to ``command`` from
    the telemetry socket, so replies come back on the same socket. The run
    ends after ``idle_timeout`` of silence following the last frame, or when
    ``stop`` is set.
    """
    own = sock is None
    if own:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.bind(telemetry)
    report = AttackReport(scenario=scenario.kind.value, target_breaker=scenario.target_breaker)
    det = DetectorState()
    plan: list[BreakerCommand] = []
    started = last_rx = time.monotonic()
    sock.settimeout(0.05)
    try:
        while stop is None or not stop.is_set():
            now = time.monotonic()
            if cfg.max_duration is not None and now - started > cfg.max_duration:
                break
            try:
                data, _ = sock.recvfrom(2048)
            except socket.timeout:
                if report.frames_seen == 0:
                    if now - started > cfg.contact_timeout:
                        report.error = "no telemetry received"
                        raise NoContact(f"no telemetry on {telemetry[0]}:{telemetry[1]} "
                                        f"within {cfg.contact_timeout:.1f} s") from None
                elif now - last_rx > cfg.idle_timeout:
                    break
                continue
            last_rx = time.monotonic()
            magic = peek_magic(data)
            if magic == REPLY_MAGIC:
                try:
                    seq, status = decode_reply(data)
                    report.replies.append({"seq": seq, "status": status.name})
                except MalformedDatagram:
                    report.malformed += 1
                continue
            try:
                frame = decode_telemetry(data)
            except MalformedDatagram:
                report.malformed += 1
                continue
            det = observe(frame, det, cfg.detector)
            report.frames_seen = det.frames_seen
            if det.mode is Mode.TRIGGERED:
                t0_us = align_start_us(frame.sim_time_us)
                plan = plan_attack(scenario, t0_us / US)
                for cmd in plan:
                    sock.sendto(encode_command(cmd), command)
                    report.commands.append({"seq": cmd.seq, "breaker_id": cmd.breaker_id,
                                            "action": "open" if cmd.action == ACTION_OPEN else "close",
                                            "execute_at": cmd.execute_at_us / US})
                report.trigger_time = det.trigger_time
                report.attack_start = t0_us / US
                det = replace(det, mode=Mode.EXECUTING)
                logger.info("triggered at t=%.3f s, %d commands from t=%.1f s",
                            det.trigger_time, len(plan), t0_us / US)
            elif det.mode is Mode.EXECUTING and frame.sim_time_us >= plan[-1].execute_at_us:
                det = replace(det, mode=Mode.DONE)
            report.mode = det.mode.name
            if cfg.sync:
                sock.sendto(encode_sync(frame.seq), command)
    finally:
        if own:
            sock.close()
    return report


def target_id(text: str) -> int:
    """Breaker wire id from a label such as ``PCC-24`` or a bare number."""
    if text.isdigit():
        return int(text)
    from .model import load_bundled_case

    return load_bundled_case().breaker(text).num


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="attacker", description="Breaker attack process for the microgrid testbed.")
    ap.add_argument("--scenario", choices=["islanding", "switching"], required=True)
    ap.add_argument("--target", default="PCC-24", help="breaker label or numeric id")
    ap.add_argument("--telemetry", default=f"0.0.0.0:{DEFAULT_TELEMETRY_PORT}", help="host:port to listen on")
    ap.add_argument("--command", default=f"127.0.0.1:{DEFAULT_COMMAND_PORT}", help="simulator command endpoint")
    ap.add_argument("--report", type=Path, help="write the attack report here")
    ap.add_argument("--contact-timeout", type=float, default=10.0)
    ap.add_argument("--idle-timeout", type=float, default=1.0)
    ap.add_argument("--no-sync", action="store_true", help="do not acknowledge frames (real-time runs)")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    try:
        breaker = target_id(args.target)
    except KeyError as exc:
        ap.error(str(exc))
    scenario = (AttackScenario.islanding if args.scenario == "islanding" else AttackScenario.switching)(breaker)
    cfg = AttackerConfig(contact_timeout=args.contact_timeout, idle_timeout=args.idle_timeout, sync=not args.no_sync)
    try:
        report = run_attacker(parse_endpoint(args.telemetry, "0.0.0.0"), parse_endpoint(args.command),
                              scenario, cfg)
        code = 0
    except NoContact as exc:
        report = AttackReport(scenario=scenario.kind.value, target_breaker=breaker, error=str(exc))
        code = 2
    text = report.to_json()
    if args.report:
        args.report.write_text(text)
    else:
        sys.stdout.write(text)
    if code:
        print(f"attacker: {report.error}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
