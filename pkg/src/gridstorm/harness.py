"""Scenario runner: simulate the four attack cases, compute metrics, write traces and a summary."""

from __future__ import annotations

import argparse
import csv
import enum
import json
import logging
import math
import sys
import threading
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import adversary
from .dynamics import EventKind, SimEvent, SimulationBlowUp, Simulator
from .model import (
    MG_PCC_BREAKER, SYSTEM_MIX, BreakerState, GridModel, build_admittance, load_bundled_case, load_case_file,
)
from .netio import (
    DEFAULT_COMMAND_PORT, DEFAULT_TELEMETRY_PORT, CommandListener, Pacer, Pacing, ReplyStatus, TelemetryFrame,
    TelemetryPublisher, encode_reply,
)
from .protection import (
    ActuationQueue, ProtectionLimits, Relay, UnknownBreaker, ViolationKind, ViolationLog, check_limits,
    schedule_breaker,
)
from .steady import init_dynamics, solve_power_flow

logger = logging.getLogger(__name__)

MG_BUS = 24
SETTLE_BAND_HZ = 0.02
SETTLE_HOLD_S = 0.2
WINDOW_LEAD_S = 0.1


class AttackerMode(enum.Enum):
    EXTERNAL = "External"
    EMBEDDED = "Embedded"
    NONE = "None"


class Verdict(enum.Enum):
    STABLE = "Stable"
    MARGINAL = "Marginal"
    UNSTABLE = "Unstable"


class StageError(RuntimeError):
    """A run failed; ``stage`` names the pipeline stage."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage


@dataclass(frozen=True)
class RunConfig:
    case_file: Path | None = None  # None: bundled 39-bus case
    system: str = "I"
    scenario: int = 1
    dt: float = 1e-3
    t_end: float = 3.0
    pacing: Pacing = Pacing.LOCKSTEP
    attacker: AttackerMode = AttackerMode.EMBEDDED
    seed: int = 0  # reserved; runs are deterministic
    output_dir: Path | None = None
    fault: bool = True
    telemetry: tuple[str, int] = ("127.0.0.1", DEFAULT_TELEMETRY_PORT)
    command_bind: tuple[str, int] = ("0.0.0.0", DEFAULT_COMMAND_PORT)
    publish_every: int = 10
    monitored_buses: tuple[int, ...] = (MG_BUS,)
    auto_trip: bool = False
    sync_timeout: float = 5.0
    connect_timeout: float = 10.0

    def __post_init__(self) -> None:
        if self.system not in SYSTEM_MIX:
            raise ValueError(f"system must be one of {sorted(SYSTEM_MIX)}, got {self.system!r}")
        if self.scenario not in (1, 2):
            raise ValueError(f"scenario must be 1 or 2, got {self.scenario!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.publish_every < 1:
            raise ValueError("publish_every must be at least 1")

    @property
    def tag(self) -> str:
        return f"system{self.system}_scenario{self.scenario}"

    @classmethod
    def from_mapping(cls, data: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        conv = dict(data)
        for key in ("case_file", "output_dir"):
            if conv.get(key) is not None:
                conv[key] = Path(conv[key])
        if "pacing" in conv:
            conv["pacing"] = Pacing(conv["pacing"])
        if "attacker" in conv:
            conv["attacker"] = AttackerMode(conv["attacker"])
        for key in ("telemetry", "command_bind"):
            if key in conv:
                host, port = conv[key]
                conv[key] = (str(host), int(port))
        if "monitored_buses" in conv:
            conv["monitored_buses"] = tuple(int(b) for b in conv["monitored_buses"])
        if "scenario" in conv:
            conv["scenario"] = int(conv["scenario"])
        return cls(**conv)


@dataclass(frozen=True)
class Transition:
    t: float
    breaker: str
    state: str
    origin: str


@dataclass
class Trace:
    t: np.ndarray
    f: np.ndarray
    v: np.ndarray
    ang: np.ndarray
    p: np.ndarray
    q: np.ndarray
    breaker: np.ndarray
    fault: np.ndarray

    COLUMNS = ("t_s", "f_hz", "v_pu", "v_ang_rad", "p_mw", "q_mvar", "breaker", "fault")

    @classmethod
    def empty(cls, n: int) -> Trace:
        z = lambda: np.full(n, np.nan)  # noqa: E731
        return cls(z(), z(), z(), z(), z(), z(), np.zeros(n, dtype=int), np.zeros(n, dtype=int))

    def truncate(self, n: int) -> Trace:
        return Trace(*(getattr(self, k)[:n] for k in ("t", "f", "v", "ang", "p", "q", "breaker", "fault")))

    def __len__(self) -> int:
        return len(self.t)

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for row in zip(self.t, self.f, self.v, self.ang, self.p, self.q, self.breaker, self.fault):
                w.writerow([repr(float(x)) for x in row[:6]] + [int(row[6]), int(row[7])])

    @classmethod
    def read_csv(cls, path: Path) -> Trace:
        data = np.genfromtxt(path, delimiter=",", names=True)
        return cls(data["t_s"], data["f_hz"], data["v_pu"], data["v_ang_rad"], data["p_mw"], data["q_mvar"],
                   data["breaker"].astype(int), data["fault"].astype(int))


@dataclass
class ViolationRecord:
    kind: str
    bus: int
    t_start: float
    t_end: float
    extremum: float


@dataclass
class CaseMetrics:
    f_nadir: float
    f_peak: float
    t_settle: float | None
    v_min: float
    v_max: float
    uv_duration: float
    violations: list[ViolationRecord]
    verdict: Verdict

    @property
    def nadir_deviation(self) -> float:
        return abs(self.f_nadir - 60.0)

    @property
    def max_deviation(self) -> float:
        return max(abs(self.f_nadir - 60.0), abs(self.f_peak - 60.0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> CaseMetrics:
        d = dict(d)
        d["verdict"] = Verdict(d["verdict"])
        d["violations"] = [ViolationRecord(**v) for v in d["violations"]]
        return cls(**d)


def settling_time(t: np.ndarray, f: np.ndarray, t_final: float, dt: float, band: float = SETTLE_BAND_HZ,
                  hold: float = SETTLE_HOLD_S, f_nominal: float = 60.0) -> float | None:
    """Delay after ``t_final`` until |f - nominal| stays within ``band`` for ``hold`` seconds."""
    inside = np.abs(f - f_nominal) <= band  # nan compares False
    n_hold = int(round(hold / dt))
    bad = np.concatenate([[0], np.cumsum(~inside)])
    start = int(np.searchsorted(t, t_final - 0.5 * dt))
    for k in range(start, len(t) - n_hold):
        if bad[k + n_hold + 1] - bad[k] == 0:
            return max(0.0, float(t[k] - t_final))
    return None


def compute_metrics(trace: Trace, event_times: Sequence[float], dt: float,
                    limits: ProtectionLimits = ProtectionLimits(), bus: int = MG_BUS,
                    blew_up: bool = False) -> CaseMetrics:
    if len(trace) == 0:
        raise ValueError("empty trace")
    times = sorted(event_times)
    t0 = times[0] - WINDOW_LEAD_S if times else trace.t[0]
    t_final = times[-1] if times else trace.t[0]
    win = trace.t >= t0 - 0.5 * dt
    f_win, v_win = trace.f[win], trace.v[win]
    log = ViolationLog()
    for t, f, v in zip(trace.t, trace.f, trace.v):
        check_limits(float(t), {bus: (float(f), float(v))}, limits, log)
    violations = [ViolationRecord(x.kind.value, x.bus, x.t_start, x.t_end, x.extremum) for x in log.violations]
    settle = None if blew_up else settling_time(trace.t, trace.f, t_final, dt, f_nominal=limits.f_nominal)
    if settle is None:
        verdict = Verdict.UNSTABLE
    elif violations:
        verdict = Verdict.MARGINAL
    else:
        verdict = Verdict.STABLE
    return CaseMetrics(
        f_nadir=float(np.nanmin(f_win)), f_peak=float(np.nanmax(f_win)), t_settle=settle,
        v_min=float(np.nanmin(v_win)), v_max=float(np.nanmax(v_win)),
        uv_duration=log.duration(ViolationKind.UNDER_VOLT, bus, dt),
        violations=violations, verdict=verdict,
    )


@dataclass
class CaseResult:
    config: RunConfig
    metrics: CaseMetrics
    trace: Trace
    transitions: list[Transition]
    event_times: list[float]
    attacker_report: dict | None = None
    listener_stats: dict | None = None
    blew_up: bool = False

    def metrics_document(self) -> dict:
        return {
            "case": {"system": self.config.system, "scenario": self.config.scenario, "dt": self.config.dt,
                     "t_end": self.config.t_end, "fault": self.config.fault,
                     "attacker": self.config.attacker.value},
            "metrics": self.metrics.to_dict(),
            "transitions": [asdict(x) for x in self.transitions],
            "event_times": self.event_times,
            "diverged": self.blew_up,
            "attacker_report": self.attacker_report,
        }


def _load_model(cfg: RunConfig) -> GridModel:
    if cfg.case_file is None:
        return load_bundled_case(cfg.system)
    return load_case_file(cfg.case_file, cfg.system)


class _Channel:
    """Sockets and (optionally) an in-process attacker for one run."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.embedded_thread: threading.Thread | None = None
        self.embedded_report: adversary.AttackReport | None = None
        self.stop = threading.Event()
        embedded = cfg.attacker is AttackerMode.EMBEDDED
        bind = ("127.0.0.1", 0) if embedded else cfg.command_bind
        self.listener = CommandListener(bind)
        target = cfg.telemetry
        if embedded:
            import socket

            sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            sock.bind(("127.0.0.1", 0))
            target = sock.getsockname()
            scen = (adversary.AttackScenario.islanding() if cfg.scenario == 1
                    else adversary.AttackScenario.switching())
            cmd_addr = ("127.0.0.1", self.listener.address[1])

            def work() -> None:
                self.embedded_report = adversary.run_attacker(
                    target, cmd_addr, scen, adversary.AttackerConfig(idle_timeout=30.0), sock=sock,
                    stop=self.stop)
                sock.close()

            self.embedded_thread = threading.Thread(target=work, name="embedded-attacker", daemon=True)
            self.embedded_thread.start()
        self.publisher = TelemetryPublisher(target)
        self.sync = cfg.pacing is Pacing.LOCKSTEP
        self.first = True

    def publish(self, frames: list[TelemetryFrame]) -> None:
        for fr in frames:
            self.publisher.publish(fr)
        if not self.sync or not frames:
            return
        last = frames[-1].seq
        if self.first:
            # handshake: repeat the opening frames until the peer acknowledges one
            self.first = False
            deadline = time.monotonic() + self.cfg.connect_timeout
            while not self.listener.wait_ack(last, 0.2):
                if time.monotonic() > deadline:
                    logger.warning("no sync from attacker; continuing without lockstep")
                    self.sync = False
                    return
                for fr in frames:
                    self.publisher.publish(fr)
            return
        if not self.listener.wait_ack(last, self.cfg.sync_timeout):
            logger.warning("attacker stopped acknowledging frames; continuing without lockstep")
            self.sync = False

    def close(self) -> None:
        self.publisher.close()
        self.stop.set()
        if self.embedded_thread is not None:
            self.embedded_thread.join(timeout=5.0)
        self.listener.close()


def run_case(cfg: RunConfig) -> CaseResult:
    """Power flow, initialization, then the timed loop with faults and remote breaker commands."""
    try:
        model = _load_model(cfg)
    except Exception as exc:
        raise StageError("case", exc) from exc
    faults = model.faults if cfg.fault else ()
    for fs in faults:
        if not cfg.t_end > fs.t_off:
            raise StageError("config", ValueError(f"t_end {cfg.t_end} must exceed fault {fs.id} clearing {fs.t_off}"))
    try:
        pf = solve_power_flow(model)
    except Exception as exc:
        raise StageError("steady", exc) from exc
    try:
        state = init_dynamics(model, pf)
    except Exception as exc:
        raise StageError("init", exc) from exc
    sim = Simulator(model, state.params)
    dt = cfg.dt
    n = int(round(cfg.t_end / dt))
    dt_us = round(dt * 1e6)

    scripted: dict[int, list[SimEvent]] = {}
    for fs in faults:
        for at, kind in ((fs.t_on, EventKind.FAULT_ON), (fs.t_off, EventKind.FAULT_OFF)):
            k = int(math.ceil(at / dt - 1e-9))
            scripted.setdefault(k, []).append(SimEvent(k * dt, kind, fs.id))

    idx = model.bus_index
    mon = [b for b in cfg.monitored_buses]
    for b in mon:
        if b not in idx:
            raise StageError("config", ValueError(f"monitored bus {b} not in model"))
    i_bus = idx[MG_BUS] if MG_BUS in idx else idx[mon[0]]
    trace_bus = MG_BUS if MG_BUS in idx else mon[0]
    pcc = MG_PCC_BREAKER if any(b.id == MG_PCC_BREAKER for b in model.breakers) else model.breakers[0].id
    ybus_cache: dict[tuple, object] = {}

    def ybus_for(st):
        key = (tuple(sorted((k, v.value) for k, v in st.breakers.items())), tuple(sorted(st.faults)))
        y = ybus_cache.get(key)
        if y is None:
            y = ybus_cache[key] = build_admittance(model, st.breakers, sim.active_faults(st.faults)).tocsr()
        return y

    def bus_power(st, k):
        y = ybus_for(st)
        s = st.v[k] * np.conj(y.getrow(k).dot(st.v)[0]) * model.s_base
        return s.real, s.imag

    channel = None
    if cfg.attacker is not AttackerMode.NONE:
        try:
            channel = _Channel(cfg)
        except OSError as exc:
            raise StageError("netio", exc) from exc
    pacer = Pacer(cfg.pacing)
    queue = ActuationQueue(dt)
    relay = Relay(auto_trip=cfg.auto_trip)
    trips: list[SimEvent] = []
    trace = Trace.empty(n + 1)
    transitions: list[Transition] = []
    event_times: list[float] = []
    seq = 0
    blew_up = False
    rows = n + 1
    try:
        for k in range(n + 1):
            t = k * dt_us / 1e6
            if channel is not None:
                for item in channel.listener.drain():
                    try:
                        schedule_breaker(item.command, queue, model, state.breakers, k)
                        status = ReplyStatus.ACCEPTED
                    except UnknownBreaker:
                        status = ReplyStatus.UNKNOWN_BREAKER
                    channel.publisher.send_raw(encode_reply(item.command.seq, status), item.sender)
            events = scripted.get(k, []) + queue.pop_due(k) + trips
            trips = []
            if events:
                before = dict(state.breakers)
                faults_before = state.faults
                state = sim.apply_events(state, events)
                for ev in events:
                    if ev.kind in (EventKind.BREAKER_OPEN, EventKind.BREAKER_CLOSE):
                        new = BreakerState.OPEN if ev.kind is EventKind.BREAKER_OPEN else BreakerState.CLOSED
                        if before[ev.target] is not new:
                            transitions.append(Transition(t, ev.target, new.value, ev.origin.value))
                            before[ev.target] = new
                            event_times.append(t)
                if state.faults != faults_before:
                    event_times.append(t)
            f24, v24 = float(state.f_est[i_bus]), float(abs(state.v[i_bus]))
            p24, q24 = bus_power(state, i_bus)
            trace.t[k], trace.f[k], trace.v[k] = t, f24, v24
            trace.ang[k] = float(np.angle(state.v[i_bus])) if v24 > 0 else 0.0
            trace.p[k], trace.q[k] = p24, q24
            trace.breaker[k] = int(state.breakers[pcc].closed)
            trace.fault[k] = int(bool(state.faults))
            sample = {b: (float(state.f_est[idx[b]]), float(abs(state.v[idx[b]]))) for b in mon}
            trips = relay.observe(t, sample)
            if channel is not None and k % cfg.publish_every == 0:
                net = sim.network(state.breakers, state.faults)
                frames = []
                for b in mon:
                    kb = idx[b]
                    p, q = (p24, q24) if b == trace_bus else bus_power(state, kb)
                    frames.append(TelemetryFrame(
                        seq=seq, sim_time_us=k * dt_us, bus_id=b, island_id=net.island_of[b],
                        frequency_hz=float(state.f_est[kb]), v_mag_pu=float(abs(state.v[kb])),
                        v_ang_rad=float(np.angle(state.v[kb])), p_mw=float(p), q_mvar=float(q),
                        breaker_state=int(state.breakers[pcc].closed), fault_flag=int(bool(state.faults))))
                    seq += 1
                channel.publish(frames)
            pacer.wait_until(t)
            if k < n:
                try:
                    state = sim.advance(state, dt)
                except SimulationBlowUp as exc:
                    logger.warning("%s", exc)
                    blew_up = True
                    rows = k + 1
                    break
    except StageError:
        raise
    except Exception as exc:
        raise StageError("dynamics", exc) from exc
    finally:
        if channel is not None:
            channel.close()

    trace = trace.truncate(rows)
    metrics = compute_metrics(trace, event_times, dt, relay.limits, trace_bus, blew_up)
    report = None
    stats = None
    if channel is not None:
        stats = asdict(channel.listener.stats)
        if channel.embedded_report is not None:
            report = json.loads(channel.embedded_report.to_json())
    result = CaseResult(cfg, metrics, trace, transitions, sorted(event_times), report, stats, blew_up)
    if cfg.output_dir is not None:
        write_case(result, cfg.output_dir)
    return result


def write_case(result: CaseResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    tag = result.config.tag
    result.trace.write_csv(out / f"{tag}.csv")
    (out / f"{tag}_metrics.json").write_text(json.dumps(result.metrics_document(), indent=2, sort_keys=True) + "\n")


# -- summary -----------------------------------------------------------------

ATTACK_CASES = tuple((s, sc) for s in ("I", "II") for sc in (1, 2))
_VERDICT_RANK = {Verdict.STABLE: 0, Verdict.MARGINAL: 1, Verdict.UNSTABLE: 2}


def severity_key(m: CaseMetrics) -> tuple:
    return (_VERDICT_RANK[m.verdict], round(m.uv_duration, 9), m.max_deviation,
            m.t_settle if m.t_settle is not None else math.inf)


@dataclass
class Summary:
    text: str
    data: dict


def _fmt(x: float | None, spec: str) -> str:
    return "-" if x is None else format(x, spec)


def summarize(results: dict[tuple[str, int], CaseMetrics]) -> Summary:
    """Table of the four cases plus the cross-case comparisons."""
    present = [c for c in ATTACK_CASES if c in results]
    missing = [c for c in ATTACK_CASES if c not in results]
    worst = max(present, key=lambda c: severity_key(results[c])) if present else None
    header = ["System", "Scenario", "f_nadir Hz", "f_peak Hz", "t_settle s", "v_min pu", "v_max pu",
              "UV s", "Viol.", "Verdict", ""]
    rows = []
    for c in present:
        m = results[c]
        rows.append([c[0], str(c[1]), f"{m.f_nadir:.3f}", f"{m.f_peak:.3f}", _fmt(m.t_settle, ".3f"),
                     f"{m.v_min:.3f}", f"{m.v_max:.3f}", f"{m.uv_duration:.3f}", str(len(m.violations)),
                     m.verdict.value, "most severe" if c == worst else ""])
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    line = lambda r: "  ".join(x.ljust(w) for x, w in zip(r, widths)).rstrip()  # noqa: E731
    out = [line(header), line(["-" * w for w in widths])] + [line(r) for r in rows]

    comparisons = []

    def settle(m: CaseMetrics) -> float:
        return m.t_settle if m.t_settle is not None else math.inf

    for sc in (1, 2):
        a, b = results.get(("I", sc)), results.get(("II", sc))
        if a and b:
            comparisons.append({"check": f"scenario {sc}: System II nadir deviation >= System I",
                                "holds": b.nadir_deviation >= a.nadir_deviation})
            comparisons.append({"check": f"scenario {sc}: System II settling >= System I",
                                "holds": settle(b) >= settle(a)})
    for s in ("I", "II"):
        a, b = results.get((s, 1)), results.get((s, 2))
        if a and b:
            comparisons.append({"check": f"System {s}: scenario 2 nadir deviation >= scenario 1",
                                "holds": b.nadir_deviation >= a.nadir_deviation})
            comparisons.append({"check": f"System {s}: scenario 2 UV duration >= scenario 1",
                                "holds": b.uv_duration >= a.uv_duration})
    out.append("")
    for c in comparisons:
        out.append(f"[{'yes' if c['holds'] else 'no '}] {c['check']}")
    if missing:
        out.append("")
        out.append("PARTIAL: missing " + ", ".join(f"System {s} scenario {sc}" for s, sc in missing))
    data = {
        "cases": [{"system": c[0], "scenario": c[1], **results[c].to_dict(), "most_severe": c == worst}
                  for c in present],
        "comparisons": comparisons,
        "partial": bool(missing),
        "missing": [{"system": s, "scenario": sc} for s, sc in missing],
    }
    return Summary("\n".join(out) + "\n", data)


def write_summary(summary: Summary, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.txt").write_text(summary.text)
    (out / "summary.json").write_text(json.dumps(summary.data, indent=2, sort_keys=True) + "\n")


def load_results(directory: Path) -> dict[tuple[str, int], CaseMetrics]:
    out = {}
    for path in sorted(directory.glob("*_metrics.json")):
        doc = json.loads(path.read_text())
        out[(doc["case"]["system"], int(doc["case"]["scenario"]))] = CaseMetrics.from_dict(doc["metrics"])
    return out


def run_suite(base: RunConfig, cases: Iterable[tuple[str, int]] = ATTACK_CASES) -> dict[tuple[str, int], CaseResult]:
    results = {}
    for s, sc in cases:
        results[(s, sc)] = run_case(replace(base, system=s, scenario=sc))
    if base.output_dir is not None:
        write_summary(summarize({c: r.metrics for c, r in results.items()}), base.output_dir)
    return results


# -- CLI ---------------------------------------------------------------------


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--pacing", choices=[m.value for m in Pacing])
    p.add_argument("--attacker", choices=[m.value for m in AttackerMode])
    p.add_argument("--case-file", type=Path)
    p.add_argument("--no-fault", action="store_true")
    p.add_argument("--telemetry", help="attacker telemetry endpoint host:port (External mode)")
    p.add_argument("--command-bind", help="command listen endpoint host:port (External mode)")


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    from .netio import parse_endpoint

    changes: dict = {}
    if args.output_dir is not None:
        changes["output_dir"] = args.output_dir
    if args.dt is not None:
        changes["dt"] = args.dt
    if args.t_end is not None:
        changes["t_end"] = args.t_end
    if args.pacing:
        changes["pacing"] = Pacing(args.pacing)
    if args.attacker:
        changes["attacker"] = AttackerMode(args.attacker)
    if args.case_file is not None:
        changes["case_file"] = args.case_file
    if args.no_fault:
        changes["fault"] = False
    if args.telemetry:
        changes["telemetry"] = parse_endpoint(args.telemetry)
    if args.command_bind:
        changes["command_bind"] = parse_endpoint(args.command_bind, "0.0.0.0")
    for key in ("system", "scenario"):
        val = getattr(args, key, None)
        if val is not None:
            changes[key] = val
    return replace(cfg, **changes)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="gridstorm", description="Microgrid breaker-attack testbed on the 39-bus system.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="run one case")
    p_run.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
    p_run.add_argument("--system", choices=sorted(SYSTEM_MIX))
    p_run.add_argument("--scenario", type=int, choices=[1, 2])
    _add_overrides(p_run)

    p_suite = sub.add_parser("suite", help="run the four attack cases")
    p_suite.add_argument("--all", action="store_true", required=True, help="all four cases")
    p_suite.add_argument("--config", type=Path)
    _add_overrides(p_suite)

    p_sum = sub.add_parser("summarize", help="summarize a directory of finished runs")
    p_sum.add_argument("directory", type=Path)

    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.cmd == "summarize":
        results = load_results(args.directory)
        if not results:
            print(f"no *_metrics.json files in {args.directory}", file=sys.stderr)
            return 1
        summary = summarize(results)
        write_summary(summary, args.directory)
        sys.stdout.write(summary.text)
        return 0

    base = RunConfig()
    if args.config is not None:
        base = RunConfig.from_mapping(json.loads(args.config.read_text()))
    try:
        cfg = _apply_overrides(base, args)
    except ValueError as exc:
        ap.error(str(exc))
    if cfg.output_dir is None:
        cfg = replace(cfg, output_dir=Path("runs"))
    try:
        if args.cmd == "run":
            res = run_case(cfg)
            summary = summarize({(cfg.system, cfg.scenario): res.metrics})
            sys.stdout.write(summary.text)
            for tr in res.transitions:
                print(f"t={tr.t:.3f}s {tr.breaker} -> {tr.state} ({tr.origin})")
        else:
            results = run_suite(cfg)
            sys.stdout.write(summarize({c: r.metrics for c, r in results.items()}).text)
    except StageError as exc:
        print(f"gridstorm: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
