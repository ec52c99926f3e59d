"""Static grid description, case-file ingestion and network topology.

The case file is a plain-text document made of ``[section]`` blocks. Key/value
sections (``[meta]``, ``[scenario]``) hold ``key = value`` lines; table sections
hold one whitespace-separated row per element, with columns in the order listed
by :data:`TABLE_COLUMNS`. ``#`` starts a comment. See ``docs/case-format.md``.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

MG_PCC_BREAKER = "PCC-24"


class CaseError(ValueError):
    """Raised when a case document cannot be parsed."""

    def __init__(self, message: str, line: int | None = None, field_name: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_name is not None:
            where.append(f"field '{field_name}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field_name = field_name


class ValidationError(ValueError):
    """Raised when a parsed model has dangling references or broken invariants."""


class BusKind(enum.Enum):
    SLACK = "Slack"
    PV = "PV"
    PQ = "PQ"


class BreakerState(enum.Enum):
    OPEN = "open"
    CLOSED = "closed"

    @property
    def closed(self) -> bool:
        return self is BreakerState.CLOSED


@dataclass(frozen=True)
class Bus:
    id: int
    base_kv: float
    kind: BusKind
    v_set: float = 1.0
    load_p: float = 0.0
    load_q: float = 0.0
    shunt_b: float = 0.0


@dataclass(frozen=True)
class Branch:
    id: str
    kind: str  # "line" | "transformer"
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    tap: float = 1.0
    breaker_id: str | None = None

    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)

    def stamps(self) -> tuple[complex, complex, complex, complex]:
        """Pi-model entries (y_ff, y_ft, y_tf, y_tt), tap on the from side."""
        ys = self.series_admittance()
        ych = 0.5j * self.b
        t = self.tap
        return (ys + ych) / (t * t), -ys / t, -ys / t, ys + ych


@dataclass(frozen=True)
class Breaker:
    id: str
    num: int
    controlled_branches: tuple[str, ...]
    state: BreakerState = BreakerState.CLOSED
    label: str = ""


@dataclass(frozen=True)
class SynchronousMachine:
    id: str
    bus: int
    rating_mva: float
    h: float
    d: float
    xdp: float
    governor_droop: float
    governor_tc: float
    p_dispatch: float
    emf: float | None = None


@dataclass(frozen=True)
class GridFormingInverter:
    id: str
    bus: int
    rating_mva: float
    p_set: float
    q_set: float
    mp: float
    mq: float
    filter_tc: float
    v_set: float
    x_out: float


@dataclass(frozen=True)
class FaultSpec:
    """Shunt fault. When ``breaker`` is given the fault sits on the grid side of
    that breaker: with the breaker open it stays attached to the opened branch
    ends instead of the bus."""

    id: str
    bus: int
    y_fault: complex
    t_on: float
    t_off: float
    breaker: str | None = None


@dataclass(frozen=True)
class GridModel:
    name: str
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    breakers: tuple[Breaker, ...] = ()
    machines: tuple[SynchronousMachine, ...] = ()
    inverters: tuple[GridFormingInverter, ...] = ()
    faults: tuple[FaultSpec, ...] = ()
    f_nominal: float = 60.0
    s_base: float = 100.0
    system: str | None = None
    overlay: MicrogridOverlay | None = None

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def breaker(self, key: str | int) -> Breaker:
        for brk in self.breakers:
            if brk.id == key or brk.num == key:
                return brk
        raise KeyError(key)

    def initial_breaker_states(self) -> dict[str, BreakerState]:
        return {brk.id: brk.state for brk in self.breakers}

    @property
    def lines(self) -> list[Branch]:
        return [br for br in self.branches if br.kind == "line"]

    @property
    def transformers(self) -> list[Branch]:
        return [br for br in self.branches if br.kind == "transformer"]

    @property
    def loads(self) -> list[Bus]:
        return [b for b in self.buses if b.load_p != 0.0 or b.load_q != 0.0]


@dataclass(frozen=True)
class MicrogridOverlay:
    """Parameters of the microgrid added at the PCC bus for System I / II.

    Dispatch comes from the generation mix; ratings carry headroom as multiples
    of dispatch.
    """

    mg_bus: int = 24
    load_scale: float = 1.2
    mg_v_set: float = 1.02
    machine_rating_factor: float = 2.0
    inverter_rating_factor: float = 1.3
    machine_h: float = 5.0
    machine_d: float = 1.3
    machine_xdp: float = 0.3
    machine_droop: float = 0.006
    machine_governor_tc: float = 0.06
    inverter_mp: float = 0.007
    inverter_mq: float = 0.05
    inverter_filter_tc: float = 0.012
    inverter_x_out: float = 0.21


# (pv_mw, synchronous_mw)
SYSTEM_MIX: dict[str, tuple[float, float]] = {
    "I": (150.0, 150.0),
    "II": (210.0, 90.0),
}


@dataclass(frozen=True)
class IslandPartition:
    islands: tuple[frozenset[int], ...]
    island_of: Mapping[int, int]
    energized: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.islands)


# --------------------------------------------------------------------------- #
# case-file parsing

TABLE_COLUMNS: dict[str, tuple[str, ...]] = {
    "buses": ("id", "base_kv", "kind", "v_set", "load_p", "load_q", "shunt_b"),
    "branches": ("id", "kind", "from", "to", "r", "x", "b", "tap", "breaker"),
    "breakers": ("id", "num", "state", "label", "branches"),
    "machines": ("id", "bus", "rating_mva", "h", "d", "xdp", "governor_droop",
                 "governor_tc", "p_dispatch"),
    "inverters": ("id", "bus", "rating_mva", "p_set", "q_set", "mp", "mq",
                  "filter_tc", "v_set", "x_out"),
    "faults": ("id", "bus", "y_re", "y_im", "t_on", "t_off", "breaker"),
}
KV_SECTIONS = ("meta", "scenario")


def _num(tok: str, line: int, name: str) -> float:
    try:
        value = float(tok)
    except ValueError:
        raise CaseError(f"expected a number, got {tok!r}", line, name) from None
    if not math.isfinite(value):
        raise CaseError(f"non-finite value {tok!r}", line, name)
    return value


def _int(tok: str, line: int, name: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise CaseError(f"expected an integer, got {tok!r}", line, name) from None


def _opt(tok: str) -> str | None:
    return None if tok == "-" else tok


def _split_sections(text: str) -> tuple[dict[str, dict[str, tuple[str, int]]],
                                         dict[str, list[tuple[list[str], int]]]]:
    kv: dict[str, dict[str, tuple[str, int]]] = {s: {} for s in KV_SECTIONS}
    tables: dict[str, list[tuple[list[str], int]]] = {s: [] for s in TABLE_COLUMNS}
    section: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise CaseError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip().lower()
            if section not in kv and section not in tables:
                raise CaseError(f"unknown section [{section}]", lineno)
            continue
        if section is None:
            raise CaseError("content before the first section header", lineno)
        if section in kv:
            if "=" not in line:
                raise CaseError("expected 'key = value'", lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            kv[section][key] = (value, lineno)
        else:
            cols = TABLE_COLUMNS[section]
            toks = line.split()
            if len(toks) != len(cols):
                raise CaseError(
                    f"[{section}] row has {len(toks)} columns, expected {len(cols)} "
                    f"({' '.join(cols)})", lineno)
            tables[section].append((toks, lineno))
    return kv, tables


def _parse_overlay(entries: dict[str, tuple[str, int]]) -> MicrogridOverlay:
    values: dict[str, float] = {}
    for name in MicrogridOverlay.__dataclass_fields__:
        if name in entries:
            tok, lineno = entries[name]
            values[name] = _int(tok, lineno, name) if name == "mg_bus" else _num(tok, lineno, name)
    return MicrogridOverlay(**values)


def load_case(text: str, system: str | None = None) -> GridModel:
    """Parse a case document and return a validated :class:`GridModel`.

    ``system`` ("I" or "II") overrides the document's ``[scenario] system``
    key. When a system is selected and the document does not mark the overlay
    as already applied, the microgrid units are added at the PCC bus and the
    bus load is scaled.
    """
    kv, tables = _split_sections(text)
    meta = kv["meta"]
    name = meta.get("name", ("case", 0))[0]
    f_nominal = _num(*meta["f_nominal"], "f_nominal") if "f_nominal" in meta else 60.0
    s_base = _num(*meta["s_base"], "s_base") if "s_base" in meta else 100.0

    buses = []
    for toks, ln in tables["buses"]:
        kind_tok = toks[2]
        try:
            kind = BusKind(kind_tok)
        except ValueError:
            raise CaseError(f"bus kind must be Slack, PV or PQ, got {kind_tok!r}", ln, "kind") from None
        buses.append(Bus(
            id=_int(toks[0], ln, "id"), base_kv=_num(toks[1], ln, "base_kv"), kind=kind,
            v_set=_num(toks[3], ln, "v_set"), load_p=_num(toks[4], ln, "load_p"),
            load_q=_num(toks[5], ln, "load_q"), shunt_b=_num(toks[6], ln, "shunt_b"),
        ))

    branches = []
    for toks, ln in tables["branches"]:
        if toks[1] not in ("line", "transformer"):
            raise CaseError(f"branch kind must be line or transformer, got {toks[1]!r}", ln, "kind")
        branches.append(Branch(
            id=toks[0], kind=toks[1], from_bus=_int(toks[2], ln, "from"), to_bus=_int(toks[3], ln, "to"),
            r=_num(toks[4], ln, "r"), x=_num(toks[5], ln, "x"), b=_num(toks[6], ln, "b"),
            tap=_num(toks[7], ln, "tap"), breaker_id=_opt(toks[8]),
        ))

    breakers = []
    for toks, ln in tables["breakers"]:
        try:
            state = BreakerState(toks[2].lower())
        except ValueError:
            raise CaseError(f"breaker state must be open or closed, got {toks[2]!r}", ln, "state") from None
        breakers.append(Breaker(
            id=toks[0], num=_int(toks[1], ln, "num"), state=state, label=toks[3],
            controlled_branches=tuple(s for s in toks[4].split(",") if s),
        ))

    machines = []
    for toks, ln in tables["machines"]:
        cols = TABLE_COLUMNS["machines"]
        vals = {c: _num(t, ln, c) for c, t in zip(cols[2:], toks[2:])}
        machines.append(SynchronousMachine(id=toks[0], bus=_int(toks[1], ln, "bus"), **vals))

    inverters = []
    for toks, ln in tables["inverters"]:
        cols = TABLE_COLUMNS["inverters"]
        vals = {c: _num(t, ln, c) for c, t in zip(cols[2:], toks[2:])}
        inverters.append(GridFormingInverter(id=toks[0], bus=_int(toks[1], ln, "bus"), **vals))

    faults = []
    for toks, ln in tables["faults"]:
        faults.append(FaultSpec(
            id=toks[0], bus=_int(toks[1], ln, "bus"),
            y_fault=complex(_num(toks[2], ln, "y_re"), _num(toks[3], ln, "y_im")),
            t_on=_num(toks[4], ln, "t_on"), t_off=_num(toks[5], ln, "t_off"),
            breaker=_opt(toks[6]),
        ))

    scenario = kv["scenario"]
    doc_system = scenario.get("system", ("none", 0))[0]
    applied = scenario.get("applied", ("no", 0))[0].lower() in ("yes", "true", "1")
    overlay = _parse_overlay(scenario)
    chosen = system if system is not None else doc_system
    if chosen in ("none", ""):
        chosen = None
    if chosen is not None and chosen not in SYSTEM_MIX:
        raise CaseError(f"system must be none, I or II, got {chosen!r}", scenario.get("system", ("", None))[1],
                        "system")

    model = GridModel(
        name=name, buses=tuple(buses), branches=tuple(branches), breakers=tuple(breakers),
        machines=tuple(machines), inverters=tuple(inverters), faults=tuple(faults),
        f_nominal=f_nominal, s_base=s_base, system=doc_system if applied and doc_system != "none" else None,
        overlay=overlay if applied else None,
    )
    validate(model)
    if chosen is not None and not applied:
        model = apply_microgrid(model, chosen, overlay)
    elif applied and system is not None and system != model.system:
        raise CaseError(f"document already carries system {model.system}; cannot re-target to {system}",
                        None, "system")
    return model


def load_case_file(path: str | Path, system: str | None = None) -> GridModel:
    return load_case(Path(path).read_text(), system=system)


def bundled_case_path() -> Path:
    return Path(str(resources.files("gridstorm") / "data" / "ieee39_mg.case"))


def load_bundled_case(system: str | None = None) -> GridModel:
    return load_case_file(bundled_case_path(), system=system)


def apply_microgrid(model: GridModel, system: str, overlay: MicrogridOverlay | None = None) -> GridModel:
    """Add the System I/II microgrid units at the PCC bus and scale its load."""
    ov = overlay or MicrogridOverlay()
    pv_mw, sg_mw = SYSTEM_MIX[system]
    buses = []
    for b in model.buses:
        if b.id == ov.mg_bus:
            kind = b.kind if b.kind is BusKind.SLACK else BusKind.PV
            b = replace(b, kind=kind, v_set=ov.mg_v_set,
                        load_p=b.load_p * ov.load_scale, load_q=b.load_q * ov.load_scale)
        buses.append(b)
    machine = SynchronousMachine(
        id="MG-SG", bus=ov.mg_bus, rating_mva=ov.machine_rating_factor * sg_mw, h=ov.machine_h,
        d=ov.machine_d, xdp=ov.machine_xdp, governor_droop=ov.machine_droop,
        governor_tc=ov.machine_governor_tc, p_dispatch=sg_mw,
    )
    inverter = GridFormingInverter(
        id="MG-PV", bus=ov.mg_bus, rating_mva=ov.inverter_rating_factor * pv_mw, p_set=pv_mw,
        q_set=0.0, mp=ov.inverter_mp, mq=ov.inverter_mq, filter_tc=ov.inverter_filter_tc,
        v_set=ov.mg_v_set, x_out=ov.inverter_x_out,
    )
    out = replace(model, buses=tuple(buses), machines=model.machines + (machine,),
                  inverters=model.inverters + (inverter,), system=system, overlay=ov)
    validate(out)
    return out


def validate(model: GridModel) -> None:
    ids = [b.id for b in model.buses]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate bus ids")
    known = set(ids)
    for b in model.buses:
        if b.base_kv <= 0:
            raise ValidationError(f"bus {b.id}: base_kv must be positive")
    branch_ids = set()
    for br in model.branches:
        if br.id in branch_ids:
            raise ValidationError(f"duplicate branch id {br.id}")
        branch_ids.add(br.id)
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise ValidationError(f"branch {br.id} references unknown bus {end}")
        if br.from_bus == br.to_bus:
            raise ValidationError(f"branch {br.id} connects bus {br.from_bus} to itself")
        if br.x == 0:
            raise ValidationError(f"branch {br.id} has zero reactance")
        if br.tap <= 0:
            raise ValidationError(f"branch {br.id} has non-positive tap")
    breaker_ids = {brk.id for brk in model.breakers}
    if len(breaker_ids) != len(model.breakers):
        raise ValidationError("duplicate breaker ids")
    if len({brk.num for brk in model.breakers}) != len(model.breakers):
        raise ValidationError("duplicate breaker numbers")
    by_id = {br.id: br for br in model.branches}
    for br in model.branches:
        if br.breaker_id is not None and br.breaker_id not in breaker_ids:
            raise ValidationError(f"branch {br.id} references unknown breaker {br.breaker_id}")
    for brk in model.breakers:
        if not brk.controlled_branches:
            raise ValidationError(f"breaker {brk.id} controls no branches")
        for bid in brk.controlled_branches:
            if bid not in by_id:
                raise ValidationError(f"breaker {brk.id} references unknown branch {bid}")
            if by_id[bid].breaker_id != brk.id:
                raise ValidationError(f"branch {bid} does not name breaker {brk.id}")
    for m in model.machines:
        if m.bus not in known:
            raise ValidationError(f"machine {m.id} references unknown bus {m.bus}")
        if m.h <= 0 or m.xdp <= 0:
            raise ValidationError(f"machine {m.id}: h and xdp must be positive")
        if not 0 < m.governor_droop <= 0.1:
            raise ValidationError(f"machine {m.id}: governor_droop must be in (0, 0.1]")
        if m.rating_mva < m.p_dispatch:
            raise ValidationError(f"machine {m.id}: dispatch exceeds rating")
    for inv in model.inverters:
        if inv.bus not in known:
            raise ValidationError(f"inverter {inv.id} references unknown bus {inv.bus}")
        if inv.rating_mva < inv.p_set:
            raise ValidationError(f"inverter {inv.id}: p_set exceeds rating")
        if inv.mp <= 0 or inv.mq < 0 or inv.filter_tc <= 0:
            raise ValidationError(f"inverter {inv.id}: need mp > 0, mq >= 0, filter_tc > 0")
    for f in model.faults:
        if f.bus not in known:
            raise ValidationError(f"fault {f.id} references unknown bus {f.bus}")
        if f.t_off <= f.t_on:
            raise ValidationError(f"fault {f.id}: t_off must exceed t_on")
        if abs(f.y_fault) == 0:
            raise ValidationError(f"fault {f.id}: zero admittance")
        if f.breaker is not None and f.breaker not in breaker_ids:
            raise ValidationError(f"fault {f.id} references unknown breaker {f.breaker}")


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize(model: GridModel) -> str:
    """Inverse of :func:`load_case` for a resolved model."""
    out = ["[meta]", f"name = {model.name}", f"f_nominal = {_fmt(model.f_nominal)}",
           f"s_base = {_fmt(model.s_base)}", "", "[buses]"]
    for b in model.buses:
        out.append(f"{b.id} {_fmt(b.base_kv)} {b.kind.value} {_fmt(b.v_set)} {_fmt(b.load_p)} "
                   f"{_fmt(b.load_q)} {_fmt(b.shunt_b)}")
    out += ["", "[branches]"]
    for br in model.branches:
        out.append(f"{br.id} {br.kind} {br.from_bus} {br.to_bus} {_fmt(br.r)} {_fmt(br.x)} "
                   f"{_fmt(br.b)} {_fmt(br.tap)} {br.breaker_id or '-'}")
    out += ["", "[breakers]"]
    for brk in model.breakers:
        out.append(f"{brk.id} {brk.num} {brk.state.value} {brk.label or brk.id} "
                   f"{','.join(brk.controlled_branches)}")
    out += ["", "[machines]"]
    for m in model.machines:
        out.append(f"{m.id} {m.bus} " + " ".join(_fmt(getattr(m, c)) for c in TABLE_COLUMNS["machines"][2:]))
    out += ["", "[inverters]"]
    for inv in model.inverters:
        out.append(f"{inv.id} {inv.bus} " + " ".join(_fmt(getattr(inv, c))
                                                      for c in TABLE_COLUMNS["inverters"][2:]))
    out += ["", "[faults]"]
    for f in model.faults:
        out.append(f"{f.id} {f.bus} {_fmt(f.y_fault.real)} {_fmt(f.y_fault.imag)} {_fmt(f.t_on)} "
                   f"{_fmt(f.t_off)} {f.breaker or '-'}")
    out += ["", "[scenario]"]
    if model.system is None:
        out.append("system = none")
    else:
        out += [f"system = {model.system}", "applied = yes"]
        ov = model.overlay or MicrogridOverlay()
        for name in MicrogridOverlay.__dataclass_fields__:
            value = getattr(ov, name)
            out.append(f"{name} = {value if name == 'mg_bus' else _fmt(value)}")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------- #
# topology

def branch_closed(branch: Branch, breaker_states: Mapping[str, BreakerState]) -> bool:
    return branch.breaker_id is None or breaker_states[branch.breaker_id].closed


def _check_states(model: GridModel, breaker_states: Mapping[str, BreakerState]) -> None:
    missing = [brk.id for brk in model.breakers if brk.id not in breaker_states]
    if missing:
        raise KeyError(f"breaker states missing for {', '.join(missing)}")


def build_admittance(model: GridModel, breaker_states: Mapping[str, BreakerState],
                     active_faults: Iterable[FaultSpec] = ()) -> sparse.csr_matrix:
    """Nodal admittance matrix in model bus order (p.u. on the system base)."""
    _check_states(model, breaker_states)
    idx = model.bus_index
    n = len(model.buses)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []

    def add(i: int, j: int, y: complex) -> None:
        rows.append(i)
        cols.append(j)
        vals.append(y)

    for br in model.branches:
        if not branch_closed(br, breaker_states):
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        yff, yft, ytf, ytt = br.stamps()
        add(f, f, yff)
        add(f, t, yft)
        add(t, f, ytf)
        add(t, t, ytt)
    for b in model.buses:
        if b.shunt_b:
            add(idx[b.id], idx[b.id], 1j * b.shunt_b)
    for fault in active_faults:
        if fault.breaker is None or breaker_states[fault.breaker].closed:
            add(idx[fault.bus], idx[fault.bus], fault.y_fault)
        else:
            for i, j, y in _isolated_fault_stamps(model, fault):
                add(i, j, y)
    return sparse.csr_matrix((np.asarray(vals, dtype=complex), (rows, cols)), shape=(n, n))


def _isolated_fault_stamps(model: GridModel, fault: FaultSpec) -> list[tuple[int, int, complex]]:
    """Kron-reduce a grid-side fault node left behind an open breaker.

    The opened branches keep their far ends energized and meet at the faulted
    node; eliminating that node yields an equivalent block on the far-end buses.
    """
    idx = model.bus_index
    brk = model.breaker(fault.breaker)
    far: list[int] = []
    y_nn = fault.y_fault
    coupling: list[tuple[int, complex, complex, complex]] = []  # far idx, y_kk, y_kn, y_nk
    for bid in brk.controlled_branches:
        br = next(b for b in model.branches if b.id == bid)
        yff, yft, ytf, ytt = br.stamps()
        if br.to_bus == fault.bus:
            k, y_kk, y_kn, y_nk, y_nn_part = br.from_bus, yff, yft, ytf, ytt
        elif br.from_bus == fault.bus:
            k, y_kk, y_kn, y_nk, y_nn_part = br.to_bus, ytt, ytf, yft, yff
        else:
            continue
        y_nn += y_nn_part
        coupling.append((idx[k], y_kk, y_kn, y_nk))
        far.append(idx[k])
    stamps = []
    for i, y_ii, y_in, _ in coupling:
        stamps.append((i, i, y_ii))
        for j, _, _, y_nj in coupling:
            stamps.append((i, j, -y_in * y_nj / y_nn))
    return stamps


def find_islands(model: GridModel, breaker_states: Mapping[str, BreakerState]) -> IslandPartition:
    """Connected components of the branch graph restricted to closed breakers."""
    _check_states(model, breaker_states)
    idx = model.bus_index
    n = len(model.buses)
    i_list, j_list = [], []
    for br in model.branches:
        if branch_closed(br, breaker_states):
            i_list.append(idx[br.from_bus])
            j_list.append(idx[br.to_bus])
    graph = sparse.coo_matrix((np.ones(len(i_list)), (i_list, j_list)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    groups: dict[int, set[int]] = {}
    for k, lab in enumerate(labels):
        groups.setdefault(int(lab), set()).add(model.buses[k].id)
    islands = tuple(sorted((frozenset(g) for g in groups.values()), key=min))
    island_of = {bus: k for k, isl in enumerate(islands) for bus in isl}
    source_buses = {m.bus for m in model.machines} | {v.bus for v in model.inverters}
    energized = tuple(bool(isl & source_buses) for isl in islands)
    return IslandPartition(islands=islands, island_of=island_of, energized=energized)


__all__ = [
    "Branch", "Breaker", "BreakerState", "Bus", "BusKind", "CaseError", "FaultSpec",
    "GridFormingInverter", "GridModel", "IslandPartition", "MG_PCC_BREAKER", "MicrogridOverlay",
    "SYSTEM_MIX", "SynchronousMachine", "ValidationError", "apply_microgrid", "branch_closed",
    "build_admittance", "bundled_case_path", "find_islands", "load_bundled_case", "load_case",
    "load_case_file", "serialize", "validate",
]

