"""Fixed-step dynamic-phasor simulation.

Machines are classical (constant EMF behind transient reactance) with a swing
equation and a first-order governor. Grid-forming inverters are droop-controlled
voltage sources behind an output reactance with low-pass filtered power
measurements. Loads are constant impedances fixed at the power-flow point. The
network is algebraic and re-solved at every Runge-Kutta stage; phasors live in a
frame rotating at nominal frequency.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from .model import BreakerState, GridModel, build_admittance, find_islands

FREQ_FILTER_TC = 0.02
OMEGA_GUARD = 0.1


class SimulationBlowUp(RuntimeError):
    """A machine speed left the divergence guard band."""

    def __init__(self, message: str, state: DynamicState):
        super().__init__(message)
        self.state = state


class NetworkSolveError(RuntimeError):
    pass


class EventKind(enum.Enum):
    BREAKER_OPEN = "BreakerOpen"
    BREAKER_CLOSE = "BreakerClose"
    FAULT_ON = "FaultOn"
    FAULT_OFF = "FaultOff"


class EventOrigin(enum.Enum):
    SCRIPTED = "Scripted"
    REMOTE = "Remote"


@dataclass(frozen=True)
class SimEvent:
    at: float
    kind: EventKind
    target: str
    origin: EventOrigin = EventOrigin.SCRIPTED

    def __post_init__(self) -> None:
        if self.at < 0:
            raise ValueError("event time must be non-negative")


@dataclass(frozen=True, eq=False)
class DynamicParams:
    """Constants fixed by initialization."""

    emf: np.ndarray  # machine internal EMF magnitude, p.u.
    p_gov_ref: np.ndarray  # machine base
    e_ref: np.ndarray  # inverter internal voltage at q_filt == q_ref
    q_ref: np.ndarray  # inverter base
    p_set: np.ndarray  # inverter base
    y_load: np.ndarray  # constant-impedance load admittance per bus, system base


@dataclass(frozen=True, eq=False)
class FrequencyEstimator:
    """Bus frequency from the voltage-angle derivative through a first-order low-pass.

    Written as ``f = f0 + (theta - z) / (2 pi tau)`` with ``z`` the low-passed
    angle. Between samples the angle is taken as linear and ``z`` is advanced
    exactly, so a ramp gives its true frequency and an instantaneous angle jump
    (zero-length update) gives the filter's impulse response independent of the
    step size.
    """

    theta: np.ndarray  # unwrapped angle
    z: np.ndarray
    live: np.ndarray
    tau: float = FREQ_FILTER_TC
    f_nominal: float = 60.0

    @classmethod
    def start(cls, angles: np.ndarray, live: np.ndarray | None = None, tau: float = FREQ_FILTER_TC,
              f_nominal: float = 60.0) -> FrequencyEstimator:
        angles = np.asarray(angles, dtype=float)
        if live is None:
            live = np.ones(angles.shape, dtype=bool)
        return cls(theta=angles.copy(), z=angles.copy(), live=np.asarray(live, dtype=bool).copy(),
                   tau=tau, f_nominal=f_nominal)

    def update(self, angles: np.ndarray, live: np.ndarray, h: float) -> FrequencyEstimator:
        d = angles - self.theta
        d = (d + np.pi) % (2 * np.pi) - np.pi
        theta = self.theta + d
        if h > 0:
            slope = (theta - self.theta) / h
            a = math.exp(-h / self.tau)
            z = theta - slope * self.tau + (self.z - self.theta + slope * self.tau) * a
        else:
            z = self.z.copy()
        restart = live & ~self.live
        theta = np.where(restart, angles, theta)
        z = np.where(restart | ~live, theta, z)
        return replace(self, theta=theta, z=z, live=np.asarray(live, dtype=bool).copy())

    @property
    def frequency(self) -> np.ndarray:
        f = self.f_nominal + (self.theta - self.z) / (2 * np.pi * self.tau)
        return np.where(self.live, f, np.nan)


@dataclass(frozen=True, eq=False)
class DynamicState:
    t: float
    step: int
    delta: np.ndarray
    omega: np.ndarray
    p_mech: np.ndarray
    theta: np.ndarray
    p_filt: np.ndarray
    q_filt: np.ndarray
    v: np.ndarray
    f_est: np.ndarray
    breakers: dict[str, BreakerState]
    faults: frozenset[str]
    params: DynamicParams
    estimator: FrequencyEstimator

    @property
    def p_gov_ref(self) -> np.ndarray:
        return self.params.p_gov_ref

    def vector(self) -> np.ndarray:
        return np.concatenate([self.delta, self.omega, self.p_mech, self.theta, self.p_filt, self.q_filt])


def inverter_frequency(p_filt: float, p_set: float, mp: float, f_nominal: float = 60.0) -> float:
    """Frequency reference of a P-f droop inverter."""
    if mp <= 0:
        raise ValueError("mp must be positive")
    return f_nominal * (1.0 - mp * (p_filt - p_set))


def estimate_bus_frequency(angle_history: Sequence[float], dt: float, tau: float = FREQ_FILTER_TC,
                           f_nominal: float = 60.0) -> float:
    """Filtered frequency after a uniformly sampled angle history.

    The first sample is taken as a steady starting point. Any non-finite sample
    (de-energized bus) yields ``nan``.
    """
    angles = np.asarray(angle_history, dtype=float)
    if angles.size < 2:
        raise ValueError("need at least two angle samples")
    if not np.all(np.isfinite(angles)):
        return float("nan")
    est = FrequencyEstimator.start(angles[:1], tau=tau, f_nominal=f_nominal)
    live = np.ones(1, dtype=bool)
    for a in angles[1:]:
        est = est.update(np.array([a]), live, dt)
    return float(est.frequency[0])


@dataclass(frozen=True, eq=False)
class _Network:
    """Per-topology solution operators: V = w_full @ I_src, V_src = w_src @ I_src."""

    w_full: np.ndarray
    w_src: np.ndarray
    live: np.ndarray
    island_of: dict[int, int]
    energized: tuple[bool, ...]


def _augmented(model: GridModel, admittance: sparse.spmatrix, y_load: np.ndarray,
               src_idx: np.ndarray, y_src: np.ndarray) -> np.ndarray:
    y = np.asarray(admittance.todense(), dtype=complex)
    y[np.diag_indices_from(y)] += y_load
    np.add.at(y, (src_idx, src_idx), y_src)
    return y


def _solve_islands(model: GridModel, y_aug: np.ndarray, breakers, src_idx: np.ndarray):
    part = find_islands(model, breakers)
    idx = model.bus_index
    n = len(model.buses)
    w_full = np.zeros((n, len(src_idx)), dtype=complex)
    live = np.zeros(n, dtype=bool)
    for island, energized in zip(part.islands, part.energized):
        if not energized:
            continue
        rows = np.array(sorted(idx[b] for b in island))
        cols = np.flatnonzero(np.isin(src_idx, rows))
        sub = y_aug[np.ix_(rows, rows)]
        rhs = np.zeros((len(rows), len(cols)), dtype=complex)
        pos = {r: k for k, r in enumerate(rows)}
        for c, s in enumerate(cols):
            rhs[pos[src_idx[s]], c] = 1.0
        try:
            sol = np.linalg.solve(sub, rhs)
        except np.linalg.LinAlgError as exc:
            raise NetworkSolveError(f"singular network in island containing bus {min(island)}") from exc
        if not np.all(np.isfinite(sol)):
            raise NetworkSolveError(f"ill-conditioned network in island containing bus {min(island)}")
        w_full[np.ix_(rows, cols)] = sol
        live[rows] = True
    return w_full, live, part


def network_solve(state: DynamicState, model: GridModel, admittance: sparse.spmatrix) -> np.ndarray:
    """Bus voltage phasors for the given state and network admittance.

    Sources enter as Norton equivalents (EMF behind reactance), loads as
    constant admittances. Buses in islands without sources come out at zero.
    """
    sim = Simulator(model, state.params)
    y_aug = _augmented(model, admittance, state.params.y_load, sim.src_idx, sim.y_src)
    w_full, _, _ = _solve_islands(model, y_aug, state.breakers, sim.src_idx)
    return w_full @ (sim.y_src * sim.source_emf(state.vector()))


class Simulator:
    """Holds per-model constants and cached network factorizations."""

    def __init__(self, model: GridModel, params: DynamicParams):
        self.model = model
        self.params = params
        s_base = model.s_base
        ms, gs = model.machines, model.inverters
        self.n_m, self.n_i = len(ms), len(gs)
        self.omega_s = 2 * np.pi * model.f_nominal
        idx = model.bus_index
        self.src_idx = np.array([idx[m.bus] for m in ms] + [idx[g.bus] for g in gs], dtype=int)
        self.m_rating = np.array([m.rating_mva for m in ms], dtype=float)
        self.g_rating = np.array([g.rating_mva for g in gs], dtype=float)
        self.h = np.array([m.h for m in ms], dtype=float)
        self.d = np.array([m.d for m in ms], dtype=float)
        self.droop = np.array([m.governor_droop for m in ms], dtype=float)
        self.gov_tc = np.array([m.governor_tc for m in ms], dtype=float)
        self.mp = np.array([g.mp for g in gs], dtype=float)
        self.mq = np.array([g.mq for g in gs], dtype=float)
        self.filter_tc = np.array([g.filter_tc for g in gs], dtype=float)
        x_src = np.r_[[m.xdp * s_base / m.rating_mva for m in ms], [g.x_out * s_base / g.rating_mva for g in gs]]
        self.y_src = 1.0 / (1j * x_src)
        self.to_base = s_base / np.r_[self.m_rating, self.g_rating]
        self._nets: dict[tuple, _Network] = {}

    # -- network ------------------------------------------------------------

    def active_faults(self, names: Iterable[str]):
        names = set(names)
        return [f for f in self.model.faults if f.id in names]

    def network(self, breakers: dict[str, BreakerState], faults: frozenset[str]) -> _Network:
        key = (tuple(sorted((k, v.value) for k, v in breakers.items())), tuple(sorted(faults)))
        net = self._nets.get(key)
        if net is None:
            ybus = build_admittance(self.model, breakers, self.active_faults(faults))
            y_aug = _augmented(self.model, ybus, self.params.y_load, self.src_idx, self.y_src)
            w_full, live, part = _solve_islands(self.model, y_aug, breakers, self.src_idx)
            net = _Network(w_full=w_full, w_src=w_full[self.src_idx, :], live=live,
                           island_of=dict(part.island_of), energized=part.energized)
            self._nets[key] = net
        return net

    def source_emf(self, x: np.ndarray) -> np.ndarray:
        n_m, n_i = self.n_m, self.n_i
        delta = x[:n_m]
        theta = x[3 * n_m:3 * n_m + n_i]
        q_filt = x[3 * n_m + 2 * n_i:]
        e_inv = self.params.e_ref - self.mq * (q_filt - self.params.q_ref)
        return np.r_[self.params.emf * np.exp(1j * delta), e_inv * np.exp(1j * theta)]

    def source_power(self, x: np.ndarray, net: _Network) -> np.ndarray:
        """Complex terminal power of every source, on its own rating base."""
        e = self.source_emf(x)
        i_src = self.y_src * e
        v_src = net.w_src @ i_src
        i_out = self.y_src * (e - v_src)
        return v_src * np.conj(i_out) * self.to_base

    # -- dynamics -----------------------------------------------------------

    def derivatives(self, x: np.ndarray, net: _Network) -> np.ndarray:
        n_m, n_i = self.n_m, self.n_i
        s = self.source_power(x, net)
        omega = x[n_m:2 * n_m]
        p_mech = x[2 * n_m:3 * n_m]
        p_filt = x[3 * n_m + n_i:3 * n_m + 2 * n_i]
        q_filt = x[3 * n_m + 2 * n_i:]
        dw = omega - 1.0
        p_e = s[:n_m].real
        d_delta = self.omega_s * dw
        d_omega = (p_mech - p_e - self.d * dw) / (2.0 * self.h)
        d_pmech = (self.params.p_gov_ref - dw / self.droop - p_mech) / self.gov_tc
        d_theta = -self.omega_s * self.mp * (p_filt - self.params.p_set)
        d_pf = (s[n_m:].real - p_filt) / self.filter_tc
        d_qf = (s[n_m:].imag - q_filt) / self.filter_tc
        return np.concatenate([d_delta, d_omega, d_pmech, d_theta, d_pf, d_qf])

    def _with_vector(self, state: DynamicState, x: np.ndarray, **changes) -> DynamicState:
        n_m, n_i = self.n_m, self.n_i
        return replace(
            state, delta=x[:n_m], omega=x[n_m:2 * n_m], p_mech=x[2 * n_m:3 * n_m],
            theta=x[3 * n_m:3 * n_m + n_i], p_filt=x[3 * n_m + n_i:3 * n_m + 2 * n_i],
            q_filt=x[3 * n_m + 2 * n_i:], **changes)

    def resolve(self, state: DynamicState, jump: bool = True, h: float | None = None) -> DynamicState:
        """Re-solve bus voltages for the current topology and update frequency estimates.

        ``jump`` marks a same-instant re-solve after a topology change; ``h`` is
        the elapsed time for a regular sample. With neither, the estimator restarts.
        """
        net = self.network(state.breakers, state.faults)
        v = net.w_full @ (self.y_src * self.source_emf(state.vector()))
        angles = np.angle(v)
        if h is not None:
            est = state.estimator.update(angles, net.live, h)
        elif jump:
            est = state.estimator.update(angles, net.live, 0.0)
        else:
            est = FrequencyEstimator.start(angles, net.live, tau=state.estimator.tau,
                                           f_nominal=self.model.f_nominal)
        v = np.where(net.live, v, 0.0)
        return replace(state, v=v, estimator=est, f_est=est.frequency)

    def apply_events(self, state: DynamicState, events: Iterable[SimEvent]) -> DynamicState:
        breakers = dict(state.breakers)
        faults = set(state.faults)
        fault_ids = {f.id for f in self.model.faults}
        for ev in events:
            if ev.kind in (EventKind.BREAKER_OPEN, EventKind.BREAKER_CLOSE):
                if ev.target not in breakers:
                    raise KeyError(f"unknown breaker {ev.target!r}")
                breakers[ev.target] = BreakerState.OPEN if ev.kind is EventKind.BREAKER_OPEN \
                    else BreakerState.CLOSED
            else:
                if ev.target not in fault_ids:
                    raise KeyError(f"unknown fault {ev.target!r}")
                if ev.kind is EventKind.FAULT_ON:
                    faults.add(ev.target)
                else:
                    faults.discard(ev.target)
        faults = frozenset(faults)
        if breakers == state.breakers and faults == state.faults:
            return state
        return self.resolve(replace(state, breakers=breakers, faults=faults), jump=True)

    def advance(self, state: DynamicState, dt: float) -> DynamicState:
        if dt <= 0:
            raise ValueError("dt must be positive")
        net = self.network(state.breakers, state.faults)
        x = state.vector()
        k1 = self.derivatives(x, net)
        k2 = self.derivatives(x + 0.5 * dt * k1, net)
        k3 = self.derivatives(x + 0.5 * dt * k2, net)
        k4 = self.derivatives(x + dt * k3, net)
        x_new = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        n = state.step + 1
        out = self._with_vector(state, x_new, step=n, t=n * dt)
        omega = out.omega
        if not np.all(np.isfinite(x_new)) or np.any(np.abs(omega - 1.0) >= OMEGA_GUARD):
            worst = int(np.nanargmax(np.abs(omega - 1.0))) if omega.size else -1
            name = self.model.machines[worst].id if worst >= 0 else "?"
            raise SimulationBlowUp(f"divergence guard tripped at t={out.t:.4f}s on machine {name}", out)
        return self.resolve(out, h=dt)

    def step(self, state: DynamicState, dt: float, due_events: Iterable[SimEvent] = ()) -> DynamicState:
        return self.advance(self.apply_events(state, due_events), dt)


_SIMULATORS: dict[tuple[int, int], Simulator] = {}


def simulator_for(model: GridModel, params: DynamicParams) -> Simulator:
    key = (id(model), id(params))
    sim = _SIMULATORS.get(key)
    if sim is None or sim.model is not model or sim.params is not params:
        if len(_SIMULATORS) > 16:
            _SIMULATORS.clear()
        sim = _SIMULATORS[key] = Simulator(model, params)
    return sim


def step(state: DynamicState, model: GridModel, dt: float, due_events: Iterable[SimEvent] = ()) -> DynamicState:
    """Apply due events at the step boundary, then advance one RK4 step."""
    return simulator_for(model, state.params).step(state, dt, due_events)


def island_power_balance(state: DynamicState, model: GridModel) -> dict[int, float]:
    """Per energized island: source active power minus load and network losses (p.u.)."""
    sim = simulator_for(model, state.params)
    net = sim.network(state.breakers, state.faults)
    ybus = build_admittance(model, state.breakers, sim.active_faults(state.faults))
    v = state.v
    absorbed = (v * np.conj(ybus @ v)).real + (np.abs(v) ** 2 * state.params.y_load).real
    s_src = sim.source_power(state.vector(), net) / sim.to_base
    out: dict[int, float] = {}
    idx_to_bus = model.bus_ids
    for k, bus_id in enumerate(idx_to_bus):
        isl = net.island_of[bus_id]
        if net.energized[isl]:
            out[isl] = out.get(isl, 0.0) - absorbed[k]
    for s, j in zip(s_src.real, sim.src_idx):
        out[net.island_of[idx_to_bus[j]]] += s
    return out
