"""Newton-Raphson power flow and equilibrium initialization of the dynamic states."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .dynamics import DynamicParams, DynamicState, FrequencyEstimator, Simulator
from .model import BusKind, GridModel, build_admittance

logger = logging.getLogger(__name__)


class PowerFlowError(RuntimeError):
    """Newton-Raphson did not converge."""

    def __init__(self, message: str, max_mismatch: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.max_mismatch = max_mismatch
        self.iterations = iterations


class VoltageCollapseError(PowerFlowError):
    """The power-flow Jacobian became singular (no operating point)."""


class InitializationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PowerFlowSolution:
    bus_ids: tuple[int, ...]
    v_mag: np.ndarray
    v_ang: np.ndarray
    p_inj: np.ndarray  # MW
    q_inj: np.ndarray  # Mvar
    iterations: int
    max_mismatch: float

    @property
    def voltage(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_ang)


def scheduled_injections(model: GridModel) -> np.ndarray:
    """Complex scheduled bus injection in p.u. (generation minus load)."""
    idx = model.bus_index
    s = np.array([-(b.load_p + 1j * b.load_q) for b in model.buses], dtype=complex)
    for m in model.machines:
        s[idx[m.bus]] += m.p_dispatch
    for inv in model.inverters:
        s[idx[inv.bus]] += inv.p_set
    return s / model.s_base


def bus_index_sets(model: GridModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    kinds = [b.kind for b in model.buses]
    ref = np.flatnonzero([k is BusKind.SLACK for k in kinds])
    pv = np.flatnonzero([k is BusKind.PV for k in kinds])
    pq = np.flatnonzero([k is BusKind.PQ for k in kinds])
    return ref, pv, pq


def power_mismatch(ybus: sparse.spmatrix, v: np.ndarray, sbus: np.ndarray,
                   pvpq: np.ndarray, pq: np.ndarray) -> np.ndarray:
    mis = v * np.conj(ybus @ v) - sbus
    return np.r_[mis[pvpq].real, mis[pq].imag]


def dsbus_dv(ybus: sparse.spmatrix, v: np.ndarray) -> tuple[sparse.spmatrix, sparse.spmatrix]:
    """Partial derivatives of bus power injections w.r.t. voltage angle and magnitude."""
    ibus = ybus @ v
    diag_v = sparse.diags(v)
    diag_i = sparse.diags(ibus)
    diag_vnorm = sparse.diags(v / np.abs(v))
    ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
    ds_dvm = diag_v @ np.conj(ybus @ diag_vnorm) + np.conj(diag_i) @ diag_vnorm
    return ds_dva, ds_dvm


def jacobian(ybus: sparse.spmatrix, v: np.ndarray, pvpq: np.ndarray, pq: np.ndarray) -> sparse.csr_matrix:
    ds_dva, ds_dvm = dsbus_dv(ybus, v)
    ds_dva = sparse.csr_matrix(ds_dva)
    ds_dvm = sparse.csr_matrix(ds_dvm)
    j11 = ds_dva[pvpq][:, pvpq].real
    j12 = ds_dvm[pvpq][:, pq].real
    j21 = ds_dva[pq][:, pvpq].imag
    j22 = ds_dvm[pq][:, pq].imag
    return sparse.vstack([sparse.hstack([j11, j12]), sparse.hstack([j21, j22])], format="csr")


def solve_power_flow(model: GridModel, tol: float = 1e-8, max_iter: int = 20) -> PowerFlowSolution:
    """Full Newton-Raphson from a flat start; generator buses are PV, one slack.

    ``iterations`` counts mismatch evaluations, so an operating point that is
    already balanced at the flat start reports one iteration.
    """
    ref, pv, pq = bus_index_sets(model)
    if len(ref) != 1:
        raise PowerFlowError(f"expected exactly one slack bus, found {len(ref)}")
    ybus = build_admittance(model, model.initial_breaker_states())
    sbus = scheduled_injections(model)
    vm = np.ones(len(model.buses))
    for k, b in enumerate(model.buses):
        if b.kind is not BusKind.PQ:
            vm[k] = b.v_set
    va = np.zeros(len(model.buses))
    v = vm * np.exp(1j * va)
    pvpq = np.r_[pv, pq]
    npvpq = len(pvpq)

    norm = np.inf
    for it in range(1, max_iter + 1):
        f = power_mismatch(ybus, v, sbus, pvpq, pq)
        norm = float(np.max(np.abs(f))) if f.size else 0.0
        if not np.isfinite(norm):
            raise VoltageCollapseError("power-flow iterates diverged to non-finite voltages",
                                       norm, it)
        logger.debug("NR iteration %d: max mismatch %.3e", it, norm)
        if norm < tol:
            s = v * np.conj(ybus @ v)
            return PowerFlowSolution(
                bus_ids=tuple(model.bus_ids), v_mag=np.abs(v), v_ang=np.angle(v),
                p_inj=s.real * model.s_base, q_inj=s.imag * model.s_base,
                iterations=it, max_mismatch=norm,
            )
        jac = jacobian(ybus, v, pvpq, pq)
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("error", MatrixRankWarning)
            try:
                dx = spsolve(jac.tocsc(), -f)
            except MatrixRankWarning:
                raise VoltageCollapseError(
                    f"singular Jacobian at iteration {it} (mismatch {norm:.3e}); "
                    "no power-flow solution near this loading", norm, it) from None
        if not np.all(np.isfinite(dx)):
            raise VoltageCollapseError(f"singular Jacobian at iteration {it}", norm, it)
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        if np.any(vm <= 0):
            raise VoltageCollapseError(f"voltage magnitude collapsed at iteration {it}", norm, it)
        v = vm * np.exp(1j * va)
    raise PowerFlowError(f"power flow did not converge in {max_iter} iterations "
                         f"(max mismatch {norm:.3e} p.u.)", norm, max_iter)


def init_dynamics(model: GridModel, pf: PowerFlowSolution) -> DynamicState:
    """Back-solve machine and inverter states so the power-flow point is a fixed point."""
    idx = model.bus_index
    v = pf.voltage
    s_base = model.s_base
    n_m, n_i = len(model.machines), len(model.inverters)

    # split each generator bus's injection among its sources
    p_src = np.zeros(n_m + n_i)
    q_src = np.zeros(n_m + n_i)
    rating = np.array([m.rating_mva for m in model.machines] + [g.rating_mva for g in model.inverters])
    src_bus = [m.bus for m in model.machines] + [g.bus for g in model.inverters]
    for bus_id in set(src_bus):
        k = idx[bus_id]
        members = [j for j, b in enumerate(src_bus) if b == bus_id]
        bus = model.buses[k]
        p_gen = pf.p_inj[k] + bus.load_p
        q_gen = pf.q_inj[k] + bus.load_q
        fixed = {j: (model.machines[j].p_dispatch if j < n_m else model.inverters[j - n_m].p_set)
                 for j in members}
        if bus.kind is BusKind.SLACK:
            # the slack picks up the balance on its machines, pro rata by rating
            machines_here = [j for j in members if j < n_m]
            rest = p_gen - sum(fixed[j] for j in members if j >= n_m)
            share = rating[machines_here] / rating[machines_here].sum()
            for j, w in zip(machines_here, share):
                fixed[j] = rest * w
        for j in members:
            p_src[j] = fixed[j]
        weights = rating[members] / rating[members].sum()
        q_src[members] = q_gen * weights

    emf = np.zeros(n_m)
    delta = np.zeros(n_m)
    p_mech = np.zeros(n_m)
    for j, m in enumerate(model.machines):
        vt = v[idx[m.bus]]
        i_t = np.conj((p_src[j] + 1j * q_src[j]) / s_base / vt)
        if abs(i_t) * s_base > m.rating_mva * (1 + 1e-9):
            raise InitializationError(
                f"machine {m.id}: initial current {abs(i_t) * s_base / m.rating_mva:.3f} p.u. "
                f"exceeds its {m.rating_mva:.0f} MVA rating")
        e = vt + 1j * (m.xdp * s_base / m.rating_mva) * i_t
        emf[j] = abs(e)
        delta[j] = np.angle(e)
        p_mech[j] = p_src[j] / m.rating_mva

    theta = np.zeros(n_i)
    e_ref = np.zeros(n_i)
    q_ref = np.zeros(n_i)
    p_filt = np.zeros(n_i)
    for j, g in enumerate(model.inverters):
        vt = v[idx[g.bus]]
        p, q = p_src[n_m + j], q_src[n_m + j]
        i_t = np.conj((p + 1j * q) / s_base / vt)
        if abs(i_t) * s_base > g.rating_mva * (1 + 1e-9):
            raise InitializationError(f"inverter {g.id}: initial current exceeds rating")
        e = vt + 1j * (g.x_out * s_base / g.rating_mva) * i_t
        theta[j] = np.angle(e)
        e_ref[j] = abs(e)
        q_ref[j] = q / g.rating_mva
        p_filt[j] = p / g.rating_mva

    v_mag2 = np.abs(v) ** 2
    y_load = np.array([(b.load_p - 1j * b.load_q) / s_base for b in model.buses]) / v_mag2

    params = DynamicParams(
        emf=emf, p_gov_ref=p_mech.copy(), e_ref=e_ref, q_ref=q_ref,
        p_set=np.array([g.p_set / g.rating_mva for g in model.inverters]), y_load=y_load,
    )
    sim = Simulator(model, params)
    state = DynamicState(
        t=0.0, step=0, delta=delta, omega=np.ones(n_m), p_mech=p_mech, theta=theta,
        p_filt=p_filt, q_filt=q_ref.copy(), v=v.copy(), f_est=np.full(len(model.buses), model.f_nominal),
        breakers=model.initial_breaker_states(), faults=frozenset(), params=params,
        estimator=FrequencyEstimator.start(np.angle(v), f_nominal=model.f_nominal),
    )
    # re-solve the algebraic network with the source models in place
    state = sim.resolve(state, jump=False)
    return state
