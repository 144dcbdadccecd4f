"""Initial guess: power flow plus conventional steady-state device initialization.

The power flow is a positive-sequence Newton-Raphson solution of the
balanced aggregate system.  Its balanced three-phase expansion can optionally
be corrected by one linear current-injection solve of the phase network, in
which generators are sources behind their sequence impedances, the motor is
a pair of sequence admittances at its operating slip, and loads are per-phase
admittances built from their allocated powers.  That captures most of the
unbalance in the guess.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect, minimize_scalar

from .emt.machines import SQRT2, MotorParams, SyncMachine
from .emt.system import System, SystemState, load_structure
from .netlist import GenSpec, MotorSpec, SystemSpec, allocate_load
from .phasor import A_OP, balanced_set, sequence_components, zip_target

PF_TOL = 1e-8
PF_MAXITER = 30
_SEQ_TO_PHASE = np.array([[1, 1, 1],
                          [1, A_OP.conjugate(), A_OP],
                          [1, A_OP, A_OP.conjugate()]]).T  # columns: zero, pos, neg


class PowerFlowError(RuntimeError):
    pass


class PullOutError(ValueError):
    pass


@dataclass
class PowerFlowSolution:
    """Positive-sequence solution plus its three-phase phasor expansion.

    Device currents follow the device's own convention: injection for
    generators, consumption for motors and loads.
    """

    v: dict[str, complex]
    currents: dict[str, complex]
    slack: complex
    iterations: int
    max_mismatch: float
    phase_v: dict[str, np.ndarray] = field(default_factory=dict)
    phase_i: dict[str, np.ndarray] = field(default_factory=dict)
    motor_slip: dict[str, float] = field(default_factory=dict)
    motor_q: dict[str, float] = field(default_factory=dict)
    refined: bool = False

    def write_csv(self, path) -> None:
        """Write ``bus,Vmag,Vang`` (angle in degrees) for each bus."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bus", "Vmag", "Vang"])
            for bus, v in self.v.items():
                w.writerow([bus, repr(abs(v)), repr(math.degrees(np.angle(v)))])


# ---------------------------------------------------------------- network

def admittance_matrix(spec: SystemSpec) -> np.ndarray:
    """Positive-sequence bus admittance matrix (pi branches, bus shunts)."""
    idx = spec.bus_index()
    n = len(spec.buses)
    Y = np.zeros((n, n), dtype=complex)
    for b in spec.buses:
        Y[idx[b.id], idx[b.id]] += 1j * b.shunt_b
    for br in spec.branches:
        f, t = idx[br.from_bus], idx[br.to_bus]
        y = 1.0 / complex(br.r, br.x)
        a = br.ratio
        Y[f, f] += y / a ** 2 + 0.5j * br.b
        Y[t, t] += y + 0.5j * br.b
        Y[f, t] -= y / a
        Y[t, f] -= y / a
    return Y


def _equivalent_circuit(m: MotorSpec | MotorParams, slip: float) -> complex:
    """Input impedance of the steady-state equivalent circuit at ``slip``."""
    if slip == 0.0:
        return complex(m.rs, m.xls + m.xm)
    zr = complex(m.rr / slip, m.xlr)
    zm = 1j * m.xm
    return complex(m.rs, m.xls) + zm * zr / (zm + zr)


def motor_power(m: MotorSpec, v_mag: float, slip: float) -> complex:
    """Complex power drawn by the motor at terminal voltage ``v_mag``."""
    z = _equivalent_circuit(m, slip)
    return v_mag ** 2 / np.conj(z)


def motor_slip(m: MotorSpec, v_mag: float, p: float) -> float:
    """Motoring slip at which the motor draws real power ``p``.

    The real power grows monotonically from the no-load value up to the
    pull-out slip; the root is bracketed there and found by bisection.
    """
    p_min = motor_power(m, v_mag, 0.0).real
    res = minimize_scalar(lambda s: -motor_power(m, v_mag, s).real, bounds=(1e-9, 1.0),
                          method="bounded", options={"xatol": 1e-12})
    s_pull = float(res.x)
    p_max = motor_power(m, v_mag, s_pull).real
    if p <= p_min:
        return 0.0
    if p > p_max:
        raise PullOutError(f"motor {m.id}: P = {p:.6g} exceeds the pull-out power; feasible "
                           f"range at |V| = {v_mag:.6g} is [{p_min:.6g}, {p_max:.6g}]")
    return float(bisect(lambda s: motor_power(m, v_mag, s).real - p, 0.0, s_pull,
                        xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200))


def _bus_demand(spec: SystemSpec, vmag: np.ndarray, motor_q: dict[str, float]) -> np.ndarray:
    """Net complex power demand per bus (loads and motors minus PQ generators)."""
    idx = spec.bus_index()
    s = np.zeros(len(spec.buses), dtype=complex)
    for ld in spec.loads:
        i = idx[ld.bus]
        cond = spec.condition_for(ld.id)
        if cond is not None and cond.kind == "PQ":
            p, q = zip_target(vmag[i], cond.zip, cond.p, cond.q)
        else:
            p, q = ld.s_total.real * vmag[i] ** 2, ld.s_total.imag * vmag[i] ** 2
        s[i] += complex(p, q)
    for m in spec.motors:
        cond = spec.condition_for(m.id)
        s[idx[m.bus]] += complex(cond.p, motor_q[m.id])
    for g in spec.generators:
        cond = spec.condition_for(g.id)
        if cond.kind == "PQ":
            s[idx[g.bus]] -= complex(cond.p, cond.q)
    return s


def _newton_raphson(spec: SystemSpec, Y: np.ndarray, v0: np.ndarray,
                    motor_q: dict[str, float]) -> tuple[np.ndarray, int, float]:
    idx = spec.bus_index()
    n = len(spec.buses)
    slack, pv_p, pv_v = None, {}, {}
    for g in spec.generators:
        c = spec.condition_for(g.id)
        if c.kind == "VTHETA":
            slack = idx[g.bus]
        elif c.kind == "PV":
            pv_p[idx[g.bus]] = pv_p.get(idx[g.bus], 0.0) + c.p
            pv_v[idx[g.bus]] = c.v
    pv = sorted(set(pv_p) - {slack})
    pq = [i for i in range(n) if i != slack and i not in pv_p]
    ang_idx = [i for i in range(n) if i != slack]
    mag_idx = pq

    vm, va = np.abs(v0), np.angle(v0)
    for i, vv in pv_v.items():
        vm[i] = vv
    for it in range(PF_MAXITER + 1):
        v = vm * np.exp(1j * va)
        s_inj = v * np.conj(Y @ v)
        demand = _bus_demand(spec, vm, motor_q)
        target = -demand
        for i, p in pv_p.items():
            target[i] += p
        mis = np.concatenate([(target - s_inj).real[ang_idx], (target - s_inj).imag[mag_idx]])
        worst = float(np.max(np.abs(mis))) if mis.size else 0.0
        if worst < PF_TOL:
            return v, it, worst
        if it == PF_MAXITER:
            break
        # Jacobian of the injections (polar form) plus the voltage-dependent demand
        diag_v = np.diag(v)
        diag_i = np.diag(np.conj(Y @ v))
        ds_dva = 1j * diag_v @ (diag_i - np.conj(Y) @ np.conj(diag_v))
        ds_dvm = diag_v @ (diag_i + np.conj(Y) @ np.conj(diag_v)) @ np.diag(1.0 / vm)
        dd_dvm = np.zeros(n, dtype=complex)
        h = 1e-7
        for i in mag_idx:
            vp = vm.copy()
            vp[i] += h
            dd_dvm[i] = (_bus_demand(spec, vp, motor_q)[i] - demand[i]) / h
        ds_dvm = ds_dvm + np.diag(dd_dvm)
        J = np.block([[ds_dva.real[np.ix_(ang_idx, ang_idx)], ds_dvm.real[np.ix_(ang_idx, mag_idx)]],
                      [ds_dva.imag[np.ix_(mag_idx, ang_idx)], ds_dvm.imag[np.ix_(mag_idx, mag_idx)]]])
        dx = np.linalg.solve(J, mis)
        va[ang_idx] += dx[:len(ang_idx)]
        vm[mag_idx] += dx[len(ang_idx):]
    raise PowerFlowError(f"power flow did not converge in {PF_MAXITER} iterations "
                         f"(mismatch {worst:.3e})")


def power_flow(spec: SystemSpec, refine: bool = True) -> PowerFlowSolution:
    """Balanced power flow, three-phase expansion and optional unbalance sweep.

    Motors enter as PQ buses.  Their reactive power starts from a flat
    estimate at 1 p.u. voltage and is updated from the equivalent circuit at
    the solved voltage until it settles.
    """
    idx = spec.bus_index()
    Y = admittance_matrix(spec)
    v0 = np.ones(len(spec.buses), dtype=complex)
    for g in spec.generators:
        c = spec.condition_for(g.id)
        if c.kind == "VTHETA":
            v0[idx[g.bus]] = c.v * np.exp(1j * c.theta)
    motor_q = {}
    for m in spec.motors:
        p = spec.condition_for(m.id).p
        motor_q[m.id] = motor_power(m, 1.0, motor_slip(m, 1.0, p)).imag
    total_it = 0
    for _ in range(50):
        v, it, worst = _newton_raphson(spec, Y, v0, motor_q)
        total_it += it
        v0 = v
        change = 0.0
        for m in spec.motors:
            p = spec.condition_for(m.id).p
            vm = abs(v[idx[m.bus]])
            q = motor_power(m, vm, motor_slip(m, vm, p)).imag
            change = max(change, abs(q - motor_q[m.id]))
            motor_q[m.id] = q
        if change < 0.1 * PF_TOL:
            break
    else:
        raise PowerFlowError("motor reactive power estimate did not settle")
    v, it, worst = _newton_raphson(spec, Y, v0, motor_q)
    total_it += it

    s_inj = v * np.conj(Y @ v)
    demand = _bus_demand(spec, np.abs(v), motor_q)
    bus_v = {b.id: complex(v[idx[b.id]]) for b in spec.buses}
    currents: dict[str, complex] = {}
    slips: dict[str, float] = {}
    # generator injection: bus total; buses with several generators share P equally
    gens_at: dict[str, list[GenSpec]] = {}
    for g in spec.generators:
        gens_at.setdefault(g.bus, []).append(g)
    slack_s = 0j
    for bus, gens in gens_at.items():
        i = idx[bus]
        s_gen = s_inj[i] + demand[i]
        for g in gens:
            c = spec.condition_for(g.id)
            s_gen = s_gen + (complex(c.p, c.q) if c.kind == "PQ" else 0)
        for g in gens:
            c = spec.condition_for(g.id)
            s = complex(c.p, c.q) if c.kind == "PQ" else s_gen / len(gens)
            currents[g.id] = complex(np.conj(s / v[i]))
            if c.kind == "VTHETA":
                slack_s = s
    for m in spec.motors:
        vm = abs(v[idx[m.bus]])
        slips[m.id] = motor_slip(m, vm, spec.condition_for(m.id).p)
        currents[m.id] = complex(v[idx[m.bus]] / _equivalent_circuit(m, slips[m.id]))
    for ld in spec.loads:
        i = idx[ld.bus]
        cond = spec.condition_for(ld.id)
        if cond is not None and cond.kind == "PQ":
            s = complex(*zip_target(abs(v[i]), cond.zip, cond.p, cond.q))
        else:
            s = ld.s_total * abs(v[i]) ** 2
        currents[ld.id] = complex(np.conj(s / v[i]))

    sol = PowerFlowSolution(bus_v, currents, slack_s, total_it, worst,
                            motor_slip=slips, motor_q=dict(motor_q))
    sol.phase_v = {b: balanced_set(x) for b, x in bus_v.items()}
    sol.phase_i = {d: balanced_set(x) for d, x in currents.items()}
    if refine:
        _refine_unbalanced(spec, sol)
    return sol


def _load_phase_powers(spec: SystemSpec, ld, v_phase: np.ndarray) -> np.ndarray:
    """Per-phase power shares (three-phase base) of a load at phase voltages."""
    cond = spec.condition_for(ld.id)
    if cond is not None and cond.kind == "PQ" and cond.scope == "per-phase":
        shares = allocate_load(complex(cond.p, cond.q), ld.alloc_k)
        return np.array([complex(*zip_target(abs(vx), cond.zip, s.real, s.imag))
                         for s, vx in zip(shares, v_phase)])
    if cond is not None and cond.kind == "PQ":
        v1 = sequence_components(*v_phase)[1]
        s = complex(*zip_target(abs(v1), cond.zip, cond.p, cond.q))
        return np.full(3, s / 3.0)
    shares = allocate_load(ld.s_total, ld.alloc_k)
    return np.array([s * abs(vx) ** 2 for s, vx in zip(shares, v_phase)])


def _refine_unbalanced(spec: SystemSpec, sol: PowerFlowSolution) -> None:
    """One linear phase-domain solve around the balanced power-flow point."""
    idx = spec.bus_index()
    nb = len(spec.buses)
    Y1 = admittance_matrix(spec)
    Y = np.kron(Y1, np.eye(3))  # phases are uncoupled in the network
    rhs = np.zeros(3 * nb, dtype=complex)

    def add_seq_shunt(bus, y0, y1, y2):
        ysp = _SEQ_TO_PHASE @ np.diag([y0, y1, y2]) @ np.linalg.inv(_SEQ_TO_PHASE)
        sl = slice(3 * idx[bus], 3 * idx[bus] + 3)
        Y[sl, sl] += ysp
        return ysp

    gen_src = {}
    for g in spec.generators:
        z1 = complex(g.ra, g.xdpp)
        z0 = complex(g.ra, g.xl)
        e = sol.v[g.bus] + z1 * sol.currents[g.id]
        add_seq_shunt(g.bus, 1 / z0, 1 / z1, 1 / z1)
        sl = slice(3 * idx[g.bus], 3 * idx[g.bus] + 3)
        src = balanced_set(e / z1)
        rhs[sl] += src
        gen_src[g.id] = (src, (1 / z0, 1 / z1, 1 / z1))
    motor_y = {}
    for m in spec.motors:
        s = sol.motor_slip[m.id]
        y1 = 1 / _equivalent_circuit(m, s)
        y2 = 1 / _equivalent_circuit(m, 2.0 - s)
        motor_y[m.id] = add_seq_shunt(m.bus, 0.0, y1, y2)
    load_y = {}
    for ld in spec.loads:
        vph = sol.phase_v[ld.bus]
        shares = _load_phase_powers(spec, ld, vph)
        y = np.conj(3.0 * shares) / np.abs(vph) ** 2
        load_y[ld.id] = y
        sl = slice(3 * idx[ld.bus], 3 * idx[ld.bus] + 3)
        Y[sl, sl] += np.diag(y)

    vph = np.linalg.solve(Y, rhs).reshape(nb, 3)
    sol.phase_v = {b.id: vph[idx[b.id]].copy() for b in spec.buses}
    for g in spec.generators:
        src, (y0, y1, y2) = gen_src[g.id]
        ysp = _SEQ_TO_PHASE @ np.diag([y0, y1, y2]) @ np.linalg.inv(_SEQ_TO_PHASE)
        sol.phase_i[g.id] = src - ysp @ sol.phase_v[g.bus]
    for m in spec.motors:
        sol.phase_i[m.id] = motor_y[m.id] @ sol.phase_v[m.bus]
    for ld in spec.loads:
        sol.phase_i[ld.id] = load_y[ld.id] * sol.phase_v[ld.bus]
    sol.refined = True


# ---------------------------------------------------------------- devices

def _to_dq(x: complex, delta: float) -> complex:
    """Phasor in the rotor frame whose q axis sits at ``delta``."""
    return x * np.exp(-1j * (delta - 0.5 * math.pi))


def init_sync_machine(gen: GenSpec, v1: complex, s: complex, omega0: float = 2 * math.pi * 60
                      ) -> tuple[np.ndarray, float, float]:
    """Steady state of the synchronous machine at terminal ``v1`` delivering ``s``.

    Returns (states, Efd, Tm) with states in ``SyncMachine.STATES`` order.
    """
    mach = SyncMachine(gen, omega0)
    p = mach.p
    i1 = np.conj(s / v1)
    delta = float(np.angle(v1 + complex(p.ra, p.xq) * i1))
    e = _to_dq(v1, delta)
    i = _to_dq(i1, delta)
    ed, eq, id_, iq = e.real, e.imag, i.real, i.imag
    efd = eq + p.ra * iq + p.xd * id_
    ifd = efd / p.lad
    psi_d = eq + p.ra * iq
    psi_q = -(ed + p.ra * id_)
    psi_ad = p.lad * (-id_ + ifd)
    psi_aq = p.laq * (-iq)
    states = np.array([psi_d, psi_q, 0.0, psi_ad + p.lfd * ifd, psi_ad, psi_aq, psi_aq,
                       1.0, delta])
    tm = psi_d * iq - psi_q * id_
    return states, float(efd), float(tm)


def init_induction_machine(mot: MotorSpec, v1: complex, p: float
                           ) -> tuple[np.ndarray, float, float]:
    """Steady state of the induction motor at terminal ``v1`` drawing real power ``p``.

    Returns (states, slip, T_L); the rotor angle state is set to 0.
    """
    slip = motor_slip(mot, abs(v1), p)
    i_s = v1 / _equivalent_circuit(mot, slip)
    if slip == 0.0:
        i_r = 0j
    else:
        zr = complex(mot.rr / slip, mot.xlr)
        i_r = -(1j * mot.xm) * i_s / (1j * mot.xm + zr)
    psi_s = (mot.xls + mot.xm) * i_s + mot.xm * i_r
    psi_r = mot.xm * i_s + (mot.xlr + mot.xm) * i_r
    te = (np.conj(psi_s) * i_s).imag
    tl = te - mot.d * (1.0 - slip)
    states = np.array([psi_s.real, psi_s.imag, psi_r.real, psi_r.imag, 1.0 - slip, 0.0])
    return states, slip, float(tl)


def init_load(s_target: complex, v: complex) -> tuple[float, float]:
    """Series R, X (per-phase base) drawing ``s_target`` (three-phase base share) at ``v``.

    ``s_target`` is the per-phase share expressed on the three-phase base, so
    the per-phase-base power is ``3*s_target``.  A zero target returns (inf, 0).
    """
    if s_target == 0:
        return math.inf, 0.0
    z = abs(v) ** 2 / np.conj(3.0 * complex(s_target))
    return float(z.real), float(z.imag)


# ---------------------------------------------------------------- assembly

def _phasor_at(x: complex, omega0: float, t0: float) -> float:
    return float(SQRT2 * (x * np.exp(1j * omega0 * t0)).real)


def initial_state(spec: SystemSpec, sys: System, pf: PowerFlowSolution,
                  t0: float = 0.0) -> SystemState:
    """Full system state, parameters and inputs from a power-flow solution."""
    w0 = spec.omega0
    x = np.zeros(sys.n)
    for b in spec.buses:
        for p, node in enumerate(sys.bus_nodes[b.id]):
            x[node] = _phasor_at(pf.phase_v[b.id][p], w0, t0)
    for br, off in zip(spec.branches, sys.branch_off):
        z = complex(br.r, br.x)
        for p in range(3):
            i = (pf.phase_v[br.from_bus][p] / br.ratio - pf.phase_v[br.to_bus][p]) / z
            x[off + p] = _phasor_at(i, w0, t0)

    efd, tm = np.zeros(len(spec.generators)), np.zeros(len(spec.generators))
    for gi, (g, off) in enumerate(zip(spec.generators, sys.gen_off)):
        v1 = sequence_components(*pf.phase_v[g.bus])[1]
        i1 = sequence_components(*pf.phase_i[g.id])[1]
        # rotor-frame quantities are constant in steady state, so t0 does not enter
        x[off:off + 9], efd[gi], tm[gi] = init_sync_machine(g, v1, v1 * np.conj(i1), w0)
    tl = np.zeros(len(spec.motors))
    for mi, (m, off) in enumerate(zip(spec.motors, sys.motor_off)):
        v1 = sequence_components(*pf.phase_v[m.bus])[1]
        x[off:off + 6], _, tl[mi] = init_induction_machine(m, v1, spec.condition_for(m.id).p)

    load_r = sys.load_r.copy()
    load_x = sys.load_x.copy()
    for li, ld in enumerate(spec.loads):
        st = load_structure(spec, ld)
        vph = pf.phase_v[ld.bus]
        if st.solved:
            shares = _load_phase_powers(spec, ld, vph)
            if st.shared:
                v1 = sequence_components(*vph)[1]
                r, xx = init_load(shares.sum() / 3.0, v1)
                load_r[li], load_x[li] = r, (xx if st.has_x[0] else 0.0)
            else:
                for p in range(3):
                    r, xx = init_load(shares[p], vph[p])
                    load_r[li, p] = r
                    load_x[li, p] = xx if st.has_x[p] else 0.0
        for p in range(3):
            idx = sys.load_idx[li][p]
            if idx >= 0:
                i = vph[p] / complex(load_r[li, p], load_x[li, p])
                x[idx] = _phasor_at(i, w0, t0)
    return SystemState(x, load_r, load_x, efd, tm, tl, t0)


def assemble_X0(spec: SystemSpec, pf: PowerFlowSolution, sys: System | None = None,
                layout=None) -> tuple[np.ndarray, dict[str, float]]:
    """Initial unknown vector and the pinned values of the drifting states."""
    from .emt.system import build_system
    from .shooting import build_layout, pack

    sys = sys if sys is not None else build_system(spec)
    layout = layout if layout is not None else build_layout(spec)
    if sys.n != layout.n_states:
        raise ValueError("system state dimension does not match the layout")
    X0 = pack(initial_state(spec, sys, pf), layout, spec)
    pins = {layout.state_names[i]: float(X0[i]) for i in layout.initial_value}
    return X0, pins
