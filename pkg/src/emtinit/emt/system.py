"""Phase-domain network assembly and time stepping.

Every bus is a three-phase node set with a capacitance to ground (bus shunt
plus half the charging of each attached line), so node voltages are states
and KCL enters through ``C dv/dt = sum of injections``.  Branches and static
loads are uncoupled per-phase series R-L elements; transformers carry an
ideal off-nominal ratio on their from side.  Machines connect through their
dq0 transforms and are solved simultaneously with the network.

Inductances and capacitances of the network are pre-warped by
``(w0 h/2) / tan(w0 h/2)`` so the trapezoidal rule reproduces their
fundamental-frequency impedance exactly at any step size.  Machine equations
live in rotor-synchronous frames, where positive-sequence operation is
constant and negative-sequence operation oscillates at twice the
fundamental; their time derivatives are pre-warped at that frequency, which
leaves constant solutions untouched.  Rotor angles that drift (induction
machines) are not scaled.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ..netlist import SystemSpec, allocate_load
from ..phasor import WaveRecord
from .integrate import StepFailure, discontinuity_step, integrate, trapezoidal_step
from .machines import InductionMachine, SyncMachine

PHASES = "abc"


def prewarp_factor(omega0: float, h: float) -> float:
    half = 0.5 * omega0 * h
    return half / math.tan(half)


@dataclass(frozen=True)
class LoadStructure:
    """Which per-phase elements of a load exist and how they are parameterized.

    ``has_x[p]`` says whether phase ``p`` has a series inductance (and hence a
    current state).  ``solved`` loads carry a power-flow condition and have
    their R/X determined by the initialization; ``shared`` loads use one R/X
    pair for all three phases.
    """

    has_x: tuple[bool, bool, bool]
    solved: bool
    shared: bool


def load_structure(spec: SystemSpec, load) -> LoadStructure:
    cond = spec.condition_for(load.id)
    solved = cond is not None and cond.kind == "PQ"
    if solved and cond.scope == "positive-sequence":
        hx = cond.q != 0.0
        return LoadStructure((hx, hx, hx), True, True)
    p = cond.p if solved else load.s_total.real
    q = cond.q if solved else load.s_total.imag
    shares = allocate_load(complex(p, q), load.alloc_k)
    return LoadStructure(tuple(s.imag != 0.0 for s in shares), solved, False)


def state_names(spec: SystemSpec) -> list[str]:
    """Dynamic state names in assembly order."""
    names = []
    for b in spec.buses:
        names += [f"bus{b.id}.v.{p}" for p in PHASES]
    for br in spec.branches:
        names += [f"{br.id}.i.{p}" for p in PHASES]
    for g in spec.generators:
        names += [f"{g.id}.{s}" for s in SyncMachine.STATES]
    for m in spec.motors:
        names += [f"{m.id}.{s}" for s in InductionMachine.STATES]
    for ld in spec.loads:
        st = load_structure(spec, ld)
        names += [f"{ld.id}.i.{p}" for p, hx in zip(PHASES, st.has_x) if hx]
    return names


@dataclass
class SystemState:
    """Initial state plus the operating-point dependent quantities."""

    x: np.ndarray
    load_r: np.ndarray
    load_x: np.ndarray
    efd: np.ndarray
    tm: np.ndarray
    tl: np.ndarray
    t: float = 0.0

    def copy(self) -> "SystemState":
        return SystemState(self.x.copy(), self.load_r.copy(), self.load_x.copy(),
                           self.efd.copy(), self.tm.copy(), self.tl.copy(), self.t)


@dataclass
class DeviceWaves:
    v: np.ndarray  # (3, n_samples) terminal phase voltages
    i: np.ndarray  # (3, n_samples) device current (generation for gens, consumption otherwise)


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    states: np.ndarray
    h: float
    period: float
    waves: dict[str, DeviceWaves]
    start_state: SystemState
    end_state: SystemState
    state_names: list[str] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def t0(self) -> float:
        return float(self.times[0])

    def wave(self, device: str, quantity: str, phase: int) -> WaveRecord:
        """Full record of ``quantity`` ('v' or 'i') of ``device``, one phase."""
        arr = getattr(self.waves[device], quantity)
        return WaveRecord(arr[phase].copy(), self.h, self.t0)

    def state_wave(self, name: str) -> WaveRecord:
        idx = self.state_names.index(name)
        return WaveRecord(self.states[:, idx].copy(), self.h, self.t0)

    def write_csv(self, path, columns: list[tuple[str, str, int]] | None = None,
                  states: list[str] | None = None) -> None:
        """Waveform CSV with header ``t,<device>.<quantity>.<phase>``."""
        if columns is None:
            columns = [(d, q, p) for d in self.waves for q in "vi" for p in range(3)]
        states = states or []
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"{d}.{q}.{PHASES[p]}" for d, q, p in columns] + states)
            sidx = [self.state_names.index(s) for s in states]
            for n, t in enumerate(self.times):
                row = [repr(float(t))]
                row += [repr(float(getattr(self.waves[d], q)[p, n])) for d, q, p in columns]
                row += [repr(float(self.states[n, j])) for j in sidx]
                w.writerow(row)


class System:
    """Assembled three-phase system, usable as a DAE model by the integrators."""

    def __init__(self, spec: SystemSpec, h: float, prewarp: bool = True,
                 free_run: bool = False):
        period = spec.period
        n_per = period / h
        if not free_run and abs(n_per - round(n_per)) > 1e-9 * n_per:
            raise ValueError(f"step {h} does not divide the period {period} into whole steps")
        self.spec = spec
        self.h = float(h)
        self.steps_per_period = int(round(n_per)) if not free_run else n_per
        self.omega0 = spec.omega0
        self.kappa = prewarp_factor(self.omega0, h) if prewarp else 1.0
        self.kappa2 = prewarp_factor(2 * self.omega0, h) if prewarp else 1.0
        self.names = state_names(spec)
        self.n = len(self.names)
        self.diff_mask = np.ones(self.n, dtype=bool)
        self.index = {name: i for i, name in enumerate(self.names)}

        bidx = spec.bus_index()
        self.bus_nodes = {b.id: np.arange(3 * i, 3 * i + 3) for i, b in enumerate(spec.buses)}
        node_b = np.array([b.shunt_b for b in spec.buses], dtype=float)
        for br in spec.branches:
            node_b[bidx[br.from_bus]] += br.b / 2
            node_b[bidx[br.to_bus]] += br.b / 2
        self.node_b = np.repeat(node_b, 3)
        self.cap_scale = self.omega0 / (self.node_b * self.kappa)

        self.branch_off = [self.index[f"{br.id}.i.a"] for br in spec.branches]
        self.gens = [SyncMachine(g, self.omega0) for g in spec.generators]
        self.gen_off = [self.index[f"{g.id}.psi_d"] for g in spec.generators]
        self.gen_nodes = [self.bus_nodes[g.bus] for g in spec.generators]
        self.motors = [InductionMachine(m, self.omega0) for m in spec.motors]
        self.motor_off = [self.index[f"{m.id}.psi_ds"] for m in spec.motors]
        self.motor_nodes = [self.bus_nodes[m.bus] for m in spec.motors]
        gen_rate = np.full(9, 1.0 / self.kappa2)
        mot_rate = np.full(6, 1.0 / self.kappa2)
        mot_rate[5] = 1.0
        self.rates = [gen_rate] * len(self.gens) + [mot_rate] * len(self.motors)
        self.load_struct = [load_structure(spec, ld) for ld in spec.loads]
        self.load_nodes = [self.bus_nodes[ld.bus] for ld in spec.loads]
        self.load_idx = [[self.index.get(f"{ld.id}.i.{p}", -1) for p in PHASES]
                         for ld in spec.loads]

        # nominal-voltage impedances; solved loads get theirs from the unknowns
        nl = len(spec.loads)
        self.load_r = np.ones((nl, 3))
        self.load_x = np.zeros((nl, 3))
        for li, ld in enumerate(spec.loads):
            shares = allocate_load(3.0 * ld.s_total, ld.alloc_k)
            for p, (sp, hx) in enumerate(zip(shares, self.load_struct[li].has_x)):
                z = 1.0 / np.conj(sp)
                self.load_r[li, p] = z.real
                self.load_x[li, p] = z.imag if hx else 0.0
        self.efd = np.ones(len(self.gens))
        self.tm = np.zeros(len(self.gens))
        self.tl = np.zeros(len(self.motors))
        self._build_linear()

        self.x = np.zeros(self.n)
        self.t = 0.0
        self.step_count = 0
        self._f = None
        self._x_prev = None

    # ------------------------------------------------------------ assembly

    def copy(self) -> "System":
        new = copy.copy(self)
        for name in ("load_r", "load_x", "efd", "tm", "tl", "A", "x"):
            setattr(new, name, getattr(self, name).copy())
        new._f = None
        new._x_prev = None
        return new

    def set_parameters(self, load_r=None, load_x=None, efd=None, tm=None, tl=None) -> None:
        if load_r is not None:
            self.load_r = np.array(load_r, dtype=float).reshape(-1, 3)
        if load_x is not None:
            lx = np.array(load_x, dtype=float).reshape(-1, 3)
            for st, row in zip(self.load_struct, lx):
                for p in range(3):
                    if not st.has_x[p] and row[p] != 0.0:
                        raise ValueError("series reactance given for an R-only load phase")
            self.load_x = lx
        if efd is not None:
            self.efd = np.array(efd, dtype=float)
        if tm is not None:
            self.tm = np.array(tm, dtype=float)
        if tl is not None:
            self.tl = np.array(tl, dtype=float)
        if load_r is not None or load_x is not None:
            self._build_linear()

    def apply_state(self, state: SystemState) -> None:
        self.set_parameters(state.load_r, state.load_x, state.efd, state.tm, state.tl)
        self.x = np.array(state.x, dtype=float)
        self.t = float(state.t)
        self.step_count = 0
        self._f = None
        self._x_prev = None

    def current_state(self) -> SystemState:
        return SystemState(self.x.copy(), self.load_r.copy(), self.load_x.copy(),
                           self.efd.copy(), self.tm.copy(), self.tl.copy(), self.t)

    def _build_linear(self) -> None:
        spec, wb, kap = self.spec, self.omega0, self.kappa
        A = np.zeros((self.n, self.n))
        cs = self.cap_scale
        for br, off in zip(spec.branches, self.branch_off):
            nf, nt = self.bus_nodes[br.from_bus], self.bus_nodes[br.to_bus]
            k = wb / (br.x * kap)
            for p in range(3):
                i = off + p
                A[i, nf[p]] += k / br.ratio
                A[i, nt[p]] -= k
                A[i, i] -= k * br.r
                A[nf[p], i] -= cs[nf[p]] / br.ratio
                A[nt[p], i] += cs[nt[p]]
        for li, nodes in enumerate(self.load_nodes):
            for p in range(3):
                node, idx = nodes[p], self.load_idx[li][p]
                r, x = self.load_r[li, p], self.load_x[li, p]
                if idx >= 0:
                    k = wb / (x * kap)
                    A[idx, node] += k
                    A[idx, idx] -= k * r
                    A[node, idx] -= cs[node]
                else:
                    A[node, node] -= cs[node] / r
        self.A = A

    # ------------------------------------------------------------ model

    def rhs(self, x: np.ndarray, t: float) -> np.ndarray:
        f = self.A @ x
        cs = self.cap_scale
        for m, off, nodes, efd, tm in zip(self.gens, self.gen_off, self.gen_nodes,
                                          self.efd, self.tm):
            ds, inj = m.rhs(x[off:off + 9], x[nodes], t, efd, tm)
            f[off:off + 9] = ds / self.kappa2
            f[nodes] += cs[nodes] * inj
        for m, off, nodes, tl in zip(self.motors, self.motor_off, self.motor_nodes, self.tl):
            ds, inj = m.rhs(x[off:off + 6], x[nodes], t, tl)
            f[off:off + 6] = ds * self.rates[-1]
            f[nodes] += cs[nodes] * inj
        return f

    def jac(self, x: np.ndarray, t: float) -> np.ndarray:
        J = self.A.copy()
        cs = self.cap_scale
        for (m, off, nodes, width), rate in zip(self._machine_slots(), self.rates):
            sl = slice(off, off + width)
            Js, Jv, Ji, Jiv = m.jac(x[sl], x[nodes], t)
            J[sl, sl] = rate[:, None] * Js
            J[sl, nodes] = rate[:, None] * Jv
            J[nodes, sl] += cs[nodes, None] * Ji
            J[np.ix_(nodes, nodes)] += cs[nodes, None] * Jiv
        return J

    def _machine_slots(self):
        for m, off, nodes in zip(self.gens, self.gen_off, self.gen_nodes):
            yield m, off, nodes, 9
        for m, off, nodes in zip(self.motors, self.motor_off, self.motor_nodes):
            yield m, off, nodes, 6

    # ------------------------------------------------------------ stepping

    def step(self) -> None:
        """Advance the current state by one trapezoidal step."""
        if self._f is None:
            self._f = self.rhs(self.x, self.t)
        guess = 2 * self.x - self._x_prev if self._x_prev is not None else None
        t_next = (self.step_count + 1) * self.h + (self.t - self.step_count * self.h)
        try:
            x_new = trapezoidal_step(self, self.x, self._f, self.t, self.h, guess)
        except StepFailure as exc:
            raise StepFailure(str(exc), self.step_count + 1) from None
        self._x_prev = self.x
        self.x = x_new
        self.step_count += 1
        self.t = t_next
        self._f = self.rhs(self.x, self.t)

    def handle_first_step_discontinuity(self) -> None:
        """Take the next step as two backward-Euler half steps."""
        try:
            x_new = discontinuity_step(self, self.x, self.t, self.h)
        except StepFailure as exc:
            raise StepFailure(str(exc), self.step_count + 1) from None
        self._x_prev = None
        self.x = x_new
        self.step_count += 1
        self.t = self.t + self.h
        self._f = self.rhs(self.x, self.t)

    # ------------------------------------------------------------ outputs

    def device_waves(self, states: np.ndarray, times: np.ndarray,
                     devices: set[str] | None = None) -> dict[str, DeviceWaves]:
        out = {}
        for m, off, nodes, width in self._machine_slots():
            if devices is not None and m.id not in devices:
                continue
            v = states[:, nodes].T.copy()
            i = np.empty_like(v)
            for n, t in enumerate(times):
                s = states[n, off:off + width]
                if width == 9:
                    _, inj = m.rhs(s, v[:, n], t, 1.0, 0.0)
                    i[:, n] = inj
                else:
                    _, inj = m.rhs(s, v[:, n], t, 0.0)
                    i[:, n] = -inj
            out[m.id] = DeviceWaves(v, i)
        for li, ld in enumerate(self.spec.loads):
            if devices is not None and ld.id not in devices:
                continue
            nodes = self.load_nodes[li]
            v = states[:, nodes].T.copy()
            i = np.empty_like(v)
            for p in range(3):
                idx = self.load_idx[li][p]
                i[p] = states[:, idx] if idx >= 0 else v[p] / self.load_r[li, p]
            out[ld.id] = DeviceWaves(v, i)
        return out

    def power_balance(self, x: np.ndarray, t: float) -> dict[str, float]:
        """Instantaneous power bookkeeping (three-phase base).

        ``generated`` (machines in generator mode) must equal ``consumed``
        (motors and loads) plus ``network`` (branch losses and stored-energy
        rates of branch inductances and node capacitances).
        """
        f = self.rhs(x, t)
        gen = cons = net = 0.0
        for m, off, nodes, width in self._machine_slots():
            if width == 9:
                _, inj = m.rhs(x[off:off + 9], x[nodes], t, 1.0, 0.0)
                gen += x[nodes] @ inj / 3.0
            else:
                _, inj = m.rhs(x[off:off + 6], x[nodes], t, 0.0)
                cons -= x[nodes] @ inj / 3.0
        for li, nodes in enumerate(self.load_nodes):
            for p in range(3):
                idx = self.load_idx[li][p]
                v = x[nodes[p]]
                i = x[idx] if idx >= 0 else v / self.load_r[li, p]
                cons += v * i / 3.0
        for br, off in zip(self.spec.branches, self.branch_off):
            nf, nt = self.bus_nodes[br.from_bus], self.bus_nodes[br.to_bus]
            for p in range(3):
                net += (x[nf[p]] / br.ratio - x[nt[p]]) * x[off + p] / 3.0
        nv = 3 * len(self.spec.buses)
        net += np.sum(x[:nv] * f[:nv] / self.cap_scale) / 3.0
        return {"generated": gen, "consumed": cons, "network": net,
                "mismatch": gen - cons - net}


def build_system(spec: SystemSpec, h: float | None = None, prewarp: bool = True,
                 free_run: bool = False) -> System:
    """Assemble ``spec`` for step ``h`` (default: ``spec.steps_per_period`` steps per period)."""
    if h is None:
        h = spec.period / spec.steps_per_period
    return System(spec, h, prewarp=prewarp, free_run=free_run)


def run_period(sys: System, start: SystemState, discontinuity: bool | None = None,
               record: str = "conditioned", periods: int = 1) -> TrajectoryRecord:
    """Simulate whole nominal periods from ``start`` on a private copy of ``sys``.

    ``discontinuity=None`` applies the first-step treatment only when the
    model has algebraic rows; this network formulation has none, so every
    start state is consistent with KCL by construction.
    """
    n_steps = int(round(periods * sys.spec.period / sys.h))
    return simulate(sys, start, n_steps, discontinuity=discontinuity, record=record)


def simulate(sys: System, start: SystemState, n_steps: int,
             discontinuity: bool | None = None, record: str = "conditioned") -> TrajectoryRecord:
    """Free run of ``n_steps`` steps; ``sys`` itself is left untouched."""
    work = sys.copy()
    work.apply_state(start)
    if discontinuity is None:
        discontinuity = not bool(np.all(work.diff_mask))
    t0 = float(start.t)
    xs = integrate(work, work.x, t0, work.h, n_steps, discontinuity=discontinuity)
    times = t0 + work.h * np.arange(n_steps + 1)
    if record == "all":
        devices = None
    else:
        devices = {c.device for c in sys.spec.conditions}
    waves = work.device_waves(xs, times, devices)
    end = work.current_state()
    end.x = xs[-1].copy()
    end.t = float(times[-1])
    return TrajectoryRecord(times, xs, work.h, sys.spec.period, waves, start.copy(), end,
                            list(work.names))
