"""Shooting formulation: unknown vector layout and the residual F(X).

X stacks the initial value of every dynamic state, the dependent load
parameters and the constant external inputs.  F(X) runs one nominal period
from X and returns, in order, the periodicity defects of the periodic
states, the pinning residuals of the drifting states, and the power-flow
residuals computed from fundamental-frequency phasors of the recorded
terminal waveforms.
"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .emt.integrate import StepFailure
from .emt.system import PHASES, System, SystemState, TrajectoryRecord, build_system, \
    load_structure, run_period, state_names
from .netlist import PFCondition, SystemSpec, allocate_load, equation_balance
from .phasor import device_power, fit_phasor, sequence_components, zip_target
from .solver import EvaluationError

PERIODIC = "PERIODIC"
INITIAL_VALUE = "INITIAL_VALUE"


class LayoutError(ValueError):
    pass


@dataclass
class UnknownLayout:
    """Ordered map between the solver vector and the system quantities."""

    state_names: list[str]
    tags: list[str]
    param_names: list[str]
    input_names: list[str]
    pins: dict[str, float] = field(default_factory=dict)
    # (load index, phase or None for all phases, "R" | "X") per parameter
    param_slots: list[tuple[int, int | None, str]] = field(default_factory=list)
    n_pf: int = 0

    @property
    def names(self) -> list[str]:
        return self.state_names + self.param_names + self.input_names

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def m(self) -> int:
        return len(self.state_names) + len(self.param_names) + len(self.input_names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def periodic(self) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.tags) if t == PERIODIC], dtype=int)

    @property
    def initial_value(self) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.tags) if t == INITIAL_VALUE], dtype=int)


def build_layout(spec: SystemSpec) -> UnknownLayout:
    """Unknown layout of ``spec``: states in device order, then parameters, then inputs."""
    names = state_names(spec)
    tags = [INITIAL_VALUE if n.endswith(".theta_r") else PERIODIC for n in names]
    params, slots = [], []
    for li, ld in enumerate(spec.loads):
        st = load_structure(spec, ld)
        if not st.solved:
            continue
        if st.shared:
            params.append(f"{ld.id}.R")
            slots.append((li, None, "R"))
            if st.has_x[0]:
                params.append(f"{ld.id}.X")
                slots.append((li, None, "X"))
        else:
            for p, ph in enumerate(PHASES):
                params.append(f"{ld.id}.R.{ph}")
                slots.append((li, p, "R"))
                if st.has_x[p]:
                    params.append(f"{ld.id}.X.{ph}")
                    slots.append((li, p, "X"))
    inputs = []
    for g in spec.generators:
        inputs += [f"{g.id}.Efd", f"{g.id}.Tm"]
    for m in spec.motors:
        inputs.append(f"{m.id}.TL")
    n_res, n_free = equation_balance(spec)
    if n_res != len(params) + len(inputs) or n_res != n_free:
        unmatched = [c.device for c in spec.conditions]
        raise LayoutError(f"equation balance violated: {n_res} power-flow residuals "
                          f"vs {len(params) + len(inputs)} parameters and inputs "
                          f"(conditions on {', '.join(unmatched)})")
    return UnknownLayout(names, tags, params, inputs, param_slots=slots, n_pf=n_res)


def pack(state: SystemState, layout: UnknownLayout, spec: SystemSpec) -> np.ndarray:
    """Solver vector of a system state."""
    X = np.empty(layout.m)
    ns = layout.n_states
    X[:ns] = state.x
    for j, (li, p, kind) in enumerate(layout.param_slots):
        arr = state.load_r if kind == "R" else state.load_x
        X[ns + j] = arr[li, 0 if p is None else p]
    off = ns + len(layout.param_slots)
    for gi in range(len(spec.generators)):
        X[off + 2 * gi] = state.efd[gi]
        X[off + 2 * gi + 1] = state.tm[gi]
    off += 2 * len(spec.generators)
    X[off:off + len(spec.motors)] = state.tl
    return X


def unpack(X: np.ndarray, layout: UnknownLayout, template: System) -> SystemState:
    """System state described by ``X`` (parameters not in X keep the template's values)."""
    X = np.asarray(X, dtype=float)
    if X.shape != (layout.m,):
        raise LayoutError(f"unknown vector has shape {X.shape}, layout needs ({layout.m},)")
    ns = layout.n_states
    load_r, load_x = template.load_r.copy(), template.load_x.copy()
    for j, (li, p, kind) in enumerate(layout.param_slots):
        arr = load_r if kind == "R" else load_x
        if p is None:
            arr[li, :] = X[ns + j]
        else:
            arr[li, p] = X[ns + j]
    off = ns + len(layout.param_slots)
    ng = len(template.gens)
    efd = X[off:off + 2 * ng:2].copy()
    tm = X[off + 1:off + 2 * ng:2].copy()
    tl = X[off + 2 * ng:].copy()
    return SystemState(X[:ns].copy(), load_r, load_x, efd, tm, tl, template.t)


def apply_unknowns(sys: System, X: np.ndarray, layout: UnknownLayout) -> SystemState:
    """Write ``X`` into ``sys`` (initial state, parameters, inputs) and return the start state."""
    state = unpack(X, layout, sys)
    sys.apply_state(state)
    return state


# ---------------------------------------------------------------- residuals

def _phasors(traj: TrajectoryRecord, device: str, quantity: str, omega0: float) -> np.ndarray:
    return np.array([fit_phasor(traj.wave(device, quantity, p), omega0) for p in range(3)])


def condition_residuals(cond: PFCondition, v: np.ndarray, i: np.ndarray,
                        load=None) -> list[float]:
    """Power-flow residuals (target minus measured) from phase phasors ``v``, ``i``."""
    v1 = sequence_components(*v)[1]
    i1 = sequence_components(*i)[1]
    if cond.kind == "VTHETA":
        return [cond.v * math.cos(cond.theta) - v1.real, cond.v * math.sin(cond.theta) - v1.imag]
    if cond.kind == "PV":
        return [cond.p - device_power(v1, i1).real, cond.v - abs(v1)]
    if cond.kind == "MOTORP":
        return [cond.p - device_power(v1, i1).real]
    if cond.scope == "positive-sequence":
        s = device_power(v1, i1)
        p, q = zip_target(abs(v1), cond.zip, cond.p, cond.q)
        out = [p - s.real]
        if load is None or cond.q != 0.0:
            out.append(q - s.imag)
        return out
    out = []
    shares = allocate_load(complex(cond.p, cond.q), load.alloc_k)
    for share, vx, ix in zip(shares, v, i):
        s = device_power(vx, ix, "per-phase")
        p, q = zip_target(abs(vx), cond.zip, share.real, share.imag)
        out.append(p - s.real)
        if share.imag != 0.0:
            out.append(q - s.imag)
    return out


def pf_residuals(traj: TrajectoryRecord, spec: SystemSpec) -> np.ndarray:
    """Power-flow residuals of every condition of ``spec``, in condition order."""
    out = []
    for cond in spec.conditions:
        if cond.device not in traj.waves:
            raise KeyError(f"condition references unrecorded device {cond.device!r}")
        v = _phasors(traj, cond.device, "v", spec.omega0)
        i = _phasors(traj, cond.device, "i", spec.omega0)
        dev = spec.device(cond.device)
        load = dev if dev in spec.loads else None
        out += condition_residuals(cond, v, i, load)
    return np.array(out)


@dataclass
class ResidualReport:
    values: np.ndarray
    norm: float
    periodic_norm: float
    initial_value_norm: float
    power_flow_norm: float
    evaluations: int = 1
    trajectory: TrajectoryRecord | None = None

    @property
    def category_norms(self) -> dict[str, float]:
        return {"periodicity": self.periodic_norm, "initial-value": self.initial_value_norm,
                "power-flow": self.power_flow_norm}


class ShootingProblem:
    """F(X) for one system: template, layout and pinned initial values.

    Each evaluation works on a private copy of the template, so calls at
    different X may run concurrently; only the evaluation counter is shared.
    """

    def __init__(self, spec: SystemSpec, h: float | None = None,
                 pins: dict[str, float] | None = None):
        self.spec = spec
        self.template = build_system(spec, h)
        self.layout = build_layout(spec)
        if self.template.n != self.layout.n_states:
            raise LayoutError("system state dimension does not match the layout")
        if pins is not None:
            self.layout.pins = dict(pins)
        self._count = 0
        self._lock = threading.Lock()

    @property
    def evaluations(self) -> int:
        return self._count

    def set_template_parameters(self, state: SystemState) -> None:
        """Parameters that are not unknowns (e.g. fixed loads) are taken from ``state``."""
        self.template.set_parameters(state.load_r, state.load_x, state.efd, state.tm, state.tl)

    def evaluate(self, X: np.ndarray, keep_trajectory: bool = False) -> ResidualReport:
        lay = self.layout
        work = self.template.copy()
        start = apply_unknowns(work, X, lay)
        with self._lock:
            self._count += 1
        try:
            traj = run_period(work, start)
        except StepFailure as exc:
            raise EvaluationError(f"transient run failed: {exc}") from None
        per = lay.periodic
        ivs = lay.initial_value
        r_per = traj.end_state.x[per] - traj.start_state.x[per]
        pins = np.array([lay.pins.get(lay.state_names[i], 0.0) for i in ivs])
        r_iv = pins - traj.start_state.x[ivs]
        r_pf = pf_residuals(traj, self.spec)
        values = np.concatenate([r_per, r_iv, r_pf])
        if not np.all(np.isfinite(values)):
            raise EvaluationError("non-finite residual")
        return ResidualReport(values, float(np.linalg.norm(values)),
                              float(np.linalg.norm(r_per)), float(np.linalg.norm(r_iv)),
                              float(np.linalg.norm(r_pf)), 1,
                              traj if keep_trajectory else None)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.evaluate(X).values

    def state(self, X: np.ndarray) -> SystemState:
        return unpack(X, self.layout, self.template)

    def write_solution(self, X: np.ndarray, path) -> None:
        """Write ``name,value`` rows for every unknown."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "value"])
            for name, val in zip(self.layout.names, X):
                w.writerow([name, repr(float(val))])


def read_solution(path, layout: UnknownLayout) -> np.ndarray:
    """Inverse of :meth:`ShootingProblem.write_solution`."""
    values = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            values[row["name"]] = float(row["value"])
    missing = [n for n in layout.names if n not in values]
    if missing:
        raise LayoutError(f"solution file lacks {len(missing)} unknowns, e.g. {missing[0]}")
    return np.array([values[n] for n in layout.names])


def evaluate_F(X: np.ndarray, problem: ShootingProblem) -> ResidualReport:
    return problem.evaluate(X)
