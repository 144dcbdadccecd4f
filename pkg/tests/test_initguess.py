"""Power flow and conventional device initialization."""

import math

import numpy as np
import pytest
from scipy.optimize import fsolve

from emtinit.emt import build_system
from emtinit.emt.machines import InductionMachine, SyncMachine
from emtinit.initguess import (PullOutError, assemble_X0, init_induction_machine, init_load,
                               init_sync_machine, initial_state, motor_power, motor_slip,
                               power_flow)
from emtinit.netlist import parse_system, serialize_system
from emtinit.phasor import balanced_set, sequence_components
from emtinit.shooting import ShootingProblem

W0 = 2 * math.pi * 60

# Published balanced WSCC 9-bus solution (|V| p.u., angle in degrees)
PUBLISHED = {"1": (1.040, 0.0), "2": (1.025, 9.2800), "3": (1.025, 4.6648),
             "4": (1.0258, -2.2168), "5": (0.9956, -3.9888), "6": (1.0127, -3.6874),
             "7": (1.0258, 3.7197), "8": (1.0159, 0.7275), "9": (1.0324, 1.9667)}


def oracle_ybus(spec):
    ids = [b.id for b in spec.buses]
    Y = np.zeros((len(ids), len(ids)), dtype=complex)
    for b in spec.buses:
        i = ids.index(b.id)
        Y[i, i] += 1j * b.shunt_b
    for br in spec.branches:
        f, t = ids.index(br.from_bus), ids.index(br.to_bus)
        y = 1 / (br.r + 1j * br.x)
        Y[np.ix_([f, t], [f, t])] += np.array([[y / br.ratio ** 2, -y / br.ratio],
                                               [-y / br.ratio, y]]) + 0.5j * br.b * np.eye(2)
    return ids, Y


def oracle_power_flow(spec):
    """Rectangular-coordinate power flow with motor slips as extra unknowns."""
    ids, Y = oracle_ybus(spec)
    n = len(ids)
    cond = {c.device: c for c in spec.conditions}
    slack = next(ids.index(g.bus) for g in spec.generators if cond[g.id].kind == "VTHETA")
    vs = cond[next(g.id for g in spec.generators if ids.index(g.bus) == slack)]
    others = [i for i in range(n) if i != slack]
    motors = list(spec.motors)

    def zin(m, s):
        zr = m.rr / s + 1j * m.xlr
        return m.rs + 1j * m.xls + 1j * m.xm * zr / (1j * m.xm + zr)

    def unpack(z):
        v = np.empty(n, dtype=complex)
        v[slack] = vs.v * np.exp(1j * vs.theta)
        v[others] = z[:n - 1] + 1j * z[n - 1:2 * n - 2]
        return v, z[2 * n - 2:]

    def res(z):
        v, slips = unpack(z)
        s_inj = v * np.conj(Y @ v)
        target = np.zeros(n, dtype=complex)
        vfix = {}
        for ld in spec.loads:
            target[ids.index(ld.bus)] -= ld.s_total
        out = []
        for m, s in zip(motors, slips):
            i = ids.index(m.bus)
            sm = abs(v[i]) ** 2 / np.conj(zin(m, s))
            target[i] -= sm
            out.append(sm.real - cond[m.id].p)
        for g in spec.generators:
            c = cond[g.id]
            if c.kind == "PV":
                target[ids.index(g.bus)] += c.p
                vfix[ids.index(g.bus)] = c.v
        mis = target - s_inj
        for i in others:
            out.append(mis[i].real)
            out.append(abs(v[i]) - vfix[i] if i in vfix else mis[i].imag)
        return np.array(out)

    z0 = np.concatenate([np.ones(n - 1), np.zeros(n - 1), 0.01 * np.ones(len(motors))])
    z, info, ok, msg = fsolve(res, z0, xtol=1e-13, full_output=True)
    assert ok == 1, msg
    v, slips = unpack(z)
    return {b: v[i] for i, b in enumerate(ids)}, dict(zip([m.id for m in motors], slips))


def classic_nine_bus(spec9):
    text = serialize_system(spec9.with_unbalance(0.0)).splitlines()
    out = []
    for line in text:
        if line.startswith("M5 MOTORP"):
            line = "L5 PQ positive-sequence"
        elif line.startswith("M5 "):
            continue
        if line.startswith("L6 6 "):
            out.append("L5 5 1.25 0.5 0.0")
        out.append(line)
    return parse_system("\n".join(out).replace("L6 PQ per-phase", "L6 PQ positive-sequence")
                        .replace("L8 PQ per-phase", "L8 PQ positive-sequence"))


def test_two_bus_hand_case():
    text = """
[BUS]
1 20 0.1
2 20 0.1
[BRANCH]
X12 line 1 2 0.02 0.2 0.0
[GEN]
G1 1 100 0.002 0.0787 1.575 1.512 0.291 0.39 0.1733 0.1733 6.1 1.0 0.05 0.15 4.0 0.1
[LOAD]
L2 2 0.8 0.3
[PFCOND]
G1 VTHETA 1.0 0
L2 PQ positive-sequence
"""
    spec = parse_system(text)
    pf = power_flow(spec, refine=False)
    v2 = pf.v["2"]
    # KCL at bus 2 by hand: (1 - V2)/Z = j0.05 V2 + conj(S/V2)
    z = 0.02 + 0.2j
    assert abs((1 - v2) / z - 0.1j * v2 - np.conj((0.8 + 0.3j) / v2)) < 1e-9
    s_gen = 1.0 * np.conj((1 - v2) / z + 0.1j)
    assert abs(pf.slack - s_gen) < 1e-9


def test_nine_bus_against_independent_oracle(spec9):
    pf = power_flow(spec9, refine=False)
    v_ref, slips = oracle_power_flow(spec9)
    for b, v in v_ref.items():
        assert abs(pf.v[b] - v) < 1e-8
    assert pf.motor_slip["M5"] == pytest.approx(slips["M5"], abs=1e-9)


def test_classic_nine_bus_matches_published_voltages(spec9):
    pf = power_flow(classic_nine_bus(spec9), refine=False)
    for b, (vm, va) in PUBLISHED.items():
        assert abs(pf.v[b]) == pytest.approx(vm, abs=1e-4)
        assert math.degrees(np.angle(pf.v[b])) == pytest.approx(va, abs=1e-3)
    assert pf.slack.real == pytest.approx(0.7164, abs=1e-4)


def test_refinement_keeps_balanced_case_balanced(spec9_balanced):
    a = power_flow(spec9_balanced, refine=False)
    b = power_flow(spec9_balanced, refine=True)
    for bus in a.v:
        assert np.max(np.abs(a.phase_v[bus] - b.phase_v[bus])) < 1e-9


def test_refinement_introduces_negative_sequence(spec9):
    pf = power_flow(spec9, refine=True)
    v2 = sequence_components(*pf.phase_v["6"])[2]
    assert 1e-3 < abs(v2) < 0.05


def test_motor_slip_solves_power(spec9):
    m = spec9.motors[0]
    s = motor_slip(m, 0.97, 1.25)
    assert motor_power(m, 0.97, s).real == pytest.approx(1.25, abs=1e-12)
    assert 0 < s < 0.05
    with pytest.raises(PullOutError):
        motor_slip(m, 0.97, 50.0)


def test_load_impedance_draws_target():
    v = 0.98 * np.exp(0.2j)
    r, x = init_load(0.3 + 0.1j, v)
    s = v * np.conj(v / complex(r, x))
    assert s / 3 == pytest.approx(0.3 + 0.1j, abs=1e-14)


def test_sync_machine_initialization_is_stationary(spec9):
    for g in spec9.generators:
        mach = SyncMachine(g, W0)
        v1, s = 1.02 * np.exp(0.15j), 1.4 + 0.3j
        states, efd, tm = init_sync_machine(g, v1, s, W0)
        for t in (0.0, 0.0037):
            v = np.sqrt(2) * np.real(balanced_set(v1) * np.exp(1j * W0 * t))
            ds, inj = mach.rhs(states, v, t, efd, tm)
            assert np.max(np.abs(ds)) < 1e-8
            i_expect = np.sqrt(2) * np.real(balanced_set(np.conj(s / v1)) * np.exp(1j * W0 * t))
            assert np.max(np.abs(inj - i_expect)) < 1e-10


def test_induction_machine_initialization_is_stationary(spec9):
    m = spec9.motors[0]
    mach = InductionMachine(m, W0)
    v1 = 0.97 * np.exp(-0.07j)
    states, slip, tl = init_induction_machine(m, v1, 1.25)
    for t in (0.0, 0.0051):
        v = np.sqrt(2) * np.real(balanced_set(v1) * np.exp(1j * W0 * t))
        ds, inj = mach.rhs(states, v, t, tl)
        assert np.max(np.abs(ds[:5])) < 1e-8
        p = -v @ inj / 3
        assert p == pytest.approx(1.25, abs=1e-9)


def test_initial_state_is_quasi_stationary(spec9_balanced):
    spec = spec9_balanced
    sys = build_system(spec)
    st = initial_state(spec, sys, power_flow(spec))
    sys.apply_state(st)
    f = sys.rhs(st.x, 0.0)
    gen_rows = [o + j for o in sys.gen_off for j in range(9)]
    assert np.max(np.abs(f[gen_rows])) < 1e-6


def test_guess_residual_is_small(spec9, spec9_balanced):
    for spec, bound in ((spec9, 0.35), (spec9_balanced, 1e-6)):
        problem = ShootingProblem(spec)
        pf = power_flow(spec)
        problem.set_template_parameters(initial_state(spec, problem.template, pf))
        X0, pins = assemble_X0(spec, pf, problem.template, problem.layout)
        problem.layout.pins = pins
        assert problem.evaluate(X0).norm < bound
        assert pins == {"M5.theta_r": 0.0}


def test_powerflow_csv(tmp_path, spec9):
    pf = power_flow(spec9)
    path = tmp_path / "pf.csv"
    pf.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "bus,Vmag,Vang" and len(lines) == 10
