"""Unknown layout, pack/unpack and the shooting residual."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from emtinit.initguess import assemble_X0, initial_state, power_flow
from emtinit.netlist import PFCondition, ZipCoeffs
from emtinit.phasor import balanced_set
from emtinit.shooting import (INITIAL_VALUE, PERIODIC, LayoutError, ShootingProblem,
                              build_layout, condition_residuals, pack, read_solution, unpack)
from emtinit.solver import EvaluationError


@pytest.fixture(scope="module")
def problem(spec9):
    prob = ShootingProblem(spec9)
    pf = power_flow(spec9)
    prob.set_template_parameters(initial_state(spec9, prob.template, pf))
    X0, pins = assemble_X0(spec9, pf, prob.template, prob.layout)
    prob.layout.pins = pins
    return prob, X0


def test_layout_dimensions(spec9):
    lay = build_layout(spec9)
    assert lay.n_states == 93
    assert len(lay.param_names) == 12 and len(lay.input_names) == 7
    assert lay.m == 112 and lay.n_pf == 19
    assert lay.param_names[:2] == ["L6.R.a", "L6.X.a"]
    assert lay.input_names == ["G1.Efd", "G1.Tm", "G2.Efd", "G2.Tm", "G3.Efd", "G3.Tm", "M5.TL"]
    assert [lay.state_names[i] for i in lay.initial_value] == ["M5.theta_r"]
    assert lay.tags.count(PERIODIC) == 92 and lay.tags.count(INITIAL_VALUE) == 1


def test_residual_dimension_matches_unknowns(problem):
    prob, X0 = problem
    assert prob(X0).shape == (prob.layout.m,)


def test_pack_unpack_round_trip(problem, spec9):
    prob, X0 = problem
    st = unpack(X0, prob.layout, prob.template)
    assert np.array_equal(pack(st, prob.layout, spec9), X0)
    with pytest.raises(LayoutError):
        unpack(X0[:-1], prob.layout, prob.template)


def test_residual_is_deterministic(problem):
    prob, X0 = problem
    assert np.array_equal(prob(X0), prob(X0))


def test_concurrent_evaluations_agree(problem):
    prob, X0 = problem
    rng = np.random.default_rng(0)
    Xs = [X0 + 1e-4 * rng.normal(size=X0.size) for _ in range(4)]
    serial = [prob(X) for X in Xs]
    before = prob.evaluations
    with ThreadPoolExecutor(4) as pool:
        parallel = list(pool.map(prob, Xs))
    assert prob.evaluations == before + 4
    for a, b in zip(serial, parallel):
        assert np.array_equal(a, b)


def test_residual_categories(problem):
    prob, X0 = problem
    rep = prob.evaluate(X0, keep_trajectory=True)
    lay = prob.layout
    per = len(lay.periodic)
    assert rep.initial_value_norm == 0.0
    assert rep.periodic_norm == pytest.approx(np.linalg.norm(rep.values[:per]))
    assert rep.power_flow_norm == pytest.approx(np.linalg.norm(rep.values[-lay.n_pf:]))
    assert rep.trajectory.n_steps == 25
    X = X0.copy()
    X[lay.index("M5.theta_r")] += 0.3
    assert prob.evaluate(X).initial_value_norm == pytest.approx(0.3)


def test_pf_residuals_see_parameter_changes(problem):
    prob, X0 = problem
    X = X0.copy()
    X[prob.layout.index("L6.R.a")] *= 1.05
    r0, r1 = prob(X0), prob(X)
    assert np.linalg.norm(r1[-19:] - r0[-19:]) > 1e-3


def test_failed_run_raises_evaluation_error(problem):
    prob, X0 = problem
    X = X0.copy()
    X[0] = np.nan
    with pytest.raises(EvaluationError):
        prob.evaluate(X)


def test_solution_file_round_trip(problem, tmp_path):
    prob, X0 = problem
    path = tmp_path / "solution.csv"
    prob.write_solution(X0, path)
    assert path.read_text().splitlines()[0] == "name,value"
    assert np.array_equal(read_solution(path, prob.layout), X0)
    path.write_text("name,value\nG1.Efd,1.0\n")
    with pytest.raises(LayoutError):
        read_solution(path, prob.layout)


def test_condition_residuals_by_hand():
    v = balanced_set(1.02 * np.exp(0.1j))
    i = balanced_set(0.8 * np.exp(-0.2j))
    s = v[0] * np.conj(i[0])
    pv = PFCondition("G", "PV", p=s.real, v=1.02)
    assert condition_residuals(pv, v, i) == pytest.approx([0.0, 0.0], abs=1e-14)
    vt = PFCondition("G", "VTHETA", v=1.02, theta=0.1)
    assert condition_residuals(vt, v, i) == pytest.approx([0.0, 0.0], abs=1e-14)
    mp = PFCondition("M", "MOTORP", p=s.real + 0.1)
    assert condition_residuals(mp, v, i) == pytest.approx([0.1])
    pq = PFCondition("L", "PQ", p=s.real, q=s.imag, zip=ZipCoeffs())
    assert condition_residuals(pq, v, i) == pytest.approx([0.0, 0.0], abs=1e-14)
