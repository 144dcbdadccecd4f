"""Period-boundary sampling, drift metric and harmonic tables."""

import math
from dataclasses import replace

import numpy as np
import pytest

from emtinit.emt import build_system, simulate
from emtinit.initguess import initial_state, power_flow
from emtinit.phasor import WaveRecord
from emtinit.report import (harmonic_table, hermite_sample, period_boundary_states,
                            periodicity_drift, read_waveform_csv)


@pytest.fixture(scope="module")
def record(spec9):
    sys = build_system(spec9, 250e-6, free_run=True)
    st = initial_state(spec9, sys, power_flow(spec9))
    sys.apply_state(st)
    return simulate(sys, st, 140, record="all"), sys


def test_hermite_hits_stored_steps(record):
    rec, sys = record
    assert np.array_equal(hermite_sample(rec, sys, rec.times[17]), rec.states[17])


class Oscillator:
    """x' = w J x, exact solution a rotation."""

    w = 2 * math.pi * 60

    def rhs(self, x, t):
        return self.w * np.array([-x[1], x[0]])


def test_hermite_is_fourth_order_on_exact_samples(record):
    rec, _ = record
    osc = Oscillator()
    h = 250e-6
    times = h * np.arange(70)
    states = np.column_stack([np.cos(osc.w * times), np.sin(osc.w * times)])
    exact = replace(rec, times=times, states=states, h=h)
    for t in (0.3 * h, 17.5 * h, 1 / 60):
        x = hermite_sample(exact, osc, t)
        err = np.max(np.abs(x - [math.cos(osc.w * t), math.sin(osc.w * t)]))
        assert err < (osc.w * h) ** 4 / 300


def test_boundaries_cover_whole_periods(record):
    rec, sys = record
    b = period_boundary_states(rec, sys)
    assert b.shape == (3, sys.n)   # 140 steps = 2.1 periods
    assert np.array_equal(b[0], rec.states[0])


def test_drift_metric():
    bounds = np.array([[1.0, 10.0], [1.1, 10.5], [1.05, 10.4]])
    d = periodicity_drift(bounds, np.array([0.5, 20.0]))
    assert d == pytest.approx([0.1, 0.025])


def test_harmonic_table():
    w0 = 2 * math.pi * 60
    t = np.arange(101) * (1 / 60) / 50
    waves = {"x": WaveRecord(1 + 0.1 * np.cos(2 * w0 * t), t[1])}
    tab = harmonic_table(waves, w0)
    assert tab["x"][0] == pytest.approx(1.0) and tab["x"][2] == pytest.approx(0.1)
    assert tab["x"][1] == pytest.approx(0.0, abs=1e-12)


def test_waveform_csv_round_trip(record, tmp_path):
    rec, _ = record
    path = tmp_path / "w.csv"
    rec.write_csv(path, columns=[("G2", "v", 0)], states=["G2.omega"])
    t, cols = read_waveform_csv(path)
    assert list(cols) == ["G2.v.a", "G2.omega"]
    assert np.array_equal(t, rec.times)
    assert np.array_equal(cols["G2.omega"], rec.state_wave("G2.omega").samples)
