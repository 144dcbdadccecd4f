"""Phasor fitting, harmonic magnitudes, sequence components and device power."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emtinit.netlist import ZipCoeffs
from emtinit.phasor import (A_OP, WaveRecord, balanced_set, device_power, fit_phasor,
                            harmonic_magnitude, positive_sequence, sequence_components,
                            zip_target)

W0 = 2 * math.pi * 60
T = 1 / 60


def synth(n, amps, phases, dc=0.0, periods=1, t0=0.0):
    dt = T / n
    t = t0 + dt * np.arange(periods * n + 1)
    x = dc + sum(a * np.cos(h * W0 * t + p) for h, (a, p) in enumerate(zip(amps, phases), 1))
    return WaveRecord(x, dt, t0)


@pytest.mark.parametrize("dc", [0.0, 0.7, -3.0])
@pytest.mark.parametrize("t0", [0.0, 0.0031])
def test_fundamental_recovered_from_harmonic_mixture(dc, t0):
    amps, phases = [1.3, 0.2, 0.05, 0.01], [0.4, -1.0, 2.0, 0.3]
    x = fit_phasor(synth(25, amps, phases, dc, t0=t0), W0)
    expect = 1.3 / math.sqrt(2) * np.exp(0.4j)
    assert abs(x - expect) < 1e-13


def test_fit_is_linear():
    rng = np.random.default_rng(1)
    a = WaveRecord(rng.normal(size=26), T / 25)
    b = WaveRecord(rng.normal(size=26), T / 25)
    ab = WaveRecord(2.0 * a.samples - 3.0 * b.samples, T / 25)
    assert abs(fit_phasor(ab, W0) - (2 * fit_phasor(a, W0) - 3 * fit_phasor(b, W0))) < 1e-13


def test_fit_uses_last_period():
    early = synth(25, [5.0], [0.0], periods=1)
    late = synth(25, [1.0], [0.5], periods=1, t0=T)
    w = WaveRecord(np.concatenate([early.samples[:-1], late.samples]), T / 25)
    assert abs(fit_phasor(w, W0) - np.exp(0.5j) / math.sqrt(2)) < 1e-12


def test_fit_rejects_short_records():
    with pytest.raises(ValueError):
        fit_phasor(WaveRecord(np.ones(10), T / 25), W0)


def test_harmonic_magnitudes():
    w = synth(50, [1.0, 0.25, 0.0, 0.01], [0.1, 0.2, 0.0, 0.3], dc=0.5, periods=2)
    assert harmonic_magnitude(w, W0, 0) == pytest.approx(0.5, abs=1e-12)
    assert harmonic_magnitude(w, W0, 2) == pytest.approx(0.25, abs=1e-12)
    assert harmonic_magnitude(w, W0, 3) == pytest.approx(0.0, abs=1e-12)
    assert harmonic_magnitude(w, W0, 4) == pytest.approx(0.01, abs=1e-12)


def test_balanced_set_is_pure_positive_sequence():
    x = 0.9 * np.exp(0.3j)
    z, p, n = sequence_components(*balanced_set(x))
    assert abs(p - x) < 1e-15 and abs(z) < 1e-15 and abs(n) < 1e-15


cplx = st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False)


@given(st.lists(cplx, min_size=6, max_size=6))
@settings(max_examples=1000, deadline=None)
def test_sequence_power_identity(vals):
    v, i = np.array(vals[:3]), np.array(vals[3:])
    v0, v1, v2 = sequence_components(*v)
    i0, i1, i2 = sequence_components(*i)
    lhs = np.sum(v * np.conj(i))
    rhs = 3 * (v0 * np.conj(i0) + v1 * np.conj(i1) + v2 * np.conj(i2))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, np.sum(np.abs(v) * np.abs(i)))
    assert abs(positive_sequence(*v) - v1) <= 1e-12 * max(1.0, np.max(np.abs(v)))
    # inverse transform
    a, a2 = A_OP, A_OP.conjugate()
    back = np.array([v0 + v1 + v2, v0 + a2 * v1 + a * v2, v0 + a * v1 + a2 * v2])
    assert np.max(np.abs(back - v)) <= 1e-12 * max(1.0, np.max(np.abs(v)))


def test_device_power_scopes():
    v, i = 1.0 + 0.1j, 0.5 - 0.2j
    s = v * np.conj(i)
    assert device_power(v, i) == s
    assert device_power(v, i, "per-phase") == pytest.approx(s / 3, rel=1e-15)
    with pytest.raises(ValueError):
        device_power(v, i, "total")


def test_zip_target():
    z = ZipCoeffs(0.2, 0.3, 0.5, 0.0, 0.0, 1.0)
    p, q = zip_target(0.9, z, 2.0, 1.0)
    assert p == pytest.approx(2.0 * (0.2 + 0.3 * 0.9 + 0.5 * 0.81))
    assert q == pytest.approx(0.81)
