"""Waveform to phasor conversion, sequence components and device power.

Phasors are RMS complex values in per unit: a waveform ``sqrt(2)|X| cos(w t + a)``
maps to ``|X| e^{ja}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

A_OP = np.exp(2j * np.pi / 3)
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class WaveRecord:
    samples: np.ndarray
    dt: float
    t_start: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(len(self.samples))

    def __len__(self) -> int:
        return len(self.samples)


def _window(w: WaveRecord, omega0: float, periods: int | None = 1):
    """Samples and times of the final ``periods`` full periods of ``w``."""
    period = 2 * math.pi / omega0
    n_per = period / w.dt
    n_avail = len(w.samples)
    if n_avail * w.dt < period * (1 - 1e-9):
        raise ValueError(f"waveform spans {n_avail * w.dt:.6g} s, shorter than one "
                         f"period {period:.6g} s")
    if periods is None:
        periods = max(1, int(math.floor(n_avail / n_per + 1e-9)))
    n = int(round(periods * n_per))
    n = min(n, n_avail)
    samples = np.asarray(w.samples, dtype=float)[-n:]
    times = w.t_start + w.dt * np.arange(n_avail - n, n_avail)
    return samples, times


def fit_phasor(w: WaveRecord, omega0: float) -> complex:
    """Least-squares fundamental phasor over the last full period of ``w``.

    Fits ``A cos(w0 t) + B sin(w0 t) + C`` through the 3x3 normal equations
    and returns ``(A - jB)/sqrt(2)``; the offset ``C`` is dropped.
    """
    x, t = _window(w, omega0)
    if len(x) < 5:
        raise ValueError("at least 5 samples per period are required")
    basis = np.column_stack([np.cos(omega0 * t), np.sin(omega0 * t), np.ones_like(t)])
    normal = basis.T @ basis
    rhs = basis.T @ x
    try:
        coef = np.linalg.solve(normal, rhs)
    except np.linalg.LinAlgError:
        return 0j
    return complex(coef[0], -coef[1]) / SQRT2


def harmonic_magnitude(w: WaveRecord, omega0: float, h: int, n_harmonics: int = 6,
                       periods: int | None = None) -> float:
    """Peak amplitude of harmonic ``h`` (``h = 0`` gives ``|DC|``).

    The fit uses a basis of DC plus harmonics ``1..max(h, n_harmonics)`` over
    the final whole periods of the record, capped below the Nyquist order.
    """
    if h < 0:
        raise ValueError("harmonic order must be non-negative")
    x, t = _window(w, omega0, periods)
    per_period = 2 * math.pi / omega0 / w.dt
    top = max(h, min(n_harmonics, int((per_period - 1) // 2)))
    cols = [np.ones_like(t)]
    for n in range(1, top + 1):
        cols += [np.cos(n * omega0 * t), np.sin(n * omega0 * t)]
    basis = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
    if h == 0:
        return float(abs(coef[0]))
    return float(math.hypot(coef[2 * h - 1], coef[2 * h]))


def positive_sequence(xa: complex, xb: complex, xc: complex) -> complex:
    return (xa + A_OP * xb + A_OP.conjugate() * xc) / 3.0


def sequence_components(xa: complex, xb: complex, xc: complex) -> tuple[complex, complex, complex]:
    """Return (zero, positive, negative) sequence phasors."""
    a, a2 = A_OP, A_OP.conjugate()
    zero = (xa + xb + xc) / 3.0
    pos = (xa + a * xb + a2 * xc) / 3.0
    neg = (xa + a2 * xb + a * xc) / 3.0
    return zero, pos, neg


def balanced_set(x1: complex) -> np.ndarray:
    """Phase phasors (a, b, c) of a positive-sequence phasor."""
    return x1 * np.array([1.0, A_OP.conjugate(), A_OP])


def device_power(v: complex, i: complex, scope: str = "positive-sequence") -> complex:
    """Complex power ``V I*``; per-phase quantities are expressed on the three-phase base."""
    s = v * np.conj(i)
    if scope == "per-phase":
        return complex(s) / 3.0
    if scope == "positive-sequence":
        return complex(s)
    raise ValueError(f"unknown scope {scope!r}")


def zip_target(v_mag: float, zip, p0: float, q0: float) -> tuple[float, float]:
    """Voltage-dependent power demand of a ZIP load."""
    p = (zip.kps + zip.kpi * v_mag + zip.kpz * v_mag ** 2) * p0
    q = (zip.kqs + zip.kqi * v_mag + zip.kqz * v_mag ** 2) * q0
    return p, q
