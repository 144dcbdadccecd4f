"""Post-initialization checks: periodicity drift and harmonic content."""

from __future__ import annotations

import csv
import math

import numpy as np

from .emt.system import System, TrajectoryRecord
from .phasor import WaveRecord, harmonic_magnitude


def hermite_sample(record: TrajectoryRecord, sys: System, t: float) -> np.ndarray:
    """State at time ``t`` by cubic Hermite interpolation between stored steps.

    Uses the model derivatives at the bracketing steps, so the interpolant
    matches the trajectory to third order in the step size.
    """
    h = record.h
    pos = (t - record.t0) / h
    n = int(min(max(math.floor(pos + 1e-9), 0), record.n_steps - 1))
    s = pos - n
    if abs(s) < 1e-9:
        return record.states[n].copy()
    if abs(s - 1) < 1e-9:
        return record.states[n + 1].copy()
    x0, x1 = record.states[n], record.states[n + 1]
    f0 = sys.rhs(x0, record.times[n])
    f1 = sys.rhs(x1, record.times[n + 1])
    h00 = 2 * s ** 3 - 3 * s ** 2 + 1
    h10 = s ** 3 - 2 * s ** 2 + s
    h01 = -2 * s ** 3 + 3 * s ** 2
    h11 = s ** 3 - s ** 2
    return h00 * x0 + h10 * h * f0 + h01 * x1 + h11 * h * f1


def period_boundary_states(record: TrajectoryRecord, sys: System) -> np.ndarray:
    """States at ``t0 + n*T`` for every whole period covered by ``record``."""
    n_periods = int(math.floor((record.times[-1] - record.t0) / record.period + 1e-9))
    return np.array([hermite_sample(record, sys, record.t0 + n * record.period)
                     for n in range(n_periods + 1)])


def periodicity_drift(boundaries: np.ndarray, peaks: np.ndarray) -> np.ndarray:
    """Per-state maximum relative change between consecutive period boundaries.

    Changes are scaled by ``max(1, peak |x|)`` of each state over the run.
    """
    diffs = np.abs(np.diff(boundaries, axis=0))
    return np.max(diffs, axis=0) / np.maximum(1.0, peaks)


def harmonic_table(waves: dict[str, WaveRecord], omega0: float, orders=(0, 1, 2, 3)
                   ) -> dict[str, dict[int, float]]:
    """Harmonic magnitudes of each waveform over its whole periods."""
    return {name: {h: harmonic_magnitude(w, omega0, h) for h in orders}
            for name, w in waves.items()}


def read_waveform_csv(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Times and columns of a waveform CSV written by ``TrajectoryRecord.write_csv``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    return data[:, 0], {name: data[:, j] for j, name in enumerate(header) if j > 0}
