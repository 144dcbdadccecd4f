"""Rotating machine models in per unit with time in seconds.

Terminal quantities are instantaneous phase values on the RMS phase base, so
a 1 p.u. balanced voltage has a peak of sqrt(2).  The dq0 transforms below
absorb that factor, giving dq magnitudes equal to RMS phasor magnitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..netlist import GenSpec, MotorSpec

SQRT2 = math.sqrt(2.0)
_SHIFT = np.array([0.0, -2 * math.pi / 3, 2 * math.pi / 3])
_K = SQRT2 / 3.0


def park(theta: float) -> np.ndarray:
    """abc -> dq0 (3x3) for d-axis angle ``theta``."""
    ang = theta + _SHIFT
    return np.array([_K * np.cos(ang), -_K * np.sin(ang),
                     np.full(3, 1.0 / (3.0 * SQRT2))])


def park_inv(theta: float) -> np.ndarray:
    """dq0 -> abc (3x3)."""
    ang = theta + _SHIFT
    return SQRT2 * np.column_stack([np.cos(ang), -np.sin(ang), np.ones(3)])


def park_inv_dtheta(theta: float) -> np.ndarray:
    ang = theta + _SHIFT
    return SQRT2 * np.column_stack([-np.sin(ang), -np.cos(ang), np.zeros(3)])


@dataclass(frozen=True)
class SyncParams:
    """Equivalent-circuit constants derived from the standard parameters."""

    ra: float
    xl: float
    lad: float
    laq: float
    lfd: float
    l1d: float
    l1q: float
    l2q: float
    rfd: float
    r1d: float
    r1q: float
    r2q: float
    x0: float
    h: float
    d: float

    @classmethod
    def from_spec(cls, g: GenSpec, omega_b: float) -> "SyncParams":
        lad, laq = g.xd - g.xl, g.xq - g.xl
        lfd = lad * (g.xdp - g.xl) / (lad - (g.xdp - g.xl))
        l1d = 1.0 / (1.0 / (g.xdpp - g.xl) - 1.0 / lad - 1.0 / lfd)
        l1q = laq * (g.xqp - g.xl) / (laq - (g.xqp - g.xl))
        l2q = 1.0 / (1.0 / (g.xqpp - g.xl) - 1.0 / laq - 1.0 / l1q)
        rfd = (lad + lfd) / (omega_b * g.td0p)
        r1d = (l1d + lad * lfd / (lad + lfd)) / (omega_b * g.td0pp)
        r1q = (laq + l1q) / (omega_b * g.tq0p)
        r2q = (l2q + laq * l1q / (laq + l1q)) / (omega_b * g.tq0pp)
        if min(lfd, l1d, l1q, l2q) <= 0:
            raise ValueError(f"generator {g.id}: parameters give non-physical winding leakages")
        return cls(g.ra, g.xl, lad, laq, lfd, l1d, l1q, l2q, rfd, r1d, r1q, r2q,
                   x0=g.xl, h=g.h, d=g.d)

    @property
    def xd(self) -> float:
        return self.lad + self.xl

    @property
    def xq(self) -> float:
        return self.laq + self.xl

    def ld_matrix(self) -> np.ndarray:
        """(psi_d, psi_fd, psi_1d) = Ld @ (-i_d, i_fd, i_1d)."""
        lad = self.lad
        return np.array([[lad + self.xl, lad, lad],
                         [lad, lad + self.lfd, lad],
                         [lad, lad, lad + self.l1d]])

    def lq_matrix(self) -> np.ndarray:
        """(psi_q, psi_1q, psi_2q) = Lq @ (-i_q, i_1q, i_2q)."""
        laq = self.laq
        return np.array([[laq + self.xl, laq, laq],
                         [laq, laq + self.l1q, laq],
                         [laq, laq, laq + self.l2q]])


class SyncMachine:
    """Synchronous machine: stator, field, one d-axis and two q-axis dampers.

    States: psi_d, psi_q, psi_0, psi_fd, psi_1d, psi_1q, psi_2q, omega, delta.
    ``delta`` is the q-axis angle relative to the synchronous frame, so the
    d axis sits at ``omega0*t + delta - pi/2``.  Generator convention.
    """

    STATES = ("psi_d", "psi_q", "psi_0", "psi_fd", "psi_1d", "psi_1q", "psi_2q",
              "omega", "delta")
    D_IDX = [0, 3, 4]
    Q_IDX = [1, 5, 6]

    def __init__(self, spec: GenSpec, omega0: float):
        self.id = spec.id
        self.omega0 = omega0
        self.p = SyncParams.from_spec(spec, omega0)
        self.ldinv = np.linalg.inv(self.p.ld_matrix())
        self.lqinv = np.linalg.inv(self.p.lq_matrix())
        # current sensitivities d(i)/d(states)
        di = np.zeros((7, 9))  # rows: id, iq, i0, ifd, i1d, i1q, i2q
        di[0, self.D_IDX] = -self.ldinv[0]
        di[3, self.D_IDX] = self.ldinv[1]
        di[4, self.D_IDX] = self.ldinv[2]
        di[1, self.Q_IDX] = -self.lqinv[0]
        di[5, self.Q_IDX] = self.lqinv[1]
        di[6, self.Q_IDX] = self.lqinv[2]
        di[2, 2] = -1.0 / self.p.x0
        self.di = di

    def angle(self, delta: float, t: float) -> float:
        return self.omega0 * t + delta - 0.5 * math.pi

    def currents(self, s: np.ndarray) -> np.ndarray:
        """(id, iq, i0, ifd, i1d, i1q, i2q) from the state vector."""
        return self.di @ s

    def rhs(self, s, v, t, efd, tm):
        """State derivatives and phase current injected into the network."""
        p, wb = self.p, self.omega0
        theta = self.angle(s[8], t)
        e = park(theta) @ v
        cur = self.di @ s
        id_, iq, i0, ifd, i1d, i1q, i2q = cur
        w = s[7]
        te = s[0] * iq - s[1] * id_
        ds = np.array([
            wb * (e[0] + p.ra * id_ + w * s[1]),
            wb * (e[1] + p.ra * iq - w * s[0]),
            wb * (e[2] + p.ra * i0),
            wb * p.rfd * (efd / p.lad - ifd),
            -wb * p.r1d * i1d,
            -wb * p.r1q * i1q,
            -wb * p.r2q * i2q,
            (tm - te - p.d * (w - 1.0)) / (2.0 * p.h),
            wb * (w - 1.0),
        ])
        inj = park_inv(theta) @ cur[:3]
        return ds, inj

    def jac(self, s, v, t):
        """Return (dds/ds, dds/dv, dinj/ds, dinj/dv)."""
        p, wb = self.p, self.omega0
        theta = self.angle(s[8], t)
        P = park(theta)
        e = P @ v
        di = self.di
        cur = di @ s
        id_, iq = cur[0], cur[1]
        w = s[7]
        J = np.zeros((9, 9))
        J[0] = wb * p.ra * di[0]
        J[0, 1] += wb * w
        J[0, 7] += wb * s[1]
        J[0, 8] += wb * e[1]
        J[1] = wb * p.ra * di[1]
        J[1, 0] -= wb * w
        J[1, 7] -= wb * s[0]
        J[1, 8] -= wb * e[0]
        J[2] = wb * p.ra * di[2]
        J[3] = -wb * p.rfd * di[3]
        J[4] = -wb * p.r1d * di[4]
        J[5] = -wb * p.r1q * di[5]
        J[6] = -wb * p.r2q * di[6]
        dte = s[0] * di[1] - s[1] * di[0]
        dte[0] += iq
        dte[1] -= id_
        J[7] = -dte / (2.0 * p.h)
        J[7, 7] -= p.d / (2.0 * p.h)
        J[8, 7] = wb
        Jv = np.zeros((9, 3))
        Jv[:3] = wb * P
        Pi = park_inv(theta)
        Ji = Pi @ di[:3]
        Ji[:, 8] += park_inv_dtheta(theta) @ cur[:3]
        return J, Jv, Ji, np.zeros((3, 3))


@dataclass(frozen=True)
class MotorParams:
    rs: float
    xls: float
    rr: float
    xlr: float
    xm: float
    h: float
    d: float

    @classmethod
    def from_spec(cls, m: MotorSpec) -> "MotorParams":
        return cls(m.rs, m.xls, m.rr, m.xlr, m.xm, m.h, m.d)

    @property
    def xss(self) -> float:
        return self.xls + self.xm

    @property
    def xrr(self) -> float:
        return self.xlr + self.xm


class InductionMachine:
    """Squirrel-cage induction machine, floating-Y stator, motor convention.

    States: psi_ds, psi_qs, psi_dr, psi_qr, omega_r, theta_r in the
    synchronous frame (d axis at ``omega0*t``).  ``theta_r`` is the rotor
    angle relative to that frame and has no electrical feedback.  Mechanical
    load is a constant torque ``tl`` plus friction ``d*omega_r``.
    """

    STATES = ("psi_ds", "psi_qs", "psi_dr", "psi_qr", "omega_r", "theta_r")

    def __init__(self, spec: MotorSpec, omega0: float):
        self.id = spec.id
        self.omega0 = omega0
        self.p = MotorParams.from_spec(spec)
        p = self.p
        self.linv = np.linalg.inv(np.array([[p.xss, p.xm], [p.xm, p.xrr]]))
        di = np.zeros((4, 6))  # rows: ids, iqs, idr, iqr
        di[0, [0, 2]] = self.linv[0]
        di[2, [0, 2]] = self.linv[1]
        di[1, [1, 3]] = self.linv[0]
        di[3, [1, 3]] = self.linv[1]
        self.di = di

    def angle(self, t: float) -> float:
        return self.omega0 * t

    def currents(self, s):
        return self.di @ s

    def rhs(self, s, v, t, tl):
        p, wb = self.p, self.omega0
        theta = self.angle(t)
        e = park(theta)[:2] @ v
        ids, iqs, idr, iqr = self.di @ s
        slip = 1.0 - s[4]
        te = s[0] * iqs - s[1] * ids
        ds = np.array([
            wb * (e[0] - p.rs * ids + s[1]),
            wb * (e[1] - p.rs * iqs - s[0]),
            wb * (-p.rr * idr + slip * s[3]),
            wb * (-p.rr * iqr - slip * s[2]),
            (te - tl - p.d * s[4]) / (2.0 * p.h),
            wb * (s[4] - 1.0),
        ])
        inj = -park_inv(theta)[:, :2] @ np.array([ids, iqs])
        return ds, inj

    def jac(self, s, v, t):
        p, wb = self.p, self.omega0
        theta = self.angle(t)
        di = self.di
        ids, iqs = di[0] @ s, di[1] @ s
        slip = 1.0 - s[4]
        J = np.zeros((6, 6))
        J[0] = -wb * p.rs * di[0]
        J[0, 1] += wb
        J[1] = -wb * p.rs * di[1]
        J[1, 0] -= wb
        J[2] = -wb * p.rr * di[2]
        J[2, 3] += wb * slip
        J[2, 4] -= wb * s[3]
        J[3] = -wb * p.rr * di[3]
        J[3, 2] -= wb * slip
        J[3, 4] += wb * s[2]
        dte = s[0] * di[1] - s[1] * di[0]
        dte[0] += iqs
        dte[1] -= ids
        J[4] = dte / (2.0 * p.h)
        J[4, 4] -= p.d / (2.0 * p.h)
        J[5, 4] = wb
        Jv = np.zeros((6, 3))
        Jv[:2] = wb * park(theta)[:2]
        Ji = -park_inv(theta)[:, :2] @ di[:2]
        return J, Jv, Ji, np.zeros((3, 3))
