"""Implicit one-step integrators for semi-explicit DAE models.

A model exposes ``n``, a boolean ``diff_mask`` (True for differential rows),
``rhs(x, t)`` and ``jac(x, t)``.  Differential rows read ``x' = f(x, t)``,
algebraic rows ``0 = f(x, t)``.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lu_factor, lu_solve

NEWTON_TOL = 1e-13
NEWTON_ACCEPT = 1e-9
NEWTON_MAXITER = 40


class StepFailure(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


def _solve_implicit(model, x_prev, f_prev, t_new, h, theta, guess):
    """Solve ``mask*(x - x_prev - h(1-theta) f_prev) - w f(x) = 0``.

    ``theta = 1/2`` is the trapezoidal rule, ``theta = 1`` backward Euler;
    ``w`` is ``h*theta`` on differential rows and 1 on algebraic rows.
    """
    mask = model.diff_mask
    w = np.where(mask, h * theta, 1.0)
    base = np.where(mask, x_prev + (h * (1.0 - theta)) * f_prev if theta < 1 else x_prev, 0.0)
    dmask = mask.astype(float)

    x = guess.copy()
    lu = None
    prev = np.inf
    for _ in range(NEWTON_MAXITER):
        if lu is None:
            jac = np.diag(dmask) - w[:, None] * model.jac(x, t_new)
            lu = lu_factor(jac, check_finite=False)
        g = dmask * x - base - w * model.rhs(x, t_new)
        dx = lu_solve(lu, g, check_finite=False)
        x = x - dx
        size = np.max(np.abs(dx))
        if not np.isfinite(size):
            raise StepFailure("non-finite values in implicit solve")
        scale = max(1.0, np.max(np.abs(x)))
        if size <= NEWTON_TOL * scale:
            return x
        if size > 0.1 * prev:
            lu = None  # slow contraction: refresh the Jacobian
        prev = size
    if prev <= NEWTON_ACCEPT * max(1.0, np.max(np.abs(x))):
        return x
    raise StepFailure(f"implicit solve did not converge (last update {prev:.3e})")


def trapezoidal_step(model, x, f, t, h, guess=None):
    """Advance ``x`` (with ``f = rhs(x, t)``) from ``t`` to ``t + h``."""
    if guess is None:
        guess = x + h * np.where(model.diff_mask, f, 0.0)
    return _solve_implicit(model, x, f, t + h, h, 0.5, guess)


def backward_euler_step(model, x, t, h, guess=None):
    if guess is None:
        guess = x
    return _solve_implicit(model, x, np.zeros_like(x), t + h, h, 1.0, guess)


def discontinuity_step(model, x, t, h):
    """Replace one trapezoidal step by two backward-Euler half steps.

    Used when ``x`` may be inconsistent with the algebraic constraints (or
    follows a jump); backward Euler does not carry the inconsistency forward
    as a sustained step-to-step oscillation.
    """
    half = backward_euler_step(model, x, t, 0.5 * h)
    return backward_euler_step(model, half, t + 0.5 * h, 0.5 * h)


def integrate(model, x0, t0, h, n_steps, discontinuity=False):
    """Run ``n_steps`` steps from ``x0``; returns an ``(n_steps + 1, n)`` array."""
    xs = np.empty((n_steps + 1, model.n))
    xs[0] = x0
    x = np.array(x0, dtype=float)
    start = 0
    if discontinuity and n_steps > 0:
        try:
            x = discontinuity_step(model, x, t0, h)
        except StepFailure as exc:
            raise StepFailure(str(exc), 1) from None
        xs[1] = x
        start = 1
    f = model.rhs(x, t0 + start * h)
    for n in range(start, n_steps):
        t = t0 + n * h
        guess = 2 * x - xs[n - 1] if n > 0 else None
        try:
            x = trapezoidal_step(model, x, f, t, h, guess)
        except StepFailure as exc:
            raise StepFailure(str(exc), n + 1) from None
        xs[n + 1] = x
        f = model.rhs(x, t0 + (n + 1) * h)
    return xs
