"""Finite-difference Newton-GMRES with an optional Broyden right preconditioner.

The outer loop takes full Newton steps.  Each step solves ``J dx = -F(x)``
with un-restarted GMRES whose Jacobian-vector products are forward
differences ``(F(x + eps z) - F(x)) / eps``.  With preconditioning the Krylov
space is built for ``J M`` and the step is recovered as ``M w``; ``M`` is
refreshed by rank-one secant updates taken both between Newton iterations
(outer) and after every directional evaluation (inner), none of which cost
extra residual evaluations.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

log = logging.getLogger(__name__)

Residual = Callable[[np.ndarray], np.ndarray]


class EvaluationError(RuntimeError):
    """A residual evaluation failed (e.g. the time-domain run diverged)."""


class SingularTriangleError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-6
    maxiter: int = 20
    reltol: float = 1e-3
    eps: float = 1e-4
    precondition: bool = False
    m_max: Optional[int] = None
    eps_relative: bool = False
    # False keeps M = I throughout; only useful to compare code paths.
    update_preconditioner: bool = True

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.reltol < 1:
            raise ValueError("reltol must lie in (0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.maxiter < 0:
            raise ValueError("maxiter must be non-negative")

    @property
    def abstol(self) -> float:
        return 0.5 * self.tolerance


@dataclass
class SolveStats:
    residual_norms: list[float] = field(default_factory=list)
    f_evals: int = 0
    cumulative_f_evals: list[int] = field(default_factory=list)
    krylov_iters: list[int] = field(default_factory=list)
    converged: bool = False
    krylov_capped: list[bool] = field(default_factory=list)
    # (kind, relative secant error) after each accepted Broyden update
    secant_errors: list[tuple[str, float]] = field(default_factory=list)
    skipped_updates: int = 0
    max_orthogonality_loss: float = 0.0
    failure: Optional[str] = None

    @property
    def iterations(self) -> int:
        return len(self.residual_norms) - 1

    @property
    def total_krylov_iters(self) -> int:
        return sum(self.krylov_iters)

    def write_csv(self, path) -> None:
        """Write ``iter,residual_2norm,cumulative_F_evals,krylov_iters``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "residual_2norm", "cumulative_F_evals", "krylov_iters"])
            for i, rho in enumerate(self.residual_norms):
                # Krylov directions spent producing iterate i
                k = self.krylov_iters[i - 1] if i > 0 else 0
                w.writerow([i, repr(rho), self.cumulative_f_evals[i], k])


@dataclass
class GmresWorkspace:
    """Arnoldi basis, Hessenberg matrix and Givens data of one inner solve."""

    Q: np.ndarray
    H: np.ndarray
    c: np.ndarray
    s: np.ndarray
    g: np.ndarray
    rho: float
    k: int = 0

    @classmethod
    def allocate(cls, m: int, kmax: int) -> "GmresWorkspace":
        return cls(Q=np.zeros((m, kmax + 1)), H=np.zeros((kmax + 1, kmax)),
                   c=np.zeros(kmax), s=np.zeros(kmax), g=np.zeros(kmax + 1), rho=0.0)


@dataclass
class Preconditioner:
    """Dense right preconditioner ``M`` and its inner-loop copy ``M0``."""

    M: np.ndarray
    M0: np.ndarray

    @classmethod
    def identity(cls, m: int) -> "Preconditioner":
        return cls(np.eye(m), np.eye(m))


# ---------------------------------------------------------------- kernels

def givens_qr_update(h: np.ndarray, c: np.ndarray, s: np.ndarray, g: np.ndarray,
                     k: int) -> None:
    """Triangularize Hessenberg column ``h`` (entries 0..k+1) in place.

    The rotations stored in ``c[:k]``, ``s[:k]`` are applied first, then a new
    rotation is formed from ``h[k], h[k+1]`` and applied to ``g[k:k+2]``.  The
    sign convention is ``c = h[k]/v``, ``s = -h[k+1]/v``.
    """
    for i in range(k):
        t1 = c[i] * h[i] - s[i] * h[i + 1]
        t2 = s[i] * h[i] + c[i] * h[i + 1]
        h[i], h[i + 1] = t1, t2
    v = math.hypot(h[k], h[k + 1])
    if v == 0.0:
        c[k], s[k] = 1.0, 0.0
    else:
        c[k], s[k] = h[k] / v, -h[k + 1] / v
    h[k] = c[k] * h[k] - s[k] * h[k + 1]
    h[k + 1] = 0.0
    t1 = c[k] * g[k] - s[k] * g[k + 1]
    t2 = s[k] * g[k] + c[k] * g[k + 1]
    g[k], g[k + 1] = t1, t2


def back_substitute(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve the upper-triangular system ``H y = g``."""
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    k = H.shape[0]
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        if H[i, i] == 0.0:
            raise SingularTriangleError(f"zero diagonal entry at row {i}")
        y[i] = (g[i] - H[i, i + 1:] @ y[i + 1:]) / H[i, i]
    return y


def _rank_one(M: np.ndarray, dx: np.ndarray, df: np.ndarray, kind: str,
              stats: Optional[SolveStats]) -> np.ndarray:
    Mdf = M @ df
    den = dx @ Mdf
    if abs(den) <= 1e-14 * np.linalg.norm(dx) * np.linalg.norm(Mdf):
        log.info("skipping %s preconditioner update: denominator %.3e", kind, den)
        if stats is not None:
            stats.skipped_updates += 1
        return M
    M = M + np.outer((dx - Mdf) / den, dx @ M)
    if stats is not None:
        err = np.linalg.norm(M @ df - dx) / max(np.linalg.norm(dx), 1e-300)
        stats.secant_errors.append((kind, float(err)))
    return M


def precond_outer_update(M: np.ndarray, dx: np.ndarray, df: np.ndarray,
                         stats: Optional[SolveStats] = None) -> np.ndarray:
    """Broyden update between Newton iterations; ``df = F(x) - F(x - dx)``."""
    return _rank_one(M, dx, df, "outer", stats)


def precond_inner_update(M0: np.ndarray, step: np.ndarray, df: np.ndarray,
                         stats: Optional[SolveStats] = None) -> np.ndarray:
    """Broyden update along a GMRES direction; ``step = eps*zbar``, ``df = F(x+step) - F(x)``."""
    return _rank_one(M0, step, df, "inner", stats)


# ---------------------------------------------------------------- GMRES

@dataclass
class InnerResult:
    dx: np.ndarray
    k: int
    f_evals: int
    capped: bool
    workspace: GmresWorkspace


def gmres_inner(F: Residual, x: np.ndarray, fx: np.ndarray, opts: SolverOptions,
                precond: Optional[Preconditioner] = None,
                stats: Optional[SolveStats] = None) -> InnerResult:
    """One inexact Newton step by finite-difference GMRES.

    Builds the Krylov basis until the least-squares residual drops below
    ``max(abstol, reltol*||fx||)``, a happy breakdown occurs, or ``m_max``
    directions have been used.
    """
    m = x.size
    kmax = min(opts.m_max or m, m)
    rho = float(np.linalg.norm(fx))
    ws = GmresWorkspace.allocate(m, kmax)
    ws.rho = rho
    if rho == 0.0:
        return InnerResult(np.zeros(m), 0, 0, False, ws)
    errtol = max(opts.abstol, opts.reltol * rho)
    Q, H, g = ws.Q, ws.H, ws.g
    Q[:, 0] = -fx / rho
    g[0] = rho
    eps = opts.eps * (max(1.0, np.linalg.norm(x)) if opts.eps_relative else 1.0)
    M = precond.M if precond is not None else None

    k = 0
    breakdown = False
    while ws.rho > errtol and k < kmax:
        z = Q[:, k] if M is None else M @ Q[:, k]
        fz = F(x + eps * z)
        df = fz - fx
        w = df / eps
        if precond is not None and opts.update_preconditioner:
            precond.M0 = precond_inner_update(precond.M0, eps * z, df, stats)
        for j in range(k + 1):
            H[j, k] = w @ Q[:, j]
            w = w - H[j, k] * Q[:, j]
        H[k + 1, k] = np.linalg.norm(w)
        if H[k + 1, k] == 0.0:
            breakdown = True
        else:
            Q[:, k + 1] = w / H[k + 1, k]
        givens_qr_update(H[:, k], ws.c, ws.s, g, k)
        ws.rho = abs(g[k + 1])
        k += 1
        if breakdown:
            break
    ws.k = k

    if stats is not None and k > 0:
        basis = Q[:, :k + (0 if breakdown else 1)]
        gram = basis.T @ basis
        loss = np.max(np.abs(gram - np.eye(gram.shape[0])))
        stats.max_orthogonality_loss = max(stats.max_orthogonality_loss, float(loss))

    capped = ws.rho > errtol and k >= kmax
    if capped:
        log.warning("GMRES reached %d directions with residual %.3e > %.3e", k, ws.rho, errtol)
    y = back_substitute(H[:k, :k], g[:k])
    dx = Q[:, :k] @ y
    if M is not None:
        dx = M @ dx
    return InnerResult(dx, k, k, capped, ws)


# ---------------------------------------------------------------- Newton

def newton_gmres(F: Residual, x0: np.ndarray, opts: SolverOptions,
                 callback: Optional[Callable[[int, np.ndarray, float], None]] = None,
                 ) -> tuple[np.ndarray, SolveStats]:
    """Solve ``F(x) = 0`` from ``x0``.

    Returns the last iterate and a :class:`SolveStats`.  Running out of
    iterations is reported through ``stats.converged``; a failing residual
    evaluation stops the solve and is recorded in ``stats.failure``.
    """
    x = np.array(x0, dtype=float)
    m = x.size
    stats = SolveStats()
    precond = Preconditioner.identity(m) if opts.precondition else None

    def evaluate(v):
        stats.f_evals += 1
        return np.asarray(F(v), dtype=float)

    fx_prev = None
    dx_prev = None
    for it in range(opts.maxiter + 1):
        try:
            fx = evaluate(x)
        except EvaluationError as exc:
            stats.failure = str(exc)
            log.error("residual evaluation failed at Newton iteration %d: %s", it, exc)
            return x, stats
        rho = float(np.linalg.norm(fx))
        stats.residual_norms.append(rho)
        stats.cumulative_f_evals.append(stats.f_evals)
        log.info("newton %d: |F| = %.6e (%d evaluations)", it, rho, stats.f_evals)
        if callback is not None:
            callback(it, x, rho)
        if not np.isfinite(rho):
            stats.failure = "non-finite residual"
            return x, stats
        if rho < opts.tolerance:
            stats.converged = True
            return x, stats
        if it == opts.maxiter:
            break

        if precond is not None and it > 0 and opts.update_preconditioner:
            precond.M = precond.M0
            precond.M = precond_outer_update(precond.M, dx_prev, fx - fx_prev, stats)
        if precond is not None:
            precond.M0 = precond.M.copy()

        try:
            inner = gmres_inner(evaluate, x, fx, opts, precond, stats)
        except EvaluationError as exc:
            stats.failure = str(exc)
            log.error("residual evaluation failed inside GMRES: %s", exc)
            return x, stats
        stats.krylov_iters.append(inner.k)
        stats.krylov_capped.append(inner.capped)
        fx_prev, dx_prev = fx, inner.dx
        x = x + inner.dx
    return x, stats
