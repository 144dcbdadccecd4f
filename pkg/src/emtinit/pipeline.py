"""End-to-end initialization: power flow, initial guess, Newton-GMRES."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .initguess import PowerFlowSolution, assemble_X0, initial_state, power_flow
from .netlist import SystemSpec, validate
from .shooting import ShootingProblem
from .solver import SolveStats, SolverOptions, newton_gmres

log = logging.getLogger(__name__)


@dataclass
class InitResult:
    X: np.ndarray
    X0: np.ndarray
    stats: SolveStats
    problem: ShootingProblem
    pf: PowerFlowSolution
    seconds: float

    @property
    def converged(self) -> bool:
        return self.stats.converged

    def state(self):
        return self.problem.state(self.X)


def initialize(spec: SystemSpec, opts: SolverOptions | None = None, steps_per_period: int | None = None,
               refine: bool = True, callback=None) -> InitResult:
    """Find the periodic steady state of ``spec`` at its power-flow operating point."""
    diags = validate(spec)
    if diags:
        raise ValueError("invalid system: " + "; ".join(diags))
    if steps_per_period is not None:
        spec = replace(spec, steps_per_period=steps_per_period)
    opts = opts or spec.solver
    t_start = time.perf_counter()
    pf = power_flow(spec, refine=refine)
    problem = ShootingProblem(spec)
    # loads without conditions keep the impedances of the guess
    problem.set_template_parameters(initial_state(spec, problem.template, pf))
    X0, pins = assemble_X0(spec, pf, problem.template, problem.layout)
    problem.layout.pins = pins
    X, stats = newton_gmres(problem, X0, opts, callback)
    seconds = time.perf_counter() - t_start
    log.info("initialization %s after %d iterations, %d evaluations, %.2f s",
             "converged" if stats.converged else "did not converge",
             stats.iterations, stats.f_evals, seconds)
    return InitResult(X, X0, stats, problem, pf, seconds)
