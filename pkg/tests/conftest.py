"""Shared fixtures.  The full 9-bus runs are session-scoped and computed once."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import pytest

from emtinit.emt.system import build_system, simulate
from emtinit.netlist import load_bundled
from emtinit.pipeline import initialize
from emtinit.report import period_boundary_states, periodicity_drift

FREE_RUN_STEP = 250e-6
FREE_RUN_PERIODS = 5


@pytest.fixture(scope="session")
def spec9():
    return load_bundled("wscc9_unbalanced")


@pytest.fixture(scope="session")
def spec9_balanced(spec9):
    return spec9.with_unbalance(0.0)


@pytest.fixture(scope="session")
def init_plain(spec9):
    return initialize(spec9, replace(spec9.solver, precondition=False))


@pytest.fixture(scope="session")
def init_precond(spec9):
    return initialize(spec9, replace(spec9.solver, precondition=True))


@pytest.fixture(scope="session")
def init_balanced(spec9_balanced):
    return initialize(spec9_balanced)


@dataclass
class FreeRun:
    record: object
    system: object
    boundaries: np.ndarray
    drift: np.ndarray


def free_run(res) -> FreeRun:
    """Continue a converged initialization at 250 us for five periods."""
    spec = res.problem.spec
    sys = build_system(spec, FREE_RUN_STEP, free_run=True)
    start = res.problem.state(res.X)
    n = int(math.ceil(FREE_RUN_PERIODS * spec.period / FREE_RUN_STEP - 1e-9))
    rec = simulate(sys, start, n, record="all")
    sys.apply_state(start)
    bounds = period_boundary_states(rec, sys)
    peaks = np.max(np.abs(rec.states), axis=0)
    return FreeRun(rec, sys, bounds, periodicity_drift(bounds, peaks))


@pytest.fixture(scope="session")
def run_unbalanced(init_plain):
    return free_run(init_plain)


@pytest.fixture(scope="session")
def run_balanced(init_balanced):
    return free_run(init_balanced)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
