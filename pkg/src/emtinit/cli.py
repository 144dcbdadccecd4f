"""Command-line entry point.

    emtinit init SYSTEM [options]        initialize, write convergence.csv and solution.csv
    emtinit simulate SYSTEM --solution F  free run from a solution, write waveform CSVs
    emtinit report DIR                    drift and harmonic tables from waveform CSVs

SYSTEM is a path to a system file or the name of a bundled system
(``wscc9_unbalanced``).  Exit status is 0 on success, 1 when the Newton
iteration does not converge and 2 on input errors.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import replace

import numpy as np
from scipy.interpolate import CubicSpline

from .emt.integrate import StepFailure
from .emt.system import build_system, simulate
from .netlist import NetlistError, read_system, validate
from .phasor import WaveRecord, harmonic_magnitude
from .pipeline import initialize
from .report import period_boundary_states, periodicity_drift, read_waveform_csv
from .shooting import LayoutError, build_layout, read_solution, unpack

DEFAULT_COLUMNS = ("bus5.v.a", "G2.omega", "M5.theta_r")


class InputError(Exception):
    pass


def _spec(args):
    try:
        spec = read_system(args.system)
    except (OSError, NetlistError) as exc:
        raise InputError(str(exc)) from None
    if args.k is not None:
        if not abs(args.k) < 1:
            raise InputError("--k must satisfy |k| < 1")
        spec = spec.with_unbalance(args.k)
    diags = validate(spec)
    if diags:
        raise InputError("invalid system: " + "; ".join(diags))
    return spec


def _solver_options(args, spec):
    opts = spec.solver
    kw = {name: getattr(args, name) for name in ("tol", "reltol", "eps", "maxiter")
          if getattr(args, name) is not None}
    if "tol" in kw:
        kw["tolerance"] = kw.pop("tol")
    if args.precondition is not None:
        kw["precondition"] = args.precondition
    try:
        return replace(opts, **kw)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def cmd_init(args) -> int:
    spec = _spec(args)
    opts = _solver_options(args, spec)
    if args.step_frac is not None and args.step_frac < 5:
        raise InputError("--step-frac must be at least 5")
    os.makedirs(args.out, exist_ok=True)
    res = initialize(spec, opts, steps_per_period=args.step_frac, refine=not args.no_refine)
    res.stats.write_csv(os.path.join(args.out, "convergence.csv"))
    res.problem.write_solution(res.X, os.path.join(args.out, "solution.csv"))
    res.pf.write_csv(os.path.join(args.out, "powerflow.csv"))
    s = res.stats
    print(f"unknowns: {res.problem.layout.m}")
    print(f"steps per period: {res.problem.template.steps_per_period}")
    print(f"preconditioning: {'on' if opts.precondition else 'off'}")
    for i, rho in enumerate(s.residual_norms):
        print(f"  iter {i}: |F| = {rho:.4e}  (evaluations so far {s.cumulative_f_evals[i]})")
    print(f"Newton iterations: {s.iterations}")
    print(f"F evaluations: {s.f_evals}")
    print(f"final norm: {s.residual_norms[-1]:.4e}")
    print(f"converged: {'yes' if s.converged else 'no'}  ({res.seconds:.2f} s)")
    if not s.converged:
        reason = s.failure or f"residual above {opts.tolerance:g} after {opts.maxiter} iterations"
        print(f"error: initialization did not converge: {reason}", file=sys.stderr)
        return 1
    return 0


def cmd_simulate(args) -> int:
    spec = _spec(args)
    if not args.step > 0 or args.periods < 1:
        raise InputError("--step must be positive and --periods at least 1")
    layout = build_layout(spec)
    try:
        X = read_solution(args.solution, layout)
    except (OSError, LayoutError, KeyError, ValueError) as exc:
        raise InputError(f"cannot read solution: {exc}") from None
    sys_ = build_system(spec, args.step, free_run=True)
    start = unpack(X, layout, sys_)
    n_steps = int(math.ceil(args.periods * spec.period / args.step - 1e-9))
    try:
        rec = simulate(sys_, start, n_steps, record="all")
    except StepFailure as exc:
        print(f"error: simulation failed: {exc}", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    shown_cols = [c for c in DEFAULT_COLUMNS if c in rec.state_names]
    rec.write_csv(os.path.join(args.out, "waveforms.csv"), columns=[], states=shown_cols)
    rec.write_csv(os.path.join(args.out, "states.csv"), columns=[], states=rec.state_names)
    rec.write_csv(os.path.join(args.out, "terminals.csv"))
    sys_.apply_state(start)
    bounds = period_boundary_states(rec, sys_)
    with open(os.path.join(args.out, "boundaries.csv"), "w") as fh:
        fh.write("period," + ",".join(rec.state_names) + "\n")
        for n, row in enumerate(bounds):
            fh.write(f"{n}," + ",".join(repr(float(v)) for v in row) + "\n")
    print(f"simulated {args.periods} periods, {n_steps} steps of {args.step:g} s")
    print(f"wrote {', '.join(['waveforms.csv', 'states.csv', 'terminals.csv', 'boundaries.csv'])}")
    return 0


def cmd_report(args) -> int:
    path = os.path.join(args.dir, "states.csv")
    if not os.path.exists(path):
        path = os.path.join(args.dir, "waveforms.csv")
    try:
        t, cols = read_waveform_csv(path)
    except (OSError, ValueError, IndexError) as exc:
        raise InputError(f"cannot read waveforms: {exc}") from None
    period = 1.0 / args.freq
    omega0 = 2 * math.pi * args.freq
    dt = float(t[1] - t[0])
    n_per = int(math.floor((t[-1] - t[0]) / period + 1e-9))
    if n_per < 1:
        raise InputError("waveforms span less than one period")
    tb = t[0] + period * np.arange(n_per + 1)
    drift_rows, harm_rows = [], []
    for name, x in cols.items():
        xb = CubicSpline(t, x)(tb)
        per_period = np.diff(xb)
        rel = float(periodicity_drift(xb[:, None], np.array([np.max(np.abs(x))]))[0])
        drift_rows.append((name, rel, per_period))
        w = WaveRecord(x, dt, float(t[0]))
        harm_rows.append((name, [harmonic_magnitude(w, omega0, h) for h in range(4)]))
    with open(os.path.join(args.dir, "drift.csv"), "w") as fh:
        fh.write("name,max_relative_drift," + ",".join(f"change_{i + 1}" for i in range(n_per))
                 + "\n")
        for name, rel, pp in drift_rows:
            fh.write(f"{name},{rel!r}," + ",".join(repr(float(v)) for v in pp) + "\n")
    with open(os.path.join(args.dir, "harmonics.csv"), "w") as fh:
        fh.write("name,h0,h1,h2,h3\n")
        for name, mags in harm_rows:
            fh.write(name + "," + ",".join(repr(float(v)) for v in mags) + "\n")
    shown = [r for r in drift_rows if r[0] in DEFAULT_COLUMNS] or drift_rows[:5]
    print(f"{'quantity':<14}{'max rel. drift':>16}{'2nd harmonic':>16}")
    harm = dict(harm_rows)
    for name, rel, pp in shown:
        print(f"{name:<14}{rel:>16.3e}{harm[name][2]:>16.3e}")
    worst = max(drift_rows, key=lambda r: r[1] if not r[0].endswith("theta_r") else -1)
    print(f"largest drift among periodic quantities: {worst[0]} {worst[1]:.3e}")
    print("wrote drift.csv, harmonics.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emtinit", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("system", help="system file or bundled system name")
        sp.add_argument("--k", type=float, help="override every load's unbalance factor")
        sp.add_argument("--out", default=".", help="output directory")

    sp = sub.add_parser("init", help="find the periodic steady state")
    common(sp)
    sp.add_argument("--step-frac", type=int, help="integration steps per period (default 25)")
    sp.add_argument("--tol", type=float, help="Newton tolerance on |F|")
    sp.add_argument("--reltol", type=float, help="GMRES relative tolerance")
    sp.add_argument("--eps", type=float, help="finite-difference perturbation")
    sp.add_argument("--maxiter", type=int, help="Newton iteration limit")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--precondition", dest="precondition", action="store_true", default=None)
    g.add_argument("--no-precondition", dest="precondition", action="store_false")
    sp.add_argument("--no-refine", action="store_true",
                    help="skip the unbalanced refinement of the initial guess")
    sp.set_defaults(func=cmd_init)

    sp = sub.add_parser("simulate", help="free run from a solution")
    common(sp)
    sp.add_argument("--solution", required=True, help="solution.csv written by init")
    sp.add_argument("--step", type=float, default=250e-6, help="step size in seconds")
    sp.add_argument("--periods", type=int, default=5)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("report", help="drift and harmonic tables")
    sp.add_argument("dir", help="directory holding waveform CSVs from simulate")
    sp.add_argument("--freq", type=float, default=60.0, help="nominal frequency (Hz)")
    sp.set_defaults(func=cmd_report)
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
