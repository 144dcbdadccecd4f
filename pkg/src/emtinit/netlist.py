"""System description: data model, text format, validation and load allocation.

A system file is line oriented.  ``#`` starts a comment, fields are separated
by whitespace and every record belongs to the section opened by the most
recent header line.  Field order per section::

    [SOLVER]   key value                  (base_mva, freq, steps_per_period,
                                           tolerance, reltol, eps, maxiter,
                                           precondition, m_max)
    [BUS]      id kv [shunt_b]
    [BRANCH]   id kind from to r x b [ratio]        kind = line | xfmr
    [GEN]      id bus mva ra xl xd xq xdp xqp xdpp xqpp td0p tq0p td0pp tq0pp h d
    [MOTOR]    id bus mva rs xls rr xlr xm h d [connection]
    [LOAD]     id bus p q [alloc_k [kps kpi kpz kqs kqi kqz]]
    [PFCOND]   device VTHETA v theta_deg
               device PV p v
               device PQ scope [p0 q0]            scope = per-phase | positive-sequence
               device MOTORP p

Network and load quantities are per unit on ``base_mva``.  Machine records are
per unit on their own rating ``mva`` and are converted to the system base on
parse.  Angles in the file are in degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Iterable

from .solver import SolverOptions

SECTIONS = ("SOLVER", "BUS", "BRANCH", "GEN", "MOTOR", "LOAD", "PFCOND")


class NetlistError(ValueError):
    """Raised for malformed system files."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class ZipCoeffs:
    kps: float = 1.0
    kpi: float = 0.0
    kpz: float = 0.0
    kqs: float = 1.0
    kqi: float = 0.0
    kqz: float = 0.0

    def as_tuple(self) -> tuple[float, ...]:
        return (self.kps, self.kpi, self.kpz, self.kqs, self.kqi, self.kqz)

    @property
    def is_constant_power(self) -> bool:
        return self.as_tuple() == (1.0, 0.0, 0.0, 1.0, 0.0, 0.0)


@dataclass(frozen=True)
class BusSpec:
    id: str
    base_kv: float
    shunt_b: float = 0.0


@dataclass(frozen=True)
class BranchSpec:
    id: str
    kind: str
    from_bus: str
    to_bus: str
    r: float
    x: float
    b: float = 0.0
    ratio: float = 1.0


@dataclass(frozen=True)
class GenSpec:
    """Synchronous machine, all reactances and H, D on the system base."""

    id: str
    bus: str
    ra: float
    xl: float
    xd: float
    xq: float
    xdp: float
    xqp: float
    xdpp: float
    xqpp: float
    td0p: float
    tq0p: float
    td0pp: float
    tq0pp: float
    h: float
    d: float = 0.0


@dataclass(frozen=True)
class MotorSpec:
    """Induction machine, impedances and H, D on the system base."""

    id: str
    bus: str
    rs: float
    xls: float
    rr: float
    xlr: float
    xm: float
    h: float
    d: float = 0.0
    connection: str = "floatingY"


@dataclass(frozen=True)
class LoadSpec:
    id: str
    bus: str
    s_total: complex
    zip: ZipCoeffs = field(default_factory=ZipCoeffs)
    alloc_k: float = 0.0


@dataclass(frozen=True)
class PFCondition:
    """Power-flow condition attached to one device.

    ``kind`` is one of ``VTHETA`` (v, theta), ``PV`` (p, v), ``PQ`` (p, q, zip,
    scope) or ``MOTORP`` (p).  Unused fields stay at zero.
    """

    device: str
    kind: str
    v: float = 0.0
    theta: float = 0.0
    p: float = 0.0
    q: float = 0.0
    zip: ZipCoeffs = field(default_factory=ZipCoeffs)
    scope: str = "positive-sequence"


@dataclass(frozen=True)
class SystemSpec:
    base_mva: float
    nominal_freq: float
    buses: tuple[BusSpec, ...]
    branches: tuple[BranchSpec, ...]
    generators: tuple[GenSpec, ...]
    motors: tuple[MotorSpec, ...]
    loads: tuple[LoadSpec, ...]
    conditions: tuple[PFCondition, ...]
    solver: SolverOptions = field(default_factory=SolverOptions)
    steps_per_period: int = 25

    @property
    def period(self) -> float:
        return 1.0 / self.nominal_freq

    @property
    def omega0(self) -> float:
        return 2.0 * math.pi * self.nominal_freq

    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def device(self, device_id: str):
        for dev in (*self.generators, *self.motors, *self.loads):
            if dev.id == device_id:
                return dev
        raise KeyError(device_id)

    def condition_for(self, device_id: str) -> PFCondition | None:
        for cond in self.conditions:
            if cond.device == device_id:
                return cond
        return None

    def with_unbalance(self, k: float) -> "SystemSpec":
        """Copy with every load's allocation factor replaced by ``k``."""
        loads = tuple(replace(ld, alloc_k=k) for ld in self.loads)
        return replace(self, loads=loads)


def allocate_load(s: complex, k: float) -> tuple[complex, complex, complex]:
    """Split a three-phase load ``s`` over phases A, B, C with factor ``k``.

    Phase A takes (1-k)/3, B one third and C (1+k)/3.  Phase C is computed as
    the remainder so the three shares add back to ``s`` up to rounding.
    """
    if not abs(k) < 1.0:
        raise ValueError(f"allocation factor must satisfy |k| < 1, got {k}")
    s = complex(s)
    sa = (1.0 - k) * s / 3.0
    sb = s / 3.0
    sc = s - sa - sb
    return sa, sb, sc


# ---------------------------------------------------------------- parsing

_GEN_FIELDS = ("ra", "xl", "xd", "xq", "xdp", "xqp", "xdpp", "xqpp",
               "td0p", "tq0p", "td0pp", "tq0pp", "h", "d")
_GEN_IMPEDANCES = {"ra", "xl", "xd", "xq", "xdp", "xqp", "xdpp", "xqpp"}
_MOTOR_FIELDS = ("rs", "xls", "rr", "xlr", "xm", "h", "d")
_SOLVER_KEYS = {
    "tolerance": float, "reltol": float, "eps": float, "maxiter": int,
    "precondition": lambda s: bool(int(s)), "m_max": int,
}


def _num(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise NetlistError(f"expected a number, got {tok!r}", lineno) from None


def _need(fields: list[str], n: int, what: str, lineno: int) -> None:
    if len(fields) < n:
        raise NetlistError(f"{what} record needs at least {n} fields, got {len(fields)}",
                           lineno)


def parse_system(text: str) -> SystemSpec:
    """Parse a system file into a per-unit :class:`SystemSpec`."""
    section = None
    base_mva = 100.0
    freq = 60.0
    steps = 25
    solver_kw: dict = {}
    buses, branches, raw_gens, raw_motors, loads, conds = [], [], [], [], [], []
    seen: dict[str, int] = {}

    def register(dev_id: str, lineno: int, namespace: str) -> None:
        key = f"{namespace}:{dev_id}"
        if key in seen:
            raise NetlistError(f"duplicate id {dev_id!r} (first defined on line {seen[key]})",
                               lineno)
        seen[key] = lineno

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise NetlistError(f"malformed section header {line!r}", lineno)
            name = line[1:-1].strip().upper()
            if name not in SECTIONS:
                raise NetlistError(f"unknown section [{name}]", lineno)
            section = name
            continue
        if section is None:
            raise NetlistError("record outside of any section", lineno)
        f = line.split()

        if section == "SOLVER":
            if len(f) != 2:
                raise NetlistError("solver records are 'key value' pairs", lineno)
            key, val = f[0].lower(), f[1]
            try:
                if key == "base_mva":
                    base_mva = float(val)
                elif key == "freq":
                    freq = float(val)
                elif key == "steps_per_period":
                    steps = int(val)
                elif key in _SOLVER_KEYS:
                    solver_kw[key] = _SOLVER_KEYS[key](val)
                else:
                    raise NetlistError(f"unknown solver key {key!r}", lineno)
            except ValueError:
                raise NetlistError(f"bad value {val!r} for {key}", lineno) from None

        elif section == "BUS":
            _need(f, 2, "BUS", lineno)
            register(f[0], lineno, "bus")
            shunt = _num(f[2], lineno) if len(f) > 2 else 0.0
            buses.append(BusSpec(f[0], _num(f[1], lineno), shunt))

        elif section == "BRANCH":
            _need(f, 7, "BRANCH", lineno)
            register(f[0], lineno, "branch")
            kind = f[1].lower()
            if kind not in ("line", "xfmr"):
                raise NetlistError(f"branch kind must be line or xfmr, got {f[1]!r}", lineno)
            ratio = _num(f[7], lineno) if len(f) > 7 else 1.0
            branches.append(BranchSpec(f[0], kind, f[2], f[3], _num(f[4], lineno),
                                       _num(f[5], lineno), _num(f[6], lineno), ratio))

        elif section == "GEN":
            _need(f, 3 + len(_GEN_FIELDS) - 1, "GEN", lineno)
            register(f[0], lineno, "device")
            vals = [_num(t, lineno) for t in f[2:]]
            raw_gens.append((f[0], f[1], vals, lineno))

        elif section == "MOTOR":
            _need(f, 3 + len(_MOTOR_FIELDS) - 1, "MOTOR", lineno)
            register(f[0], lineno, "device")
            n_num = 1 + len(_MOTOR_FIELDS)
            vals = [_num(t, lineno) for t in f[2:2 + n_num]]
            conn = f[2 + n_num] if len(f) > 2 + n_num else "floatingY"
            raw_motors.append((f[0], f[1], vals, conn, lineno))

        elif section == "LOAD":
            _need(f, 4, "LOAD", lineno)
            if len(f) not in (4, 5, 11):
                raise NetlistError("LOAD record takes 4, 5 or 11 fields", lineno)
            register(f[0], lineno, "device")
            s = complex(_num(f[2], lineno), _num(f[3], lineno))
            k = _num(f[4], lineno) if len(f) > 4 else 0.0
            zc = ZipCoeffs(*[_num(t, lineno) for t in f[5:11]]) if len(f) == 11 else ZipCoeffs()
            loads.append(LoadSpec(f[0], f[1], s, zc, k))

        elif section == "PFCOND":
            _need(f, 2, "PFCOND", lineno)
            kind = f[1].upper()
            if kind == "VTHETA":
                _need(f, 4, "VTHETA", lineno)
                conds.append(PFCondition(f[0], kind, v=_num(f[2], lineno),
                                         theta=math.radians(_num(f[3], lineno))))
            elif kind == "PV":
                _need(f, 4, "PV", lineno)
                conds.append(PFCondition(f[0], kind, p=_num(f[2], lineno),
                                         v=_num(f[3], lineno)))
            elif kind == "PQ":
                _need(f, 3, "PQ", lineno)
                scope = f[2].lower()
                if scope not in ("per-phase", "positive-sequence"):
                    raise NetlistError(f"unknown PQ scope {f[2]!r}", lineno)
                p0 = _num(f[3], lineno) if len(f) > 3 else math.nan
                q0 = _num(f[4], lineno) if len(f) > 4 else math.nan
                conds.append(PFCondition(f[0], kind, p=p0, q=q0, scope=scope))
            elif kind == "MOTORP":
                _need(f, 3, "MOTORP", lineno)
                conds.append(PFCondition(f[0], kind, p=_num(f[2], lineno)))
            else:
                raise NetlistError(f"unknown condition kind {f[1]!r}", lineno)
            register(f[0], lineno, "cond")

    gens = []
    for gid, bus, vals, lineno in raw_gens:
        mva, rest = vals[0], vals[1:]
        if mva <= 0:
            raise NetlistError("machine rating must be positive", lineno)
        zscale, mscale = base_mva / mva, mva / base_mva
        kw = {}
        for name, v in zip(_GEN_FIELDS, rest):
            if name in _GEN_IMPEDANCES:
                kw[name] = v * zscale
            elif name in ("h", "d"):
                kw[name] = v * mscale
            else:
                kw[name] = v
        gens.append(GenSpec(gid, bus, **kw))

    motors = []
    for mid, bus, vals, conn, lineno in raw_motors:
        mva, rest = vals[0], vals[1:]
        if mva <= 0:
            raise NetlistError("machine rating must be positive", lineno)
        zscale, mscale = base_mva / mva, mva / base_mva
        kw = {name: (v * mscale if name in ("h", "d") else v * zscale)
              for name, v in zip(_MOTOR_FIELDS, rest)}
        motors.append(MotorSpec(mid, bus, connection=conn, **kw))

    # PQ targets default to the load record they are attached to
    load_by_id = {ld.id: ld for ld in loads}
    filled = []
    for c in conds:
        if c.kind == "PQ" and c.device in load_by_id:
            ld = load_by_id[c.device]
            p0 = ld.s_total.real if math.isnan(c.p) else c.p
            q0 = ld.s_total.imag if math.isnan(c.q) else c.q
            c = replace(c, p=p0, q=q0, zip=ld.zip)
        elif c.kind == "PQ" and (math.isnan(c.p) or math.isnan(c.q)):
            raise NetlistError(f"PQ condition on {c.device!r} needs explicit p0 q0")
        filled.append(c)

    if not any(c.kind == "VTHETA" for c in filled):
        raise NetlistError("no angle reference device (a VTHETA condition is required)")

    return SystemSpec(
        base_mva=base_mva, nominal_freq=freq, buses=tuple(buses), branches=tuple(branches),
        generators=tuple(gens), motors=tuple(motors), loads=tuple(loads),
        conditions=tuple(filled), solver=SolverOptions(**solver_kw), steps_per_period=steps,
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize_system(spec: SystemSpec) -> str:
    """Write ``spec`` in the text format; machines are emitted on the system base."""
    out = ["[SOLVER]", f"base_mva {_fmt(spec.base_mva)}", f"freq {_fmt(spec.nominal_freq)}",
           f"steps_per_period {spec.steps_per_period}"]
    o = spec.solver
    out += [f"tolerance {_fmt(o.tolerance)}", f"reltol {_fmt(o.reltol)}",
            f"eps {_fmt(o.eps)}", f"maxiter {o.maxiter}",
            f"precondition {int(o.precondition)}"]
    if o.m_max is not None:
        out.append(f"m_max {o.m_max}")
    out.append("[BUS]")
    out += [f"{b.id} {_fmt(b.base_kv)} {_fmt(b.shunt_b)}" for b in spec.buses]
    out.append("[BRANCH]")
    out += [f"{br.id} {br.kind} {br.from_bus} {br.to_bus} {_fmt(br.r)} {_fmt(br.x)} "
            f"{_fmt(br.b)} {_fmt(br.ratio)}" for br in spec.branches]
    out.append("[GEN]")
    for g in spec.generators:
        vals = " ".join(_fmt(getattr(g, n)) for n in _GEN_FIELDS)
        out.append(f"{g.id} {g.bus} {_fmt(spec.base_mva)} {vals}")
    out.append("[MOTOR]")
    for m in spec.motors:
        vals = " ".join(_fmt(getattr(m, n)) for n in _MOTOR_FIELDS)
        out.append(f"{m.id} {m.bus} {_fmt(spec.base_mva)} {vals} {m.connection}")
    out.append("[LOAD]")
    for ld in spec.loads:
        z = " ".join(_fmt(v) for v in ld.zip.as_tuple())
        out.append(f"{ld.id} {ld.bus} {_fmt(ld.s_total.real)} {_fmt(ld.s_total.imag)} "
                   f"{_fmt(ld.alloc_k)} {z}")
    out.append("[PFCOND]")
    for c in spec.conditions:
        if c.kind == "VTHETA":
            out.append(f"{c.device} VTHETA {_fmt(c.v)} {_fmt(math.degrees(c.theta))}")
        elif c.kind == "PV":
            out.append(f"{c.device} PV {_fmt(c.p)} {_fmt(c.v)}")
        elif c.kind == "PQ":
            out.append(f"{c.device} PQ {c.scope} {_fmt(c.p)} {_fmt(c.q)}")
        else:
            out.append(f"{c.device} MOTORP {_fmt(c.p)}")
    return "\n".join(out) + "\n"


def load_bundled(name: str) -> SystemSpec:
    """Parse one of the systems shipped in ``emtinit/data`` (e.g. ``wscc9_unbalanced``)."""
    path = resources.files("emtinit").joinpath("data", f"{name}.net")
    if not path.is_file():
        raise FileNotFoundError(f"no bundled system named {name!r}")
    return parse_system(path.read_text(encoding="utf-8"))


def read_system(path_or_name: str) -> SystemSpec:
    """Read a system from a file path, falling back to the bundled systems."""
    import os

    if os.path.exists(path_or_name):
        with open(path_or_name, encoding="utf-8") as fh:
            return parse_system(fh.read())
    return load_bundled(path_or_name)


# ---------------------------------------------------------------- validation

def residual_count(spec: SystemSpec, cond: PFCondition) -> int:
    """Number of power-flow residuals contributed by one condition."""
    if cond.kind in ("VTHETA", "PV"):
        return 2
    if cond.kind == "MOTORP":
        return 1
    load = spec.device(cond.device)
    if cond.scope == "positive-sequence":
        return 2 if not isinstance(load, LoadSpec) else 1 + (cond.q != 0.0)
    shares = allocate_load(complex(cond.p, cond.q), load.alloc_k)
    return sum(1 + (s.imag != 0.0) for s in shares)


def free_count(spec: SystemSpec) -> int:
    """Number of dependent parameters plus external inputs."""
    n = 2 * len(spec.generators) + len(spec.motors)
    for ld in spec.loads:
        cond = spec.condition_for(ld.id)
        if cond is None or cond.kind != "PQ":
            continue
        if cond.scope == "positive-sequence":
            n += 1 + (cond.q != 0.0)
        else:
            shares = allocate_load(complex(cond.p, cond.q), ld.alloc_k)
            n += sum(1 + (s.imag != 0.0) for s in shares)
    return n


def equation_balance(spec: SystemSpec) -> tuple[int, int]:
    """Return (power-flow residuals, dependent parameters + external inputs)."""
    n_res = 0
    for c in spec.conditions:
        try:
            n_res += residual_count(spec, c)
        except (KeyError, ValueError):
            continue
    return n_res, free_count(spec)


def _machine_diagnostics(g: GenSpec) -> Iterable[str]:
    for name in ("xl", "xd", "xq", "xdp", "xqp", "xdpp", "xqpp",
                 "td0p", "tq0p", "td0pp", "tq0pp", "h"):
        if not getattr(g, name) > 0:
            yield f"generator {g.id}: {name} must be strictly positive"
    if g.ra < 0 or g.d < 0:
        yield f"generator {g.id}: ra and d must be non-negative"
    if not (g.xdpp < g.xdp < g.xd):
        yield f"generator {g.id}: d-axis reactance ordering requires xdpp < xdp < xd"
    if not (g.xqpp < g.xqp < g.xq):
        yield f"generator {g.id}: q-axis reactance ordering requires xqpp < xqp < xq"
    if not (g.xl < g.xdpp and g.xl < g.xqpp):
        yield f"generator {g.id}: leakage reactance must be below the subtransient reactances"
    if not (g.td0pp < g.td0p and g.tq0pp < g.tq0p):
        yield f"generator {g.id}: subtransient time constants must be below transient ones"


def validate(spec: SystemSpec) -> list[str]:
    """Check the structural and physical invariants of ``spec``.

    Returns a list of human-readable diagnostics; an empty list means the
    system can be simulated and initialized.
    """
    diags: list[str] = []
    bus_ids = {b.id for b in spec.buses}
    if spec.base_mva <= 0 or spec.nominal_freq <= 0:
        diags.append("base_mva and freq must be positive")
    if spec.steps_per_period < 5:
        diags.append("steps_per_period must be at least 5")

    for b in spec.buses:
        if b.shunt_b < 0:
            diags.append(f"bus {b.id}: negative shunt susceptance")
    node_b = {b.id: b.shunt_b for b in spec.buses}
    for br in spec.branches:
        if br.from_bus not in bus_ids or br.to_bus not in bus_ids:
            diags.append(f"branch {br.id}: references unknown bus")
            continue
        if br.from_bus == br.to_bus:
            diags.append(f"branch {br.id}: both ends on bus {br.from_bus}")
        if not br.x > 0 or br.r < 0 or br.b < 0:
            diags.append(f"branch {br.id}: requires x > 0, r >= 0, b >= 0")
        if not br.ratio > 0:
            diags.append(f"branch {br.id}: ratio must be positive")
        node_b[br.from_bus] += br.b / 2
        node_b[br.to_bus] += br.b / 2
    for bid, btot in node_b.items():
        if not btot > 0:
            diags.append(f"bus {bid}: no shunt capacitance (line charging or shunt_b) "
                         "so its node voltage has no dynamic state")

    for g in spec.generators:
        if g.bus not in bus_ids:
            diags.append(f"generator {g.id}: references unknown bus {g.bus}")
        diags.extend(_machine_diagnostics(g))
    for m in spec.motors:
        if m.bus not in bus_ids:
            diags.append(f"motor {m.id}: references unknown bus {m.bus}")
        for name in ("rs", "xls", "rr", "xlr", "xm", "h"):
            if not getattr(m, name) > 0:
                diags.append(f"motor {m.id}: {name} must be strictly positive")
        if m.d < 0:
            diags.append(f"motor {m.id}: d must be non-negative")
        if m.connection != "floatingY":
            diags.append(f"motor {m.id}: unsupported stator connection {m.connection!r}")
    for ld in spec.loads:
        if ld.bus not in bus_ids:
            diags.append(f"load {ld.id}: references unknown bus {ld.bus}")
        if not abs(ld.alloc_k) < 1:
            diags.append(f"load {ld.id}: allocation factor must satisfy |k| < 1")
        if ld.s_total.real <= 0 or ld.s_total.imag < 0:
            diags.append(f"load {ld.id}: requires P > 0 and Q >= 0")

    kinds = {g.id: "gen" for g in spec.generators}
    kinds.update({m.id: "motor" for m in spec.motors})
    kinds.update({ld.id: "load" for ld in spec.loads})
    allowed = {"VTHETA": {"gen"}, "PV": {"gen"}, "PQ": {"gen", "load"}, "MOTORP": {"motor"}}
    for c in spec.conditions:
        kind = kinds.get(c.device)
        if kind is None:
            diags.append(f"condition on unknown device {c.device!r}")
        elif kind not in allowed[c.kind]:
            diags.append(f"condition {c.kind} cannot be attached to {kind} {c.device}")
        if c.kind == "PQ" and kind == "gen" and c.scope != "positive-sequence":
            diags.append(f"generator {c.device}: PQ conditions must be positive-sequence")
    n_ref = sum(c.kind == "VTHETA" for c in spec.conditions)
    if n_ref == 0:
        diags.append("no angle reference device")
    elif n_ref > 1:
        diags.append("multiple angle references")

    n_res, n_free = equation_balance(spec)
    if n_res != n_free:
        diags.append(f"equation balance violated: {n_res} power-flow residuals vs "
                     f"{n_free} dependent parameters and external inputs")
    return diags
