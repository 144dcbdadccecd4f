"""System file parsing, validation, load allocation and equation balance."""

import math
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from emtinit.netlist import (NetlistError, allocate_load, equation_balance, load_bundled,
                             parse_system, serialize_system, validate)

TWO_BUS = """
[BUS]
1 20 0.05
2 20 0.05
[BRANCH]
X12 line 1 2 0.01 0.1 0.02
[GEN]
G1 1 100 0.002 0.0787 1.575 1.512 0.291 0.39 0.1733 0.1733 6.1 1.0 0.05 0.15 4.0 0.1
[LOAD]
L2 2 0.5 0.2 0.0
[PFCOND]
G1 VTHETA 1.0 0
L2 PQ positive-sequence
"""


def test_bundled_system_contents(spec9):
    assert len(spec9.buses) == 9
    assert len(spec9.branches) == 9
    assert [g.id for g in spec9.generators] == ["G1", "G2", "G3"]
    assert [m.id for m in spec9.motors] == ["M5"]
    assert [ld.alloc_k for ld in spec9.loads] == [0.1, 0.1]
    assert spec9.steps_per_period == 25
    assert spec9.solver.tolerance == 1e-6
    assert validate(spec9) == []


def test_bundled_equation_balance(spec9):
    # 2 per generator, 1 for the motor, 6 per per-phase load
    assert equation_balance(spec9) == (19, 19)


def test_machine_data_converted_to_system_base():
    text = TWO_BUS.replace("G1 1 100 0.002", "G1 1 200 0.002")
    g = parse_system(text).generators[0]
    assert g.xd == pytest.approx(1.575 / 2)
    assert g.h == pytest.approx(8.0)


def test_pq_targets_default_to_load_record():
    spec = parse_system(TWO_BUS)
    c = spec.condition_for("L2")
    assert (c.p, c.q) == (0.5, 0.2)


@pytest.mark.parametrize("text, line, fragment", [
    ("[BUS]\n1 x\n", 2, "expected a number"),
    ("[NOPE]\n", 1, "unknown section"),
    ("1 20\n", 1, "outside of any section"),
    (TWO_BUS.replace("X12 line", "X12 cable"), 6, "branch kind"),
    (TWO_BUS + "G1 PV 1.0 1.0\n", 14, "duplicate"),
])
def test_parse_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(NetlistError) as err:
        parse_system(text)
    assert err.value.line == line
    assert fragment in str(err.value)


def test_missing_reference_is_rejected():
    with pytest.raises(NetlistError, match="VTHETA"):
        parse_system(TWO_BUS.replace("G1 VTHETA 1.0 0", "G1 PV 0.5 1.0"))


def test_validation_reports_physical_problems():
    spec = parse_system(TWO_BUS)
    g = replace(spec.generators[0], xdp=2.0)
    bad = replace(spec, generators=(g,))
    assert any("ordering" in d for d in validate(bad))
    bus = replace(spec.buses[0], shunt_b=0.0)
    br = replace(spec.branches[0], b=0.0)
    bad = replace(spec, buses=(bus, spec.buses[1]), branches=(br,))
    assert any("bus 1" in d for d in validate(bad))


def test_validation_reports_equation_imbalance():
    spec = parse_system(TWO_BUS)
    bad = replace(spec, conditions=spec.conditions[1:])
    assert any("equation balance" in d for d in validate(bad))


def test_bundled_system_round_trips(spec9):
    assert parse_system(serialize_system(spec9)) == spec9


@given(s_re=st.floats(0.01, 10), s_im=st.floats(0.0, 10), k=st.floats(-0.99, 0.99))
@settings(max_examples=300, deadline=None)
def test_allocation_sums_to_total(s_re, s_im, k):
    s = complex(s_re, s_im)
    sa, sb, sc = allocate_load(s, k)
    assert abs(sa + sb + sc - s) <= 4e-16 * abs(s)
    assert sa == pytest.approx((1 - k) * s / 3, abs=1e-15)
    assert sb == pytest.approx(s / 3, abs=1e-15)


def test_allocation_rejects_large_factor():
    with pytest.raises(ValueError):
        allocate_load(1 + 0.5j, 1.0)


@given(p=st.floats(0.1, 3), q=st.floats(0.0, 1.0), k=st.floats(-0.9, 0.9),
       b=st.floats(0.0, 0.5), h=st.floats(0.5, 10))
@settings(max_examples=60, deadline=None)
def test_serialization_is_a_fixed_point(p, q, k, b, h):
    spec = parse_system(TWO_BUS)
    ld = replace(spec.loads[0], s_total=complex(p, q), alloc_k=k)
    g = replace(spec.generators[0], h=h)
    bus = replace(spec.buses[1], shunt_b=b)
    spec = replace(spec, loads=(ld,), generators=(g,), buses=(spec.buses[0], bus))
    spec = parse_system(serialize_system(spec))
    text = serialize_system(spec)
    assert serialize_system(parse_system(text)) == text
    assert parse_system(text) == spec


def test_with_unbalance_changes_only_factors(spec9):
    s0 = spec9.with_unbalance(0.0)
    assert all(ld.alloc_k == 0.0 for ld in s0.loads)
    assert s0.buses == spec9.buses and s0.conditions == spec9.conditions
    assert math.isclose(s0.period, 1 / 60)
