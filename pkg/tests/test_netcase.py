import math

import numpy as np
import pytest
from conftest import case, random_x
from hypothesis import given, settings
from hypothesis import strategies as st

from opfbound.errors import DegenerateBranch, ParseError, ValidationError
from opfbound.netcase import (
    Branch,
    Bus,
    Gen,
    NetworkCase,
    branch_flows,
    build_admittance,
    bundled_cases,
    format_case,
    load_case,
    parse_case,
)

HEADER = """function mpc = tiny
mpc.version = '2';
mpc.baseMVA = 100;
"""

BUS2 = """mpc.bus = [
    1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
    2 1 50 10 0 0 1 1 0 230 1 1.1 0.9;
];
"""

GEN1 = """mpc.gen = [
    1 0 0 100 -100 1 100 1 200 0;
];
"""

BRANCH1 = """mpc.branch = [
    1 2 0 0.1 0 0 0 0 0 0 1 -360 360;
];
"""


def tiny(gen=GEN1, branch=BRANCH1, bus=BUS2, extra=""):
    return parse_case(HEADER + bus + gen + branch + extra)


def test_four_bus_ring():
    c = load_case("case4")
    assert c.n == 4
    assert len(c.branches) == 4
    f, t = c.branch_ends()
    assert sorted(tuple(sorted(e)) for e in zip(f.tolist(), t.tolist())) == [(0, 1), (0, 3), (1, 2), (2, 3)]


def test_missing_gencost_defaults_to_zero_cost():
    c = tiny()
    g = c.gens[0]
    assert (g.c2, g.c1, g.c0) == (0.0, 0.0, 0.0)


def test_nine_bus_per_unit():
    c = case("case9")
    assert c.base_mva == 100
    assert len(c.gens) == 3
    assert len(c.branches) == 9
    k = c.bus_pos[5]
    assert c.buses[k].Pd == pytest.approx(90 / 100)
    assert c.buses[k].Qd == pytest.approx(30 / 100)


def test_cost_rescaled_to_per_unit():
    text = "mpc.gencost = [\n 2 0 0 3 0.01 10 5;\n];\n"
    g = tiny(extra=text).gens[0]
    # c2 * (100 p)^2 + c1 * (100 p) + c0
    assert (g.c2, g.c1, g.c0) == pytest.approx((100.0, 1000.0, 5.0))


def test_angles_in_radians_with_default():
    c = case("case9")
    assert all(b.theta_max == pytest.approx(math.pi / 3) for b in c.branches)
    text = BRANCH1.replace("-360 360", "-30 30")
    b = tiny(branch=text).branches[0]
    assert (b.theta_min, b.theta_max) == pytest.approx((-math.pi / 6, math.pi / 6))


def test_single_branch_admittance():
    Y = build_admittance(tiny()).Y.toarray()
    np.testing.assert_allclose(Y, [[-10j, 10j], [10j, -10j]], atol=1e-14)


def test_four_bus_sparsity():
    c = case("case4")
    Y = build_admittance(c).Y.toarray()
    p = c.bus_pos
    assert Y[p[1], p[3]] == 0 and Y[p[3], p[1]] == 0
    assert Y[p[2], p[4]] == 0 and Y[p[4], p[2]] == 0
    assert Y[p[1], p[2]] != 0


def _branch_oracle(c, V):
    """Per-bus injections summed branch by branch from the two-port model."""
    pos = c.bus_pos
    S = np.zeros(c.n, dtype=complex)
    for br in c.branches:
        f, t = pos[br.from_bus], pos[br.to_bus]
        ys = 1 / complex(br.r, br.x)
        a = br.tap * np.exp(1j * br.shift)
        If = (ys + 0.5j * br.b_sh) / abs(a) ** 2 * V[f] - ys / np.conj(a) * V[t]
        It = -ys / a * V[f] + (ys + 0.5j * br.b_sh) * V[t]
        S[f] += V[f] * np.conj(If)
        S[t] += V[t] * np.conj(It)
    for k, b in enumerate(c.buses):
        S[k] += abs(V[k]) ** 2 * np.conj(complex(b.Gs, b.Bs))
    return S


@pytest.mark.parametrize("name", ["case9", "case14", "case30", "case118"])
def test_injections_match_branch_oracle(name, rng):
    c = case(name)
    Y = build_admittance(c).Y
    for V in [np.ones(c.n, dtype=complex), *(random_x(rng, c.n) for _ in range(5))]:
        if V.dtype != complex:
            V = V[: c.n] + 1j * V[c.n :]
        S = V * np.conj(Y @ V)
        ref = _branch_oracle(c, V)
        assert np.max(np.abs(S - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_branch_flows_sum_to_injection(rng):
    c = case("case30")
    adm = build_admittance(c)
    x = random_x(rng, c.n)
    V = x[: c.n] + 1j * x[c.n :]
    Sf, St = branch_flows(adm, V)
    S = np.zeros(c.n, dtype=complex)
    np.add.at(S, adm.f, Sf)
    np.add.at(S, adm.t, St)
    S += np.abs(V) ** 2 * np.conj(adm.ysh)
    np.testing.assert_allclose(S, V * np.conj(adm.Y @ V), atol=1e-11)


def test_admittance_symmetric_without_transformers():
    Y = build_admittance(case("case4")).Y
    assert abs(Y - Y.T).max() == 0


@pytest.mark.parametrize("name", bundled_cases())
def test_round_trips(name):
    c = case(name)
    assert NetworkCase.from_json(c.to_json()) == c
    again = parse_case(format_case(c), name=c.name)
    assert again == c


@pytest.mark.parametrize(
    "text, exc",
    [
        (HEADER + BUS2 + GEN1, ParseError),
        (HEADER + BUS2 + GEN1 + BRANCH1 + "mpc.areas = [1 1];\n", ParseError),
        (HEADER + BUS2 + GEN1 + BRANCH1.replace("1 2 0 0.1", "1 7 0 0.1"), (ParseError, ValidationError)),
        (HEADER + BUS2.replace("2 1 50", "2 3 50") + GEN1 + BRANCH1, ValidationError),
        (HEADER + BUS2 + GEN1 + BRANCH1.replace("0 0.1 0", "0 0.1 x"), ParseError),
        (HEADER + BUS2 + GEN1 + BRANCH1 + "mpc.gencost = [\n 1 0 0 2 0 0 10 5;\n];\n", ValidationError),
        (HEADER + BUS2 + GEN1 + BRANCH1 + "mpc.gencost = [\n 2 0 0 3 -1 10 5;\n];\n", ValidationError),
    ],
    ids=["no-branch-block", "unknown-statement", "unknown-bus", "two-slacks", "bad-number", "piecewise",
         "negative-c2"],
)
def test_rejects(text, exc):
    with pytest.raises(exc):
        parse_case(text)


def test_degenerate_branch():
    c = tiny(branch=BRANCH1.replace("0 0.1 0", "0 0 0"))
    with pytest.raises(DegenerateBranch):
        build_admittance(c)


def test_validation_of_limits():
    bus = (Bus(1, "slack", 0, 0, 0.9, 1.1), Bus(2, "PQ", 0.5, 0, 1.2, 1.1))
    with pytest.raises(ValidationError):
        NetworkCase(100.0, bus, (Gen(1, 0, 1, -1, 1),), (Branch(1, 2, 0, 0.1),), ref_bus=1)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.001, 0.5), st.floats(0.01, 1.0), st.floats(0.0, 0.5), st.floats(0.9, 1.1),
       st.floats(-0.5, 0.5))
def test_two_port_matches_oracle(r, x, b, tap, shift):
    bus = (Bus(1, "slack", 0, 0, 0.9, 1.1), Bus(2, "PQ", 0.5, 0.1, 0.9, 1.1, Gs=0.01, Bs=0.02))
    c = NetworkCase(100.0, bus, (Gen(1, 0, 1, -1, 1),), (Branch(1, 2, r, x, b, tap, shift),), ref_bus=1)
    V = np.array([1.02 * np.exp(0.1j), 0.97 * np.exp(-0.2j)])
    S = V * np.conj(build_admittance(c).Y @ V)
    np.testing.assert_allclose(S, _branch_oracle(c, V), rtol=1e-12, atol=1e-12)
