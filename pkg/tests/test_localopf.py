import json

import numpy as np
import pytest
from conftest import case, local

from opfbound.errors import ConventionMismatch, NoConvergence, ParseError
from opfbound.localopf import DualSet, LocalSolution, bound_at, lift_duals, solve_local
from opfbound.relaxations import power_flow_violation

# published MATPOWER optima for the standard systems, $/h
REFERENCE = {"case9": 5296.6862, "case14": 8081.5259, "case30": 576.8917, "case118": 129660.6947}


@pytest.mark.parametrize("name", sorted(REFERENCE))
def test_matches_reference_objective(name):
    assert local(name).objective == pytest.approx(REFERENCE[name], rel=1e-5)


@pytest.mark.parametrize("name", ["case2", "case4", "case9", "case14", "case30", "case118"])
def test_feasible(name):
    c, sol = case(name), local(name)
    assert power_flow_violation(c, sol.x) <= 1e-6
    vmin, vmax = c.vlimits()
    assert np.all(sol.vm >= vmin - 1e-7) and np.all(sol.vm <= vmax + 1e-7)
    for g, p, q in zip(c.gens, sol.Pg, sol.Qg):
        assert g.Pmin - 1e-7 <= p <= g.Pmax + 1e-7
        assert g.Qmin - 1e-7 <= q <= g.Qmax + 1e-7
    assert sol.objective == pytest.approx(c.cost(sol.Pg))
    assert abs(sol.va[c.ref_pos]) <= 1e-12


@pytest.mark.parametrize("name", ["case2", "case9", "case14", "case118"])
def test_dual_objective_matches_at_kkt_point(name):
    # complementary slackness makes the dual objective equal the cost at a KKT point
    sol = local(name)
    assert bound_at(case(name), sol.duals) == pytest.approx(sol.objective, rel=1e-6)


def test_lifted_duals_nonnegative():
    d = local("case30").duals
    for key in DualSet.SCALARS_BUS + DualSet.SCALARS_BRANCH:
        assert np.all(getattr(d, key) >= 0), key
    for H in (d.Hf, d.Ht):
        assert np.all(np.linalg.eigvalsh(H) >= -1e-12)
    assert np.all(np.linalg.eigvalsh(d.R) >= -1e-12)


def test_warm_start_converges_fast():
    c = case("case14")
    cold = local("case14")
    warm = solve_local(c, start=cold.x)
    assert warm.objective == pytest.approx(cold.objective, rel=1e-8)
    assert warm.iterations <= cold.iterations


def test_iteration_cap():
    with pytest.raises(NoConvergence):
        solve_local(case("case30"), max_iter=2)


def test_json_round_trip():
    sol = local("case9")
    back = LocalSolution.from_json(sol.to_json())
    np.testing.assert_array_equal(back.x, sol.x)
    assert back.objective == sol.objective
    np.testing.assert_array_equal(back.duals.stacked(), sol.duals.stacked())


def test_raw_format_is_lifted():
    c = case("case9")
    sol = local("case9")
    raw = {"format": "opfbound.raw_local_solution", "vm": sol.vm.tolist(), "va": sol.va.tolist(),
           "Pg": sol.Pg.tolist(), "Qg": sol.Qg.tolist(),
           "multipliers": {k: np.asarray(v).tolist() for k, v in sol.raw.items()}}
    back = LocalSolution.from_json(json.dumps(raw), c)
    np.testing.assert_allclose(back.duals.stacked(), sol.duals.stacked(), atol=1e-10)
    with pytest.raises(ParseError):
        LocalSolution.from_json(json.dumps(raw))


@pytest.mark.parametrize("text", ["not json", '{"format": "other"}', '{"format": "opfbound.local_solution"}'])
def test_malformed(text):
    with pytest.raises(ParseError):
        LocalSolution.from_json(text)


def test_sign_convention_checked():
    c = case("case9")
    sol = local("case9")
    raw = {k: np.array(v, dtype=float) for k, v in sol.raw.items()}
    raw["mu_Vmax"][0] = -1.0
    with pytest.raises(ConventionMismatch):
        lift_duals(c, raw, sol.x, sol.Pg)


def test_dual_set_helpers():
    d = DualSet.zeros(3, 2)
    assert d.R[:, 0, 0].tolist() == [1.0, 1.0, 1.0]
    e = d.copy()
    e.lam_hi[0] = 5.0
    assert d.lam_hi[0] == 0.0
    assert DualSet.from_dict(e.to_dict()).lam_hi[0] == 5.0
    assert len(d.stacked()) == 6 * 3 + 2 * 2 + 2 * 2 * 6 + 3 * 3
