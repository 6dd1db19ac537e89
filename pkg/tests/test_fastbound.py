import itertools
import math

import numpy as np
import pytest
from conftest import case, corrupted_local, full_sdp, local, model
from hypothesis import given, settings
from hypothesis import strategies as st

from opfbound import conic
from opfbound.errors import EmptyVector, ExhaustedEscalation
from opfbound.fastbound import (
    FAVORABLE_PSD_PERCENT,
    certificate_eigens,
    dual_correspondence,
    dual_correspondence_ratio,
    evaluate_dual_matrix,
    gap_percent,
    prescreen,
    restriction,
    run_algorithm1,
    select_problematic,
)
from opfbound.relaxations import SdpSolveResult


def psd_eigens(m):
    return np.linspace(0.1, 1.0, m)


def test_selection_count():
    sel = select_problematic(psd_eigens(10), 0.22)
    assert len(sel.selected) == 3
    assert sel.selected == (0, 1, 2)
    assert not sel.raised


def test_selection_all():
    assert len(select_problematic(psd_eigens(10), 1.0).selected) == 10


def test_selection_keeps_worst_when_empty():
    eig = np.array([0.5, 0.2, 0.9])
    sel = select_problematic(eig, 0.0)
    assert sel.selected == (1,)
    assert sel.kept_worst


def test_selection_raised_to_nonpsd_fraction():
    eig = np.array([-1.0, -0.5, 0.1, 0.2, -0.1, 0.3, 0.4, 0.5, 0.6, 0.7])
    sel = select_problematic(eig, 0.1)
    assert sel.raised
    assert sel.sigma_floor == pytest.approx(0.3)
    assert sel.selected == (0, 1, 4)


def test_selection_ties_by_index():
    sel = select_problematic(np.array([0.3, 0.1, 0.1, 0.1]), 0.5)
    assert sel.selected == (1, 2)


@pytest.mark.parametrize("sigma", [-0.1, 1.5])
def test_selection_rejects_sigma(sigma):
    with pytest.raises(ValueError):
        select_problematic(psd_eigens(4), sigma)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=30), st.floats(0, 1), st.floats(0, 1))
def test_selection_nested(eig, s1, s2):
    lo, hi = sorted([s1, s2])
    a = select_problematic(np.array(eig), lo)
    b = select_problematic(np.array(eig), hi)
    assert set(a.selected) <= set(b.selected)
    assert len(b.selected) >= min(len(eig), math.ceil(hi * len(eig) - 1e-9))


def test_selection_bus_and_branch_sets():
    c, m = case("case9"), model("case9")
    ev = evaluate_dual_matrix(m, local("case9").duals)
    sel = select_problematic(ev.eigens, 0.2, m.dec, c, nonpsd=ev.nonpsd())
    assert set(sel.buses) == {v for i in sel.selected for v in m.dec.cliques[i]}
    f, t = c.branch_ends()
    for e in range(len(c.branches)):
        assert (e in sel.branches) == (f[e] in sel.buses or t[e] in sel.buses)


def test_restriction_frees_link_and_selected():
    c, m = case("case14"), model("case14")
    sol = local("case14")
    ev = evaluate_dual_matrix(m, sol.duals)
    sel = select_problematic(ev.eigens, 0.2, m.dec, c, nonpsd=ev.nonpsd())
    fixed, values = restriction(m, sel, sol.duals)
    assert not np.any(fixed[m.link_vars()])
    for k in sel.buses:
        assert not np.any(fixed[m.bus_vars(k)])
    outside = [k for k in range(c.n) if k not in sel.buses]
    assert all(np.all(fixed[m.bus_vars(k)]) for k in outside)
    np.testing.assert_array_equal(values, m.y_from_duals(sol.duals))


def test_evaluation_zeroes_linking():
    m = model("case30")
    ev = evaluate_dual_matrix(m, local("case30").duals)
    assert np.all(ev.y[m.link_vars()] == 0)
    assert len(ev.blocks) == m.dec.m
    for B, e in zip(ev.blocks, ev.eigens):
        assert np.linalg.eigvalsh(B)[0] == pytest.approx(e)
    assert 0 <= ev.psd_percentage <= 100


@pytest.mark.parametrize("name", ["case9", "case14"])
def test_full_sigma_matches_sdp(name):
    rep = run_algorithm1(case(name), 1.0, local=local(name), model=model(name))
    assert rep.status == conic.OPTIMAL
    assert rep.bound == pytest.approx(full_sdp(name).bound, rel=1e-6)


def test_monotone_in_sigma():
    name = "case14"
    bounds = [run_algorithm1(case(name), s, local=local(name), model=model(name)).bound
              for s in (0.0, 0.4, 0.7, 1.0)]
    scale = abs(local(name).objective)
    assert all(b2 >= b1 - 1e-6 * scale for b1, b2 in itertools.pairwise(bounds))


def test_report_fields():
    name = "case9"
    rep = run_algorithm1(case(name), 0.2, local=local(name), model=model(name), compare_sdp=True)
    assert rep.optimality_gap_percent == (rep.local_objective - rep.bound) / rep.local_objective * 100
    assert rep.sigma == 0.2
    assert rep.sigma_used >= rep.sigma_floor
    assert rep.sdp_bound >= rep.bound - 1e-6 * rep.local_objective
    assert rep.dual_correspondence_ratio is not None and rep.dual_correspondence_ratio >= 0
    assert set(rep.timings) >= {"local", "decompose", "evaluate", "solve", "sdp"}
    d = rep.to_dict()
    assert "result" not in d and d["problematic"] == [int(i) for i in rep.problematic]
    for kind, ev, nrm in certificate_eigens(model(name), rep.result.y):
        assert ev >= -1e-7 * (1 + nrm)


def test_corrupted_duals_escalate():
    bad, _ = corrupted_local("case14")
    rep = run_algorithm1(case("case14"), 0.2, local=bad, model=model("case14"))
    assert rep.escalations >= 1
    assert rep.status == conic.OPTIMAL
    assert rep.bound <= local("case14").objective * (1 + 1e-6)


def test_exhausted_escalation():
    bad, _ = corrupted_local("case14")
    with pytest.raises(ExhaustedEscalation):
        run_algorithm1(case("case14"), 0.2, sigma_max=0.3, local=bad, model=model("case14"))


def test_non_optimal_status_gives_no_bound(monkeypatch):
    import opfbound.fastbound as fb

    monkeypatch.setattr(fb, "solve_simplified", lambda *a, **k: SdpSolveResult(conic.MAX_ITER, None))
    rep = fb.run_algorithm1(case("case9"), 0.2, local=local("case9"), model=model("case9"))
    assert rep.status == conic.MAX_ITER
    assert rep.bound is None and rep.optimality_gap_percent is None


def test_correspondence_identical():
    v = np.array([1.0, -2.0, 0.5])
    assert dual_correspondence(v, v) == (0.0, 0)


@pytest.mark.parametrize("L", [1, 4, 25])
def test_correspondence_uniform_inflation(L, rng):
    sdp = rng.uniform(0.5, 2.0, L) * rng.choice([-1, 1], L)
    ratio = dual_correspondence_ratio(1.01 * sdp, sdp)
    assert ratio == pytest.approx(100 * math.sqrt(L) * 0.01, rel=1e-12)


def test_correspondence_skips_zero_reference():
    sdp = np.array([1.0, 0.0, 2.0, 1e-12])
    ratio, skipped = dual_correspondence(np.array([1.01, 7.0, 2.02, 5.0]), sdp)
    assert skipped == 2
    assert ratio == pytest.approx(100 * math.sqrt(2) * 0.01)


def test_correspondence_errors():
    with pytest.raises(EmptyVector):
        dual_correspondence(np.ones(3), np.zeros(3))
    with pytest.raises(ValueError):
        dual_correspondence(np.ones(3), np.ones(4))


def test_correspondence_accepts_dual_sets():
    d = local("case9").duals
    assert dual_correspondence(d, d)[0] == 0.0


def test_prescreen_threshold():
    assert prescreen(FAVORABLE_PSD_PERCENT + 0.1) == "expected favorable"
    assert prescreen(FAVORABLE_PSD_PERCENT) == "consider full relaxation"


def test_gap_percent():
    assert gap_percent(200.0, 199.0) == 0.5
