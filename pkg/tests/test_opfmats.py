import numpy as np
import pytest
from conftest import case, random_x
from hypothesis import given, settings
from hypothesis import strategies as st

from opfbound.netcase import branch_flows, build_admittance, bundled_cases
from opfbound.opfmats import (
    build_matrix_set,
    complex_to_x,
    eval_traces,
    polar_to_x,
    x_to_complex,
)


def complex_oracle(c, x):
    """Bus injections, branch-end flows and angle products from complex arithmetic."""
    adm = build_admittance(c)
    V = x_to_complex(x)
    S = V * np.conj(adm.Y @ V)
    Sf, St = branch_flows(adm, V)
    prod = V[adm.f] * np.conj(V[adm.t])
    return {"P": S.real, "Q": S.imag, "V2": np.abs(V) ** 2, "Pf": Sf.real, "Qf": Sf.imag, "Pt": St.real,
            "Qt": St.imag, "cos": prod.real, "sin": prod.imag}


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


@pytest.mark.parametrize("name", bundled_cases())
def test_traces_match_complex_oracle(name, rng):
    c = case(name)
    mats = build_matrix_set(c)
    for _ in range(20):
        x = random_x(rng, c.n)
        got = eval_traces(mats, x)
        ref = complex_oracle(c, x)
        for key, val in ref.items():
            assert rel_err(got[key], val) <= 1e-10, key


def test_quad_equals_pair_of_outer_product(rng):
    c = case("case14")
    mats = build_matrix_set(c)
    x = random_x(rng, c.n)
    W = np.outer(x, x)
    for fam in (mats.Y, mats.Ybar, mats.Yf, mats.Ybart, mats.Mbar):
        np.testing.assert_allclose(fam.quad(x), fam.pair(W), atol=1e-12)
        k = fam.count // 2
        np.testing.assert_allclose(x @ (fam.matrix(k) @ x), fam.quad(x)[k], atol=1e-12)


@pytest.mark.parametrize("name", ["case4", "case30"])
def test_matrices_symmetric(name):
    mats = build_matrix_set(case(name))
    for fam in (mats.Y, mats.Ybar, mats.M, mats.Yf, mats.Ybarf, mats.Yt, mats.Ybart, mats.Mlm, mats.Mbar):
        for k in range(fam.count):
            A = fam.matrix(k)
            assert abs(A - A.T).max() <= 1e-14


def test_magnitude_matrices_sum_to_identity():
    mats = build_matrix_set(case("case9"))
    total = mats.M.combine(np.ones(mats.n)).toarray()
    np.testing.assert_array_equal(total, np.eye(2 * mats.n))


def test_angle_matrix_block_antisymmetry():
    mats = build_matrix_set(case("case9"))
    n = mats.n
    A = mats.Mbar.matrix(0).toarray()
    np.testing.assert_array_equal(A[:n, :n], 0)
    np.testing.assert_array_equal(A[n:, n:], 0)
    B = A[:n, n:]
    np.testing.assert_array_equal(B, -B.T)


def test_gradient_matches_finite_difference(rng):
    mats = build_matrix_set(case("case9"))
    x = random_x(rng, mats.n)
    d = rng.standard_normal(2 * mats.n)
    h = 1e-6
    fd = (mats.Ybar.quad(x + h * d) - mats.Ybar.quad(x - h * d)) / (2 * h)
    np.testing.assert_allclose(mats.Ybar.grad(x) @ d, fd, atol=1e-8)


def test_reference_matrix():
    c = case("case14")
    mats = build_matrix_set(c)
    x = polar_to_x(np.ones(c.n), np.full(c.n, 0.3))
    assert eval_traces(mats, x)["ref"][0] == pytest.approx(np.sin(0.3) ** 2)
    assert mats.N_ref.nnz == 1


def test_eval_traces_rejects_wrong_length():
    mats = build_matrix_set(case("case4"))
    with pytest.raises(ValueError):
        eval_traces(mats, np.ones(5))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.5, 1.5), st.floats(-3.0, 3.0)), min_size=4, max_size=4))
def test_sin_identity(polar):
    vm, va = map(np.array, zip(*polar))
    mats = build_matrix_set(case("case4"))
    tr = eval_traces(mats, polar_to_x(vm, va))
    f, t = mats.f, mats.t
    np.testing.assert_allclose(tr["sin"], vm[f] * vm[t] * np.sin(va[f] - va[t]), atol=1e-12)
    np.testing.assert_allclose(tr["cos"], vm[f] * vm[t] * np.cos(va[f] - va[t]), atol=1e-12)


def test_complex_round_trip(rng):
    V = rng.standard_normal(7) + 1j * rng.standard_normal(7)
    np.testing.assert_array_equal(x_to_complex(complex_to_x(V)), V)
