import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from opfbound import conic
from opfbound.conic import (
    ConeDims,
    ConicProgram,
    check_solution,
    read_program,
    solve,
    write_program,
)


def vec(M):
    return np.asarray(M, dtype=float).reshape(-1)


def lambda_min_program(C):
    """maximize t subject to C - t I >= 0."""
    d = len(C)
    G = sp.csc_matrix(vec(np.eye(d))[:, None])
    return ConicProgram(np.array([1.0]), G, vec(C), ConeDims(0, (d,)))


def test_two_by_two_bound():
    # [[1, t], [t, 1]] >= 0  gives  t <= 1
    G = sp.csc_matrix(-vec([[0, 1], [1, 0]])[:, None])
    prog = ConicProgram(np.array([1.0]), G, vec(np.eye(2)), ConeDims(0, (2,)))
    sol = solve(prog)
    assert sol.status == conic.OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.objective == pytest.approx(sol.dual_objective, abs=1e-7)


@pytest.mark.parametrize("c", [[3.0, 1.0, 2.0], [0.5, 0.5, -1.0], [-1.0, -2.0, -0.5]])
def test_simplex(c):
    n = len(c)
    prog = ConicProgram(np.array(c), -sp.eye(n, format="csc"), np.zeros(n), ConeDims(n),
                        A=sp.csr_matrix(np.ones((1, n))), b=np.array([1.0]))
    sol = solve(prog)
    assert sol.status == conic.OPTIMAL
    assert sol.objective == pytest.approx(max(c), abs=1e-7)


def test_constructed_sdp():
    C = np.array([[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]])
    sol = solve(lambda_min_program(C))
    assert sol.status == conic.OPTIMAL
    assert sol.objective == pytest.approx(np.linalg.eigvalsh(C)[0], abs=1e-7)
    Z = sol.z.reshape(3, 3)
    # the dual certificate is the projector onto the bottom eigenvector
    assert np.trace(Z) == pytest.approx(1.0, abs=1e-6)
    assert np.linalg.eigvalsh(Z)[0] >= -1e-8


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_random_lambda_min(d, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((d, d))
    C = B + B.T
    sol = solve(lambda_min_program(C))
    assert sol.status == conic.OPTIMAL
    assert sol.objective == pytest.approx(np.linalg.eigvalsh(C)[0], abs=1e-6 * (1 + np.abs(C).max()))


def test_mixed_cones():
    # maximize x1 + x2 with x1 <= 1 and [[2, x2], [x2, 2]] >= 0
    G = sp.csc_matrix(np.vstack([[1.0, 0.0], np.column_stack([np.zeros(4), -vec([[0, 1], [1, 0]])])]))
    h = np.concatenate([[1.0], vec(2 * np.eye(2))])
    sol = solve(ConicProgram(np.array([1.0, 1.0]), G, h, ConeDims(1, (2,))))
    assert sol.status == conic.OPTIMAL
    np.testing.assert_allclose(sol.x, [1.0, 2.0], atol=1e-7)


def test_infeasible():
    # x <= -1 and x >= 0
    prog = ConicProgram(np.array([1.0]), sp.csc_matrix([[1.0], [-1.0]]), np.array([-1.0, 0.0]), ConeDims(2))
    assert solve(prog).status == conic.INFEASIBLE


def test_unbounded():
    prog = ConicProgram(np.array([1.0]), sp.csc_matrix([[-1.0]]), np.array([0.0]), ConeDims(1))
    assert solve(prog).status == conic.UNBOUNDED


def test_offset_added():
    C = np.diag([1.0, 5.0])
    prog = lambda_min_program(C)
    prog.offset = 10.0
    assert solve(prog).objective == pytest.approx(11.0, abs=1e-7)


def test_check_solution():
    prog = lambda_min_program(np.diag([1.0, 2.0]))
    assert check_solution(prog, np.array([1.0]), 1e-9)["ok"]
    bad = check_solution(prog, np.array([1.5]), 1e-9)
    assert not bad["ok"] and bad["cone"] > 0.1


def test_shape_validation():
    with pytest.raises(ValueError):
        ConicProgram(np.ones(2), sp.csc_matrix((3, 2)), np.zeros(4), ConeDims(4))


def test_triplet_round_trip(tmp_path):
    G = sp.csc_matrix(np.vstack([[1.0, 0.0], np.column_stack([np.zeros(4), -vec([[0, 1], [1, 0]])])]))
    h = np.concatenate([[1.0], vec(2 * np.eye(2))])
    prog = ConicProgram(np.array([1.0, 1.0]), G, h, ConeDims(1, (2,)), A=sp.csr_matrix([[1.0, -1.0]]),
                        b=np.array([0.0]), offset=0.25)
    path = tmp_path / "prog.txt"
    write_program(prog, path)
    back = read_program(path)
    assert back.dims == prog.dims
    assert back.offset == prog.offset
    assert abs(back.G - prog.G).max() == 0
    np.testing.assert_array_equal(back.h, prog.h)
    np.testing.assert_array_equal(back.c, prog.c)
    assert abs(back.A - prog.A).max() == 0
    assert solve(back).objective == pytest.approx(solve(prog).objective)


def test_read_rejects_other_formats(tmp_path):
    path = tmp_path / "x.txt"
    path.write_text("something else\n")
    with pytest.raises(ValueError):
        read_program(path)


def test_cross_check_with_cvxpy():
    cp = pytest.importorskip("cvxpy")
    if "CLARABEL" not in cp.installed_solvers():
        pytest.skip("Clarabel backend not installed")
    rng = np.random.default_rng(3)
    B = rng.standard_normal((4, 4))
    C = B @ B.T
    X = cp.Variable((4, 4), PSD=True)
    ref = cp.Problem(cp.Minimize(cp.trace(C @ X)), [cp.trace(X) == 1]).solve(solver="CLARABEL")
    assert solve(lambda_min_program(C)).objective == pytest.approx(ref, abs=1e-5)
