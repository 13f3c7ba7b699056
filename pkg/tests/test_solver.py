import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from randcert.solver import (ConicProblem, SolverError, SolverSettings, _smat, _svec_operator,
                             export_sdpa, solve)

PSD_BACKENDS = ["clarabel", "qics"]


def lp(backend):
    # max x0 + 2 x1  s.t.  x0 + x1 <= 1, x >= 0
    prob = ConicProblem(2, [1.0, 2.0], np.zeros((0, 2)), [])
    prob.add_cone("nonneg", 3, -np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]), offset=[1.0, 0, 0])
    return solve(prob, SolverSettings(backend=backend))


@pytest.mark.parametrize("backend", ["highs", "clarabel", "qics"])
def test_small_lp(backend):
    rep = lp(backend)
    assert rep.status == "optimal"
    assert rep.primal_value == pytest.approx(2.0, abs=1e-7)
    assert np.allclose(rep.x, [0, 1], atol=1e-6)


def max_eig_problem(C):
    """max -t  s.t.  t I - C >= 0; the optimum is -lambda_max(C)."""
    n = C.shape[0]
    prob = ConicProblem(1, [-1.0], np.zeros((0, 1)), [])
    prob.add_cone("psd", n, np.eye(n).reshape(-1, 1), offset=-C.ravel())
    return prob


@pytest.mark.parametrize("backend", PSD_BACKENDS)
@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=10)
def test_max_eigenvalue(backend, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(4, 4))
    C = (M + M.T) / 2
    rep = solve(max_eig_problem(C), SolverSettings(backend=backend))
    assert rep.status == "optimal"
    assert -rep.primal_value == pytest.approx(np.linalg.eigvalsh(C).max(), abs=1e-6)
    # dual convention: c = A'y - L' vec(Z), Z >= 0, so Tr Z = 1
    Z = rep.cone_duals[0]
    assert np.trace(Z) == pytest.approx(1.0, abs=1e-6)
    assert np.linalg.eigvalsh(Z).min() > -1e-7
    assert rep.dual_value == pytest.approx(rep.primal_value, abs=1e-6)


@pytest.mark.parametrize("backend", PSD_BACKENDS)
def test_equality_duals(backend):
    # max x0 s.t. x0 + x1 == 1, [[1, x0], [x0, 1]] >= 0 ... optimum x0 = 1
    prob = ConicProblem(2, [1.0, 0.0], np.array([[1.0, 1.0]]), [1.0])
    L = np.zeros((4, 2))
    L[1, 0] = L[2, 0] = 1.0
    prob.add_cone("psd", 2, L, offset=np.eye(2).ravel())
    rep = solve(prob, SolverSettings(backend=backend))
    assert rep.primal_value == pytest.approx(1.0, abs=1e-6)
    lhs = prob.eq_matrix.T @ rep.eq_duals - L.T @ rep.cone_duals[0].ravel()
    assert np.allclose(lhs, prob.objective, atol=1e-6)


@pytest.mark.parametrize("backend", ["highs", "clarabel"])
def test_infeasible(backend):
    prob = ConicProblem(1, [1.0], np.array([[1.0]]), [2.0])
    prob.add_cone("nonneg", 1, -np.ones((1, 1)), offset=[1.0])
    assert solve(prob, SolverSettings(backend=backend)).status == "infeasible"


def test_unknown_backend():
    with pytest.raises(SolverError):
        solve(max_eig_problem(np.eye(2)), SolverSettings(backend="nope"))


def test_highs_rejects_psd():
    with pytest.raises(SolverError):
        solve(max_eig_problem(np.eye(2)), SolverSettings(backend="highs"))


def test_shape_validation():
    with pytest.raises(ValueError):
        ConicProblem(2, [1.0], np.zeros((0, 2)), [])
    prob = ConicProblem(2, [1.0, 0.0], np.zeros((0, 2)), [])
    prob.add_cone("psd", 2, sparse.csr_matrix((3, 2)))
    with pytest.raises(ValueError):
        prob.__post_init__()


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_svec_round_trip(n, seed):
    M = np.random.default_rng(seed).normal(size=(n, n))
    X = M + M.T
    z = _svec_operator(n) @ X.ravel()
    assert np.allclose(_smat(z, n), X)
    # svec preserves the trace inner product
    Y = np.eye(n) + X.T
    assert z @ (_svec_operator(n) @ Y.ravel()) == pytest.approx(np.sum(X * Y))


def test_export_sdpa(tmp_path):
    path = tmp_path / "p.dat-s"
    export_sdpa(max_eig_problem(np.diag([1.0, 2.0])), path)
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith(("*", '"'))]
    assert int(lines[0].split()[0]) == 1     # one variable
