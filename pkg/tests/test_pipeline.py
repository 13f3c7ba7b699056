import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from randcert.bell import CHSH_SCENARIO, Behavior, chsh_expression, evaluate_bell, pr_box
from randcert.pipeline import (CountsRecord, InvalidCounts, SettingCorrelators,
                               check_quantum_membership, counts_to_correlators, ns_directions,
                               process_counts, project_no_signalling, read_behavior,
                               reference_behavior, reference_document, write_behavior)

vec12 = st.lists(st.floats(-1, 1), min_size=12, max_size=12).map(np.array)


def test_counts_to_correlators_by_hand():
    rec = CountsRecord(*(np.full((2, 2), v) for v in (100, 40, 50, 60)))
    c = counts_to_correlators(rec)
    assert c.A[0, 0] == pytest.approx(0.0)
    assert c.B[0, 0] == pytest.approx(0.2)
    # E = P(same) - P(different) = (C + (N - SA - SB + C) - (SA - C) - (SB - C)) / N
    assert c.AB[0, 0] == pytest.approx((40 + 30 - 10 - 20) / 100)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    N = rng.integers(1000, 2000, (2, 2))
    SA, SB = N // 2, N // 3
    rec = CountsRecord(N, SB // 2, SA, SB)
    rec.to_csv(tmp_path / "c.csv")
    back = CountsRecord.from_csv(tmp_path / "c.csv")
    assert all(np.array_equal(getattr(rec, k), getattr(back, k)) for k in ("N", "C", "SA", "SB"))


def test_bad_counts(tmp_path):
    with pytest.raises(InvalidCounts):
        CountsRecord(np.full((2, 2), 10), np.full((2, 2), 8), np.full((2, 2), 5), np.full((2, 2), 9))
    with pytest.raises(InvalidCounts):
        CountsRecord(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))
    (tmp_path / "h.csv").write_text("x,y,N,C\n0,0,1,0\n")
    with pytest.raises(InvalidCounts):
        CountsRecord.from_csv(tmp_path / "h.csv")
    (tmp_path / "m.csv").write_text("x,y,N,C,SA,SB\n0,0,10,1,2,3\n1,1,10,1,2,3\n")
    with pytest.raises(InvalidCounts):
        CountsRecord.from_csv(tmp_path / "m.csv")


def _project_vec(v):
    return SettingCorrelators.from_correlators(project_no_signalling(SettingCorrelators.from_vector(v))).vector()


@given(vec12)
def test_projection_idempotent(v):
    once = _project_vec(v)
    assert np.allclose(_project_vec(once), once)


@given(vec12)
def test_projection_residual_orthogonal(v):
    resid = v - _project_vec(v)
    assert np.allclose(ns_directions() @ resid, 0, atol=1e-12)


@given(vec12)
def test_projection_minimizes_distance(v):
    # oracle: constrained least squares solved numerically, no use of the library's basis
    def ns_constraints(u):
        A, B = u[:4].reshape(2, 2), u[4:8].reshape(2, 2)
        return np.array([A[0, 0] - A[0, 1], A[1, 0] - A[1, 1], B[0, 0] - B[1, 0], B[0, 1] - B[1, 1]])
    res = minimize(lambda u: np.sum((u - v) ** 2), np.zeros(12), jac=lambda u: 2 * (u - v),
                   constraints={"type": "eq", "fun": ns_constraints}, method="SLSQP",
                   options={"ftol": 1e-14, "maxiter": 200})
    assert np.allclose(_project_vec(v), res.x, atol=1e-6)


def test_ns_directions_orthonormal():
    D = ns_directions()
    assert D.shape == (8, 12)
    assert np.allclose(D @ D.T, np.eye(8))


def test_process_counts_gives_no_signalling_behavior():
    rng = np.random.default_rng(5)
    N = np.full((2, 2), 10**6)
    SA = rng.integers(480000, 520000, (2, 2))
    SB = rng.integers(480000, 520000, (2, 2))
    C = np.minimum(SA, SB) - rng.integers(50000, 60000, (2, 2))
    P, prov = process_counts(CountsRecord(N, C, SA, SB))
    assert P.is_no_signalling(1e-12)
    assert prov["projection_residual_norm"] >= 0


def test_reference_dataset():
    doc = reference_document()
    assert "provenance" in doc
    P = reference_behavior()
    assert evaluate_bell(chsh_expression(), P) == pytest.approx(2.000159, abs=1e-6)


def test_membership():
    assert check_quantum_membership(reference_behavior(), "local-1").feasible
    pr = check_quantum_membership(pr_box(), "npa-2")
    assert not pr.feasible and pr.margin < -0.05


def test_membership_at_extremal_point(tsirelson):
    assert check_quantum_membership(tsirelson, "npa-2").feasible


def test_membership_rejects_signalling():
    P = np.zeros((2, 2, 2, 2))
    for y in range(2):
        P[y, 0, :, y] = 1.0
    with pytest.raises(ValueError):
        check_quantum_membership(Behavior(CHSH_SCENARIO, P))


def test_behavior_file_round_trip(tmp_path):
    P = reference_behavior()
    write_behavior(tmp_path / "b.json", P, {"note": "x"})
    assert np.allclose(read_behavior(tmp_path / "b.json").probabilities, P.probabilities)
