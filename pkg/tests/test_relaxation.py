import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from randcert.bell import CHSH_SCENARIO, Behavior, Scenario
from randcert.models import born_behavior, random_quantum_behavior
from randcert.relaxation import (IDENTITY, behavior_constraints, build_basis, build_structure,
                                 canonical_word, cg_coordinates, cg_to_table, parse_level,
                                 word_product)

ops = st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1))


def flatten(word):
    return word[0] + word[1]


@given(st.lists(ops, max_size=8))
def test_canonicalization_idempotent(seq):
    w = canonical_word(seq)
    if w is not None:
        assert canonical_word(flatten(w)) == w


@given(st.lists(ops, max_size=6), st.lists(ops, max_size=6))
def test_parties_commute(u, v):
    a = [op for op in u if op[0] == 0] + [op for op in v if op[0] == 0]
    b = [op for op in u if op[0] == 1] + [op for op in v if op[0] == 1]
    assert canonical_word(a + b) == canonical_word(b + a)


def test_projector_rules():
    A00, A10 = (0, 0, 0), (0, 0, 1)
    assert canonical_word([A00, A00]) == ((A00,), ())
    assert canonical_word([A00, A10]) is None        # orthogonal outcomes of one input
    assert canonical_word([A00, (0, 1, 0), A00]) == ((A00, (0, 1, 0), A00), ())


def test_basis_sizes():
    # 1 + |A| + |B| + |A||B| words at local-1; npa-2 adds both orders of same-party pairs
    assert len(build_basis(CHSH_SCENARIO, "local-1")) == 9
    assert len(build_basis(CHSH_SCENARIO, "npa-2")) == 1 + 4 + 2 + 2 + 4
    assert len(build_basis(Scenario(2, 2, 3, 3), "local-1")) == 1 + 4 + 4 + 16


@pytest.mark.parametrize("level", ["local-2", "npa-0", "ns-1", "foo"])
def test_bad_levels(level):
    with pytest.raises(ValueError):
        parse_level(level)


def _operator(word, PA, PB, d):
    """Matrix of a word on C^d (x) C^d from explicit projectors."""
    M = np.eye(d * d, dtype=complex)
    for _, x, a in word[0]:
        M = M @ np.kron(PA[x][a], np.eye(d))
    for _, y, b in word[1]:
        M = M @ np.kron(np.eye(d), PB[y][b])
    return M


@pytest.mark.parametrize("level", ["local-1", "npa-2"])
@pytest.mark.parametrize("seed", range(4))
def test_moment_matrix_of_a_quantum_model(level, seed):
    # oracle: build Gamma entrywise from operators, then read the variables back
    rng = np.random.default_rng(seed)
    d = 2
    theta = rng.uniform(0, np.pi / 2)
    psi = np.array([np.cos(theta), 0, 0, np.sin(theta)])
    angles = rng.uniform(0, np.pi, 4)
    obs = [np.cos(t) * np.diag([1, -1]) + np.sin(t) * np.array([[0, 1], [1, 0]]) for t in angles]
    proj = [[(np.eye(2) + o) / 2, (np.eye(2) - o) / 2] for o in obs]
    PA, PB = proj[:2], proj[2:]
    ms = build_structure(CHSH_SCENARIO, level)
    words = ms.basis.words
    Gamma = np.empty((len(words), len(words)))
    for i, u in enumerate(words):
        for j, v in enumerate(words):
            Gamma[i, j] = (psi.conj() @ _operator(u, PA, PB, d).conj().T @ _operator(v, PA, PB, d) @ psi).real
    x = np.zeros(ms.num_vars)
    for k in range(ms.num_vars):
        entries = Gamma[ms.index == k]
        assert np.ptp(entries) < 1e-12       # entries sharing a variable agree
        x[k] = entries[0]
    assert np.allclose(ms.gamma(x), Gamma, atol=1e-12)
    assert np.linalg.eigvalsh(Gamma).min() > -1e-10
    P = born_behavior(psi, PA, PB)
    assert np.allclose(ms.probabilities(x), P, atol=1e-12)
    cons = behavior_constraints(ms, Behavior(CHSH_SCENARIO, P))
    assert np.allclose(cons.A @ x, cons.b, atol=1e-12)


def test_normalization_and_zero_entries():
    ms = build_structure(Scenario(2, 2, 3, 3), "npa-2")
    assert ms.index[0, 0] == ms.normalization_index == 0
    # products of orthogonal projectors of one input vanish
    assert (ms.index == -1).any()
    assert word_product(IDENTITY, IDENTITY) == IDENTITY


@given(st.integers(0, 2**32 - 1), st.integers(2, 3))
def test_cg_table_reproduces_cg_functional(seed, k):
    rng = np.random.default_rng(seed)
    s = Scenario(2, 2, k, k)
    P = random_quantum_behavior(s, rng)
    coeffs = rng.normal(size=cg_coordinates(P).size)
    table = cg_to_table(s, coeffs)
    assert np.sum(table * P.probabilities) == pytest.approx(coeffs @ cg_coordinates(P), abs=1e-10)


def test_prob_map_at_cg_coordinates(rng):
    s = Scenario(2, 2, 3, 3)
    P = random_quantum_behavior(s, rng)
    ms = build_structure(s, "local-1")
    x = np.zeros(ms.num_vars)
    x[ms.cg_index] = cg_coordinates(P)
    assert np.allclose(ms.probabilities(x), P.probabilities, atol=1e-12)


def test_dump(tmp_path):
    ms = build_structure(CHSH_SCENARIO, "local-1")
    ms.dump(tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["size"] == 9 and len(doc["F"]) == ms.num_vars and len(doc["f"]) == 16
