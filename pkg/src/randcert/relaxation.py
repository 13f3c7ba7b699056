"""Moment-matrix relaxations of the quantum set.

A moment matrix is indexed by operator words built from Alice's and Bob's
projectors.  For every input the projector of the last outcome is dropped
(it equals identity minus the others), so the remaining words are linearly
independent.  Entries of the matrix are expectation values of products of
words; equal products share one real variable, which gives the linear
parametrization ``Gamma(x) = sum_i F_i x_i``.

Levels
------
``local-1``
    words ``{1} u {A} u {B} u {AB}`` (single projectors and their
    cross-party products).
``npa-k``
    all canonical words with at most ``k`` projectors.
"""
from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .bell import Behavior, Scenario, ScenarioMismatch

# an operator is (party, input, outcome); party 0 = Alice, 1 = Bob
Op = tuple[int, int, int]
Word = tuple[tuple[Op, ...], tuple[Op, ...]]
IDENTITY: Word = ((), ())


def _reduce(ops) -> tuple[Op, ...] | None:
    """Apply idempotence and orthogonality to a single-party word; None means zero."""
    out: list[Op] = []
    for op in ops:
        if out and out[-1][1] == op[1]:
            if out[-1][2] != op[2]:
                return None
            continue
        out.append(op)
    return tuple(out)


def canonical_word(ops) -> Word | None:
    """Canonical form of an operator product: Alice's part left of Bob's, reduced."""
    a = _reduce(op for op in ops if op[0] == 0)
    if a is None:
        return None
    b = _reduce(op for op in ops if op[0] == 1)
    if b is None:
        return None
    return (a, b)


def adjoint(word: Word) -> Word:
    return (tuple(reversed(word[0])), tuple(reversed(word[1])))


def canonical_moment(word: Word | None) -> Word | None:
    """Representative of <w>; real moments satisfy <w> = <w^dagger>."""
    if word is None:
        return None
    return min(word, adjoint(word))


def word_product(u: Word, v: Word) -> Word | None:
    """Canonical form of u^dagger v."""
    left = adjoint(u)
    return canonical_word(left[0] + v[0] + left[1] + v[1])


def word_label(word: Word) -> str:
    if word == IDENTITY:
        return "1"
    parts = [f"A{a}|{x}" for _, x, a in word[0]] + [f"B{b}|{y}" for _, y, b in word[1]]
    return " ".join(parts)


def parse_level(level: str) -> tuple[str, int]:
    m = re.fullmatch(r"(local|npa)-(\d+)", str(level).strip().lower())
    if not m:
        raise ValueError(f"unsupported relaxation level {level!r}")
    kind, k = m.group(1), int(m.group(2))
    if k < 1 or (kind == "local" and k != 1):
        raise ValueError(f"unsupported relaxation level {level!r}")
    return kind, k


@dataclass(frozen=True, eq=False)
class MonomialBasis:
    scenario: Scenario
    level: str
    words: tuple[Word, ...]

    def __len__(self):
        return len(self.words)

    def labels(self) -> list[str]:
        return [word_label(w) for w in self.words]


def _generators(scenario: Scenario) -> tuple[list[Op], list[Op]]:
    ga = [(0, x, a) for x in range(scenario.num_inputs_a) for a in range(scenario.num_outputs_a - 1)]
    gb = [(1, y, b) for y in range(scenario.num_inputs_b) for b in range(scenario.num_outputs_b - 1)]
    return ga, gb


def build_basis(scenario: Scenario, level: str) -> MonomialBasis:
    kind, k = parse_level(level)
    ga, gb = _generators(scenario)
    words: list[Word] = [IDENTITY]
    if kind == "local":
        words += [((op,), ()) for op in ga]
        words += [((), (op,)) for op in gb]
        words += [((oa,), (ob,)) for oa in ga for ob in gb]
    else:
        seen = {IDENTITY}
        gens = ga + gb
        for length in range(1, k + 1):
            for seq in itertools.product(gens, repeat=length):
                w = canonical_word(seq)
                if w is None or len(w[0]) + len(w[1]) != length or w in seen:
                    continue
                seen.add(w)
                words.append(w)
    return MonomialBasis(scenario, f"{kind}-{k}", tuple(words))


@dataclass(frozen=True, eq=False)
class MomentStructure:
    """Linear parametrization of a moment matrix.

    Attributes
    ----------
    index : (N, N) int array
        Variable index of each matrix entry, -1 for entries forced to zero.
    prob_map : (|a|, |b|, |x|, |y|, n) array
        ``f_i(ab|xy)``: P(ab|xy) = prob_map[a, b, x, y] @ x.
    cg_index : int array
        Variables of the moments 1, A_{a|x}, B_{b|y}, A_{a|x}B_{b|y} (last
        outcomes dropped).  Fixing these fixes a no-signalling behavior.
    """

    basis: MonomialBasis
    moments: tuple[Word, ...]
    index: np.ndarray
    prob_map: np.ndarray
    cg_index: np.ndarray

    @property
    def scenario(self) -> Scenario:
        return self.basis.scenario

    @property
    def level(self) -> str:
        return self.basis.level

    @property
    def size(self) -> int:
        return self.index.shape[0]

    @property
    def num_vars(self) -> int:
        return len(self.moments)

    @property
    def normalization_index(self) -> int:
        return 0

    def F(self, i: int) -> np.ndarray:
        return (self.index == i).astype(float)

    def matrices(self) -> np.ndarray:
        """All F_i stacked, shape (n, N, N)."""
        return np.stack([self.F(i) for i in range(self.num_vars)])

    def gamma(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        padded = np.append(x, 0.0)
        return padded[self.index]

    def lmi_operator(self) -> sparse.csr_matrix:
        """Sparse (N*N, n) matrix mapping variables to vec(Gamma) (row-major)."""
        flat = self.index.ravel()
        rows = np.nonzero(flat >= 0)[0]
        return sparse.csr_matrix((np.ones(rows.size), (rows, flat[rows])),
                                 shape=(flat.size, self.num_vars))

    def probabilities(self, x) -> np.ndarray:
        return self.prob_map @ np.asarray(x, dtype=float)

    def probability_matrix(self, a: int, b: int, x: int, y: int) -> np.ndarray:
        """F(ab|xy) with Tr(F(ab|xy) Gamma) = P(ab|xy)."""
        N = self.size
        out = np.zeros((N, N))
        for i, coef in enumerate(self.prob_map[a, b, x, y]):
            if coef == 0:
                continue
            u, v = map(int, np.argwhere(self.index == i)[0])
            if u == v:
                out[u, u] += coef
            else:
                out[u, v] += coef / 2
                out[v, u] += coef / 2
        return out

    def cg_vector(self, behavior: Behavior) -> np.ndarray:
        """Values of the ``cg_index`` moments for a no-signalling behavior."""
        return cg_coordinates(behavior)

    def to_dict(self) -> dict:
        F = []
        for i in range(self.num_vars):
            r, c = np.nonzero(self.index == i)
            F.append({"moment": word_label(self.moments[i]),
                      "entries": [[int(u), int(v), 1.0] for u, v in zip(r, c)]})
        f = []
        for a, b, x, y in itertools.product(*map(range, self.scenario.shape)):
            coeffs = self.prob_map[a, b, x, y]
            nz = np.nonzero(coeffs)[0]
            f.append({"cell": [a, b, x, y], "terms": [[int(i), float(coeffs[i])] for i in nz]})
        return {"scenario": self.scenario.to_dict(), "level": self.level,
                "basis": self.basis.labels(), "size": self.size,
                "num_vars": self.num_vars, "F": F, "f": f}

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def build_structure(scenario: Scenario, level: str = "local-1") -> MomentStructure:
    basis = build_basis(scenario, level)
    words = basis.words
    N = len(words)
    moments: dict[Word, int] = {IDENTITY: 0}
    index = np.full((N, N), -1, dtype=int)
    for u in range(N):
        for v in range(u, N):
            m = canonical_moment(word_product(words[u], words[v]))
            if m is None:
                continue
            i = moments.setdefault(m, len(moments))
            index[u, v] = index[v, u] = i

    ga, gb = _generators(scenario)

    def var(word: Word) -> int:
        m = canonical_moment(word)
        if m not in moments:
            raise ValueError(f"moment {word_label(word)} missing at level {level}")
        return moments[m]

    cg = [0] + [var(((op,), ())) for op in ga] + [var(((), (op,))) for op in gb]
    cg += [var(((oa,), (ob,))) for oa in ga for ob in gb]

    n = len(moments)
    na, nb = scenario.num_outputs_a, scenario.num_outputs_b
    prob_map = np.zeros(scenario.shape + (n,))
    for x, y in scenario.settings():
        # last outcome expands as 1 - sum(others)
        for a in range(na):
            for b in range(nb):
                row = np.zeros(n)
                a_terms = [(a, 1.0)] if a < na - 1 else [(None, 1.0)] + [(k, -1.0) for k in range(na - 1)]
                b_terms = [(b, 1.0)] if b < nb - 1 else [(None, 1.0)] + [(k, -1.0) for k in range(nb - 1)]
                for (ka, ca), (kb, cb) in itertools.product(a_terms, b_terms):
                    wa = () if ka is None else ((0, x, ka),)
                    wb = () if kb is None else ((1, y, kb),)
                    row[var((wa, wb))] += ca * cb
                prob_map[a, b, x, y] = row
    ordered = [None] * n
    for m, i in moments.items():
        ordered[i] = m
    return MomentStructure(basis, tuple(ordered), index, prob_map, np.asarray(cg, dtype=int))


def cg_coordinates(behavior: Behavior) -> np.ndarray:
    """Behavior in the order of ``MomentStructure.cg_index``.

    Marginals are read off the first setting of the other party, so the
    behavior is assumed no-signalling.
    """
    s = behavior.scenario
    p = behavior.probabilities
    na, nb = s.num_outputs_a, s.num_outputs_b
    out = [1.0]
    out += [p[a, :, x, 0].sum() for x in range(s.num_inputs_a) for a in range(na - 1)]
    out += [p[:, b, 0, y].sum() for y in range(s.num_inputs_b) for b in range(nb - 1)]
    out += [p[a, b, x, y]
            for x in range(s.num_inputs_a) for a in range(na - 1)
            for y in range(s.num_inputs_b) for b in range(nb - 1)]
    return np.asarray(out)


def cg_to_table(scenario: Scenario, coeffs) -> np.ndarray:
    """Full coefficient table c_abxy whose value on any no-signalling behavior
    equals ``coeffs @ cg_coordinates(behavior)``."""
    coeffs = np.asarray(coeffs, dtype=float)
    na, nb = scenario.num_outputs_a, scenario.num_outputs_b
    table = np.zeros(scenario.shape)
    k = 0
    table[:, :, 0, 0] += coeffs[k]
    k += 1
    for x in range(scenario.num_inputs_a):
        for a in range(na - 1):
            table[a, :, x, 0] += coeffs[k]
            k += 1
    for y in range(scenario.num_inputs_b):
        for b in range(nb - 1):
            table[:, b, 0, y] += coeffs[k]
            k += 1
    for x in range(scenario.num_inputs_a):
        for a in range(na - 1):
            for y in range(scenario.num_inputs_b):
                for b in range(nb - 1):
                    table[a, b, x, y] += coeffs[k]
                    k += 1
    return table


@dataclass(frozen=True, eq=False)
class LinearConstraints:
    """Rows of ``A x = b`` on the moment variables of one block."""

    A: np.ndarray
    b: np.ndarray
    labels: tuple[str, ...]


def behavior_constraints(ms: MomentStructure, behavior: Behavior) -> LinearConstraints:
    """One equality per cell (a, b, x, y) plus the normalization pin <1> = 1."""
    if ms.scenario != behavior.scenario:
        raise ScenarioMismatch("behavior and moment structure use different scenarios")
    n = ms.num_vars
    A = ms.prob_map.reshape(-1, n)
    pin = np.zeros((1, n))
    pin[0, ms.normalization_index] = 1.0
    labels = tuple(f"P({a}{b}|{x}{y})" for a, b, x, y in itertools.product(*map(range, ms.scenario.shape)))
    return LinearConstraints(np.vstack([A, pin]),
                             np.append(behavior.probabilities.ravel(), 1.0),
                             labels + ("<1>",))
