"""Guessing-probability programs.

The observed behavior is decomposed into subnormalized blocks, one per
guessing strategy.  A strategy assigns a guessed outcome pair to every input
pair in the support of the input distribution, so there are
``(|a||b|)^|support|`` blocks.  Each block is constrained to a relaxation of
the quantum set (a moment matrix at a given level) or, in the ``ns`` variant,
to the no-signalling polytope.  Block weights are the identity moments, so
the programs stay linear.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .bell import BellExpression, Behavior, InputDistribution, Scenario
from .relaxation import MomentStructure, build_structure, cg_coordinates, cg_to_table
from .solver import ConicProblem, SolveReport, SolverError, SolverSettings, solve

log = logging.getLogger(__name__)

DEFAULT_BLOCK_BUDGET = 4096
NS_LEVEL = "ns"


class InfeasibleError(RuntimeError):
    def __init__(self, message, report: SolveReport | None = None):
        super().__init__(message)
        self.report = report


class BlockBudgetExceeded(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StrategyFamily:
    scenario: Scenario
    support: tuple[tuple[int, int], ...]
    strategies: np.ndarray  # (blocks, len(support), 2) guessed (a, b) per supported pair

    @classmethod
    def build(cls, scenario: Scenario, support, budget: int = DEFAULT_BLOCK_BUDGET) -> "StrategyFamily":
        support = tuple(sorted((int(x), int(y)) for x, y in support))
        if not support:
            raise ValueError("empty input support")
        pairs = list(itertools.product(range(scenario.num_outputs_a), range(scenario.num_outputs_b)))
        count = len(pairs) ** len(support)
        if count > budget:
            raise BlockBudgetExceeded(f"{count} strategy blocks exceed the budget of {budget}")
        strategies = np.array(list(itertools.product(pairs, repeat=len(support))), dtype=int)
        return cls(scenario, support, strategies.reshape(count, len(support), 2))

    @property
    def count(self) -> int:
        return self.strategies.shape[0]


@dataclass(frozen=True, eq=False)
class BlockModel:
    """Per-block variable layout shared by every program."""

    level: str
    num_vars: int
    prob_map: np.ndarray  # (|a|, |b|, |x|, |y|, num_vars)
    cg_index: np.ndarray
    structure: MomentStructure | None

    def cone(self, problem: ConicProblem, offset: int, label: str):
        total = problem.num_vars
        if self.structure is not None:
            L = self.structure.lmi_operator()
            problem.add_cone("psd", self.structure.size, _shift_columns(L, offset, total), label=label)
        else:
            T = sparse.csr_matrix(self.prob_map.reshape(-1, self.num_vars))
            problem.add_cone("nonneg", T.shape[0], _shift_columns(T, offset, total), label=label)


def _shift_columns(M: sparse.csr_matrix, offset: int, total: int) -> sparse.csr_matrix:
    M = sparse.csr_matrix(M)
    return sparse.csr_matrix((M.data, M.indices + offset, M.indptr), shape=(M.shape[0], total))


_MODEL_CACHE: dict[tuple[Scenario, str], BlockModel] = {}


def block_model(scenario: Scenario, level: str) -> BlockModel:
    key = (scenario, level)
    if key not in _MODEL_CACHE:
        if level == NS_LEVEL:
            ms = build_structure(scenario, "local-1")
            # probabilities only involve the Collins-Gisin moments
            pm = ms.prob_map[..., ms.cg_index]
            model = BlockModel(NS_LEVEL, pm.shape[-1], pm, np.arange(pm.shape[-1]), None)
        else:
            ms = build_structure(scenario, level)
            model = BlockModel(ms.level, ms.num_vars, ms.prob_map, ms.cg_index, ms)
        _MODEL_CACHE[key] = model
    return _MODEL_CACHE[key]


@dataclass(eq=False)
class GuessingResult:
    G: float
    min_entropy: float
    status: str
    primal_value: float
    dual_value: float
    level: str
    block_weights: np.ndarray
    certificate: BellExpression | None = None
    kind: str = "weighted"
    notes: list[str] = field(default_factory=list)
    # program data, kept for certificate extraction
    solution: "BlockSolution | None" = field(default=None, repr=False)
    model: BlockModel | None = field(default=None, repr=False)
    family: StrategyFamily | None = field(default=None, repr=False)
    inputs: InputDistribution | None = field(default=None, repr=False)
    behavior: Behavior | None = field(default=None, repr=False)
    expression: BellExpression | None = field(default=None, repr=False)
    bell_value: float | None = None
    objective_rows: np.ndarray | None = field(default=None, repr=False)
    copies: int = 1

    @property
    def gap(self) -> float:
        return abs(self.primal_value - self.dual_value)

    @property
    def block_moments(self) -> np.ndarray:
        return self.solution.moments

    @property
    def eq_rows(self) -> np.ndarray:
        return self.solution.eq_rows

    def block_behaviors(self) -> np.ndarray:
        """Subnormalized block tables, shape (blocks, |a|, |b|, |x|, |y|)."""
        return np.einsum("abxyi,ki->kabxy", self.model.prob_map, self.block_moments)

    def to_dict(self) -> dict:
        d = {"G": self.G, "min_entropy_bits": self.min_entropy, "level": self.level,
             "status": self.status, "gap": self.gap, "primal": self.primal_value,
             "dual": self.dual_value, "kind": self.kind, "blocks": int(self.block_weights.size)}
        if self.certificate is not None:
            d["certificate"] = self.certificate.to_dict()
        if self.notes:
            d["notes"] = list(self.notes)
        return d


def min_entropy(G: float, tol: float = 1e-6) -> float:
    """-log2 G in bits."""
    if not (0 < G <= 1 + tol):
        raise ValueError(f"guessing probability {G} outside (0, 1]")
    return -math.log2(G)


def _objective_rows(model: BlockModel, family: StrategyFamily, weights: np.ndarray) -> np.ndarray:
    sx = np.array([x for x, _ in family.support])
    sy = np.array([y for _, y in family.support])
    w = weights[sx, sy]
    # rows[k] = sum_s p(s) f(alpha_s beta_s | s) for strategy k
    picked = model.prob_map[family.strategies[:, :, 0], family.strategies[:, :, 1], sx, sy]
    return np.einsum("ksi,s->ki", picked, w)


def _block_problem(model: BlockModel, rows: np.ndarray, eq_rows_per_block, eq_rhs) -> ConicProblem:
    nblocks, n = rows.shape
    eq = sparse.hstack([sparse.csr_matrix(eq_rows_per_block)] * nblocks, format="csr")
    prob = ConicProblem(nblocks * n, rows.ravel(), eq, eq_rhs)
    for k in range(nblocks):
        model.cone(prob, k * n, label=f"block{k}")
    return prob


def _run(prob, settings) -> SolveReport:
    report = solve(prob, settings)
    if report.status == "infeasible":
        raise InfeasibleError("program infeasible", report)
    if report.status == "unbounded" or report.status == "failed":
        raise SolverError(f"solver returned {report.status} ({report.raw_status})")
    return report


@dataclass(eq=False)
class BlockSolution:
    """Optimum of a block program with a dual that is feasible for every block."""

    primal_value: float
    dual_value: float
    status: str
    moments: np.ndarray       # (blocks, n)
    eq_duals: np.ndarray
    block_duals: list          # Z_k >= 0 with rows_k = eq_rows.T @ y - L.T vec(Z_k)
    active: np.ndarray
    rounds: int
    report: SolveReport
    eq_rows: np.ndarray
    eq_rhs: np.ndarray


def _price(model: BlockModel, reduced: np.ndarray, settings, chunk: int = 256):
    """max_x reduced[k] @ x over normalized blocks, for every k; returns values and duals."""
    n = model.num_vars
    values = np.empty(len(reduced))
    duals = []
    for start in range(0, len(reduced), chunk):
        part = reduced[start:start + chunk]
        m = len(part)
        eq = sparse.kron(sparse.eye(m), sparse.csr_matrix(np.eye(1, n)), format="csr")
        prob = ConicProblem(m * n, part.ravel(), eq, np.ones(m))
        for k in range(m):
            model.cone(prob, k * n, label=f"price{k}")
        try:
            report = _run(prob, settings)
        except SolverError:
            report = None
        if report is None or report.status != "optimal":
            if m > 1:
                # batched solve stalled; price one block at a time
                for k in range(m):
                    v, d = _price(model, part[k:k + 1], settings)
                    values[start + k] = v[0]
                    duals.extend(d)
                continue
            if report is None:
                raise SolverError("pricing subproblem failed")
        x = report.x.reshape(m, n)
        values[start:start + m] = np.einsum("ki,ki->k", part, x)
        for k in range(m):
            duals.append((np.array(report.cone_duals[k], copy=True), report.eq_duals[k]))
    return values, duals


def _solve_blocks(model: BlockModel, rows: np.ndarray, eq_rows, eq_rhs, norm_row: int,
                  settings: SolverSettings | None, tol: float = 1e-9,
                  max_rounds: int = 50, seed_limit: int = 1024,
                  prune: float = 1e-5, seed_tol: float = 1e-3,
                  seed_blocks: int = 48) -> BlockSolution:
    """Solve max sum_k rows[k] @ x_k s.t. sum_k eq_rows @ x_k = eq_rhs, x_k in the block cone.

    Interior-point solvers lose accuracy when most blocks vanish at the
    optimum, so the program is solved on an active subset of blocks and the
    remaining blocks are priced against the restricted dual.  Blocks with a
    positive reduced value are added until none remain.
    """
    eq_rows = np.atleast_2d(np.asarray(eq_rows, dtype=float))
    eq_rhs = np.asarray(eq_rhs, dtype=float)
    nblocks, n = rows.shape
    settings = settings or SolverSettings()

    if model.structure is None or nblocks <= 16:
        report = _run(_block_problem(model, rows, eq_rows, eq_rhs), settings)
        if model.structure is None or report.status == "optimal":
            return BlockSolution(report.primal_value, report.dual_value, report.status,
                                 report.x.reshape(nblocks, n), report.eq_duals,
                                 list(report.cone_duals), np.arange(nblocks), 0, report,
                                 eq_rows, eq_rhs)
        active = np.arange(nblocks)
        weights = report.x.reshape(nblocks, n)[:, 0]
    elif nblocks <= seed_limit:
        try:
            report = solve(_block_problem(model, rows, eq_rows, eq_rhs), settings)
        except SolverError:
            report = None
        if report is not None and report.status == "infeasible":
            raise InfeasibleError("program infeasible", report)
        weights = None if report is None or not np.all(np.isfinite(report.x)) else \
            report.x.reshape(nblocks, n)[:, 0]
    else:
        weights = None

    if weights is not None:
        # a small seed keeps the restricted programs well conditioned; pricing restores the rest
        order = np.argsort(-weights)[:seed_blocks]
        active = order[weights[order] > seed_tol * max(weights.max(), 1e-12)]
    else:
        # without a warm start, seed with the blocks scoring best on their own
        active = np.argsort(-rows[:, 0] - rows[:, 1:].sum(axis=1))[:min(nblocks, 16)]
    if active.size == 0:
        active = np.array([int(np.argmax(rows[:, 0]))])

    dropped = np.zeros(0, dtype=int)
    for rounds in range(1, max_rounds + 1):
        active = np.unique(active)
        report = _run(_block_problem(model, rows[active], eq_rows, eq_rhs), settings)
        if report.status != "optimal":
            # near-zero blocks degrade the restricted solve; drop each at most once
            w = report.x.reshape(active.size, n)[:, 0]
            keep = (w > prune * w.max()) | np.isin(active, dropped)
            if not keep.all():
                trial = _run(_block_problem(model, rows[active[keep]], eq_rows, eq_rhs), settings)
                if trial.status == "optimal":
                    dropped = np.union1d(dropped, active[~keep])
                    active, report = active[keep], trial
        y = report.eq_duals
        price_vec = y @ eq_rows
        inactive = np.setdiff1d(np.arange(nblocks), active)
        if inactive.size == 0:
            reduced_vals, priced = np.zeros(0), []
        else:
            reduced_vals, priced = _price(model, rows[inactive] - price_vec, settings)
        violated = inactive[reduced_vals > tol]
        if violated.size == 0:
            break
        order = np.argsort(-reduced_vals[reduced_vals > tol])
        active = np.concatenate([active, violated[order[:64]]])
    else:
        log.warning("column generation stopped after %d rounds", max_rounds)

    moments = np.zeros((nblocks, n))
    moments[active] = report.x.reshape(active.size, n)
    block_duals: list = [None] * nblocks
    for k, Z in zip(active, report.cone_duals):
        block_duals[k] = Z
    shift = max(0.0, float(reduced_vals.max())) if reduced_vals.size else 0.0
    e00 = np.zeros_like(report.cone_duals[0])
    e00[0, 0] = 1.0
    for k, (Z, val) in zip(inactive, priced):
        # rows_k - price = val * e_0 - L.T vec(Z); fold val into Z via the (0, 0) entry
        block_duals[k] = Z - val * e00
    y = report.eq_duals.copy()
    if shift > 0:
        # raise the multiplier of the normalization row so every block is dual feasible
        log.info("dual shifted by %.3g to cover unpriced blocks", shift)
        block_duals = [Z + shift * e00 for Z in block_duals]
        y[norm_row] += shift
    dual_value = float(eq_rhs @ y)
    return BlockSolution(report.primal_value, dual_value, report.status, moments, y,
                         block_duals, active, rounds, report, eq_rows, eq_rhs)


ACCEPT_GAP = 1e-6


def _result(sol: BlockSolution, model, family, rows, kind, **extra) -> GuessingResult:
    G = sol.primal_value
    status = sol.status
    if status == "near-optimal" and abs(sol.primal_value - sol.dual_value) <= ACCEPT_GAP * max(1.0, abs(G)):
        status = "optimal"
        extra.setdefault("notes", []).append(f"backend stopped early ({sol.report.raw_status}); gap within {ACCEPT_GAP:g}")
    return GuessingResult(G=G, min_entropy=-math.log2(G) if G > 0 else math.inf,
                          status=status, primal_value=sol.primal_value,
                          dual_value=sol.dual_value, level=model.level,
                          block_weights=sol.moments[:, 0], kind=kind, solution=sol,
                          model=model, family=family, objective_rows=rows, **extra)


def _family_rows(model, family, p: InputDistribution, copies: int) -> np.ndarray:
    return np.repeat(_objective_rows(model, family, p.weights), copies, axis=0)


def guessing_weighted(P: Behavior, p: InputDistribution, level: str = "local-1",
                      settings: SolverSettings | None = None,
                      budget: int = DEFAULT_BLOCK_BUDGET, copies: int = 1,
                      ns_tol: float = 1e-7) -> GuessingResult:
    """Average guessing probability G(p, P) from the full statistics.

    ``copies > 1`` repeats every strategy block; the optimum must not change.
    """
    s = P.scenario
    p.check_scenario(s)
    if not P.is_no_signalling(ns_tol):
        raise InfeasibleError(f"behavior is signalling (deviation {P.signalling():.3g}); "
                              "no decomposition into quantum blocks exists")
    model = block_model(s, level)
    family = StrategyFamily.build(s, p.support, budget)
    # fixing the Collins-Gisin moments of the block sum fixes every P(ab|xy)
    sel = np.zeros((model.cg_index.size, model.num_vars))
    sel[np.arange(model.cg_index.size), model.cg_index] = 1.0
    rows = _family_rows(model, family, p, copies)
    sol = _solve_blocks(model, rows, sel, cg_coordinates(P), 0, settings)
    cert = BellExpression(s, cg_to_table(s, sol.eq_duals), name="dual certificate")
    return _result(sol, model, family, rows, "weighted", certificate=cert,
                   inputs=p, behavior=P, bell_value=float(sol.dual_value), copies=copies)


def guessing_fixed_settings(P: Behavior, x: int, y: int, level: str = "local-1",
                            settings: SolverSettings | None = None, **kw) -> GuessingResult:
    """Guessing probability G_{x,y}(P) for one input pair."""
    result = guessing_weighted(P, InputDistribution.point(P.scenario, x, y), level, settings, **kw)
    result.kind = "fixed"
    return result


def _bell_row(model: BlockModel, expr: BellExpression) -> np.ndarray:
    return np.einsum("abxy,abxyi->i", expr.coefficients, model.prob_map)


def _identity_table(s: Scenario) -> np.ndarray:
    """Coefficients of the functional equal to 1 on every normalized behavior."""
    t = np.zeros(s.shape)
    t[:, :, 0, 0] = 1.0
    return t


def guessing_from_violation(expr: BellExpression, v: float, p: InputDistribution,
                            level: str = "local-1", settings: SolverSettings | None = None,
                            budget: int = DEFAULT_BLOCK_BUDGET, copies: int = 1,
                            retry_eps: float = 1e-9, range_tol: float = 1e-7) -> GuessingResult:
    """Guessing probability G(v) given only the value ``v`` of a Bell expression.

    Values outside the range of ``expr`` over the relaxation raise
    :class:`InfeasibleError`; the block sum is one normalized element of the
    same convex set, so the range decides feasibility.
    """
    s = expr.scenario
    p.check_scenario(s)
    lo = bell_maximum(expr, level, minimize=True, settings=settings)
    hi = bell_maximum(expr, level, settings=settings)
    if not lo - range_tol <= v <= hi + range_tol:
        raise InfeasibleError(f"Bell value {v} outside [{lo:.9g}, {hi:.9g}] at level {level}", None)
    model = block_model(s, level)
    family = StrategyFamily.build(s, p.support, budget)
    eq = np.zeros((2, model.num_vars))
    eq[0] = _bell_row(model, expr)
    eq[1, 0] = 1.0
    rows = _family_rows(model, family, p, copies)
    notes = []
    try:
        sol = _solve_blocks(model, rows, eq, np.array([v, 1.0]), 1, settings)
    except InfeasibleError:
        # v at the edge of the feasible range; move it inward once
        lb = expr.local_bound if expr.local_bound is not None else 0.0
        v2 = v - retry_eps if v > lb else v + retry_eps
        sol = _solve_blocks(model, rows, eq, np.array([v2, 1.0]), 1, settings)
        notes.append(f"v relaxed from {v!r} to {v2!r}")
        log.info(notes[-1])
        v = v2
    y = sol.eq_duals
    cert = BellExpression(s, y[0] * expr.coefficients + y[1] * _identity_table(s),
                          name="dual certificate")
    return _result(sol, model, family, rows, "violation", certificate=cert, inputs=p,
                   expression=expr, bell_value=float(v), notes=notes, copies=copies)


def single_strategy_curve(expr: BellExpression, v: float, x: int, y: int, level: str = "local-1",
                          settings: SolverSettings | None = None) -> float:
    """max over (a, b) of max P(ab|xy) over one normalized behavior with Bell value v.

    This is the function whose concave hull older approaches relied on; it
    is not concave in general.
    """
    s = expr.scenario
    model = block_model(s, level)
    eq = np.zeros((2, model.num_vars))
    eq[0] = _bell_row(model, expr)
    eq[1, 0] = 1.0
    best = -np.inf
    for a in range(s.num_outputs_a):
        for b in range(s.num_outputs_b):
            prob = ConicProblem(model.num_vars, model.prob_map[a, b, x, y], eq, [v, 1.0])
            model.cone(prob, 0, "block")
            try:
                report = _run(prob, settings)
            except InfeasibleError:
                continue
            best = max(best, report.primal_value)
    if best == -np.inf:
        raise InfeasibleError(f"Bell value {v} not attainable at level {level}")
    return float(best)


def guessing_no_signalling(P: Behavior, p: InputDistribution,
                           settings: SolverSettings | None = None, **kw) -> GuessingResult:
    """Same decomposition with no-signalling blocks, solved as a linear program."""
    return guessing_weighted(P, p, NS_LEVEL, settings, **kw)


def bell_maximum(expr: BellExpression, level: str = "npa-2", minimize: bool = False,
                 settings: SolverSettings | None = None) -> float:
    """Maximum (or minimum) of ``expr`` over the relaxation of the quantum set."""
    model = block_model(expr.scenario, level)
    row = _bell_row(model, expr)
    eq = np.zeros((1, model.num_vars))
    eq[0, 0] = 1.0
    prob = ConicProblem(model.num_vars, -row if minimize else row, eq, [1.0])
    model.cone(prob, 0, "block")
    report = _run(prob, settings)
    return -report.primal_value if minimize else report.primal_value
