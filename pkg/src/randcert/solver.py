"""Conic programs in inequality (LMI) form and their solver adapters.

A :class:`ConicProblem` reads::

    maximize    c @ x
    subject to  A_eq @ x == b_eq
                L_j @ x + h_j  in  K_j        for every cone block j

with free variables ``x`` and cones ``K_j`` either the nonnegative orthant or
the cone of positive semidefinite matrices (``L_j`` then maps ``x`` to the
row-major vectorization of a symmetric matrix).  The dual reported back is::

    minimize    b_eq @ y + sum_j <Z_j, h_j>
    subject to  A_eq.T @ y - sum_j L_j.T @ vec(Z_j) == c,   Z_j in K_j
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import sparse

log = logging.getLogger(__name__)

Status = Literal["optimal", "near-optimal", "infeasible", "unbounded", "failed"]


class SolverError(RuntimeError):
    """Numerical failure or unavailable backend."""


@dataclass(frozen=True, eq=False)
class ConeBlock:
    kind: Literal["nonneg", "psd"]
    size: int
    linear: sparse.csr_matrix
    offset: np.ndarray | None = None
    label: str = ""

    @property
    def dim(self) -> int:
        return self.size * self.size if self.kind == "psd" else self.size


@dataclass(eq=False)
class ConicProblem:
    num_vars: int
    objective: np.ndarray
    eq_matrix: sparse.csr_matrix
    eq_rhs: np.ndarray
    cones: list[ConeBlock] = field(default_factory=list)
    sense: Literal["maximize"] = "maximize"

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        self.eq_matrix = sparse.csr_matrix(self.eq_matrix)
        self.eq_rhs = np.asarray(self.eq_rhs, dtype=float)
        if self.objective.shape != (self.num_vars,):
            raise ValueError("objective length differs from the number of variables")
        if self.eq_matrix.shape != (self.eq_rhs.size, self.num_vars):
            raise ValueError(f"equality matrix shape {self.eq_matrix.shape} is inconsistent")
        for cone in self.cones:
            if cone.linear.shape != (cone.dim, self.num_vars):
                raise ValueError(f"cone block {cone.label!r} has shape {cone.linear.shape}, "
                                 f"expected {(cone.dim, self.num_vars)}")
            if cone.offset is not None and np.size(cone.offset) != cone.dim:
                raise ValueError(f"cone block {cone.label!r} offset has the wrong length")

    @property
    def has_psd(self) -> bool:
        return any(c.kind == "psd" for c in self.cones)

    def add_cone(self, kind, size, linear, offset=None, label=""):
        self.cones.append(ConeBlock(kind, size, sparse.csr_matrix(linear), offset, label))


@dataclass(frozen=True)
class SolverSettings:
    backend: Literal["auto", "clarabel", "qics", "highs"] = "auto"
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    accept_gap: float = 1e-6
    max_iter: int = 500
    verbose: bool = False
    # auto mode retries PSD problems with at most this many cones on qics
    fallback_max_cones: int = 64


@dataclass(eq=False)
class SolveReport:
    status: Status
    primal_value: float
    dual_value: float
    x: np.ndarray
    eq_duals: np.ndarray
    cone_duals: list[np.ndarray]
    iterations: int
    solve_time: float
    backend: str
    raw_status: str = ""

    @property
    def gap(self) -> float:
        return abs(self.primal_value - self.dual_value)

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "near-optimal")


def _svec_index(n: int):
    """Rows/cols of the upper triangle in column-major order, as used by Clarabel."""
    rows, cols = [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


def _svec_operator(n: int) -> sparse.csr_matrix:
    """Matrix S with svec(X) = S @ vec(X) for symmetric X (row-major vec)."""
    r, c = _svec_index(n)
    k = np.arange(r.size)
    diag = r == c
    data, rr, cc = [], [], []
    # off-diagonal entries carry sqrt(2) in total, split over (i, j) and (j, i)
    rr += list(k[diag]); cc += list(r[diag] * n + c[diag]); data += [1.0] * int(diag.sum())
    off = ~diag
    w = np.sqrt(2) / 2
    rr += list(k[off]) * 2
    cc += list(r[off] * n + c[off]) + list(c[off] * n + r[off])
    data += [w] * (2 * int(off.sum()))
    return sparse.csr_matrix((data, (rr, cc)), shape=(r.size, n * n))


def _smat(z: np.ndarray, n: int) -> np.ndarray:
    r, c = _svec_index(n)
    out = np.zeros((n, n))
    scale = np.where(r == c, 1.0, 1 / np.sqrt(2))
    out[r, c] = z * scale
    out[c, r] = z * scale
    return out


def _solve_clarabel(prob: ConicProblem, settings: SolverSettings) -> SolveReport:
    try:
        import clarabel
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise SolverError("clarabel is not installed") from exc

    blocks = [prob.eq_matrix]
    rhs = [prob.eq_rhs]
    cones = []
    if prob.eq_rhs.size:
        cones.append(clarabel.ZeroConeT(prob.eq_rhs.size))
    svecs = {}
    for cone in prob.cones:
        h = np.zeros(cone.dim) if cone.offset is None else np.asarray(cone.offset, float)
        if cone.kind == "nonneg":
            blocks.append(-cone.linear)
            rhs.append(h)
            cones.append(clarabel.NonnegativeConeT(cone.size))
        else:
            S = svecs.setdefault(cone.size, _svec_operator(cone.size))
            blocks.append(-(S @ cone.linear))
            rhs.append(S @ h)
            cones.append(clarabel.PSDTriangleConeT(cone.size))
    A = sparse.vstack(blocks, format="csc")
    b = np.concatenate(rhs)
    P = sparse.csc_matrix((prob.num_vars, prob.num_vars))

    opts = clarabel.DefaultSettings()
    opts.verbose = settings.verbose
    opts.max_iter = settings.max_iter
    opts.tol_feas = settings.feas_tol
    opts.tol_gap_abs = settings.gap_tol
    opts.tol_gap_rel = settings.gap_tol
    opts.presolve_enable = False
    opts.chordal_decomposition_enable = False

    t0 = time.perf_counter()
    solver = clarabel.DefaultSolver(P, -prob.objective, A, b, cones, opts)
    sol = solver.solve()
    elapsed = time.perf_counter() - t0

    raw = str(sol.status)
    x = np.asarray(sol.x)
    z = np.asarray(sol.z)
    m = prob.eq_rhs.size
    y = z[:m]
    duals = []
    pos = m
    for cone in prob.cones:
        if cone.kind == "nonneg":
            duals.append(z[pos:pos + cone.size].copy())
            pos += cone.size
        else:
            k = cone.size * (cone.size + 1) // 2
            duals.append(_smat(z[pos:pos + k], cone.size))
            pos += k

    if raw == "Solved":
        status: Status = "optimal"
    elif raw.startswith("Almost") and "Infeasible" not in raw:
        status = "near-optimal"
    elif raw in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        status = "infeasible"
    elif raw in ("DualInfeasible", "AlmostDualInfeasible"):
        status = "unbounded"
    else:
        status = "failed"
    return _finish(prob, status, x, y, duals, int(sol.iterations), elapsed, "clarabel", raw, settings)


def _solve_highs(prob: ConicProblem, settings: SolverSettings) -> SolveReport:
    from scipy.optimize import linprog

    if prob.has_psd:
        raise SolverError("the HiGHS backend only handles linear programs")
    ub = [-c.linear for c in prob.cones]
    ub_rhs = [np.zeros(c.dim) if c.offset is None else np.asarray(c.offset, float) for c in prob.cones]
    kwargs = {}
    if ub:
        kwargs["A_ub"] = sparse.vstack(ub, format="csr")
        kwargs["b_ub"] = np.concatenate(ub_rhs)
    if prob.eq_rhs.size:
        kwargs["A_eq"] = prob.eq_matrix
        kwargs["b_eq"] = prob.eq_rhs
    t0 = time.perf_counter()
    res = linprog(-prob.objective, bounds=(None, None), method="highs",
                  options={"primal_feasibility_tolerance": settings.feas_tol,
                           "dual_feasibility_tolerance": settings.feas_tol},
                  **kwargs)
    elapsed = time.perf_counter() - t0
    status_map = {0: "optimal", 1: "failed", 2: "infeasible", 3: "unbounded", 4: "failed"}
    status: Status = status_map.get(res.status, "failed")
    if status != "optimal":
        n = prob.num_vars
        return SolveReport(status, np.nan, np.nan, np.full(n, np.nan), np.full(prob.eq_rhs.size, np.nan),
                           [], int(getattr(res, "nit", 0)), elapsed, "highs", res.message)
    # marginals are sensitivities of the minimized objective -c@x
    y = -np.asarray(res.eqlin.marginals) if prob.eq_rhs.size else np.zeros(0)
    z_all = -np.asarray(res.ineqlin.marginals) if ub else np.zeros(0)
    duals, pos = [], 0
    for c in prob.cones:
        duals.append(z_all[pos:pos + c.dim])
        pos += c.dim
    return _finish(prob, status, np.asarray(res.x), y, duals, int(res.nit), elapsed, "highs", res.message, settings)


def _solve_qics(prob: ConicProblem, settings: SolverSettings) -> SolveReport:
    """Slower pure-python interior point; copes better with degenerate optima."""
    try:
        import qics
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise SolverError("qics is not installed") from exc

    cones, G, h = [], [], []
    for cone in prob.cones:
        cones.append(qics.cones.NonNegOrthant(cone.size) if cone.kind == "nonneg"
                     else qics.cones.PosSemidefinite(cone.size))
        G.append(-cone.linear)
        h.append(np.zeros(cone.dim) if cone.offset is None else np.asarray(cone.offset, float))
    kwargs = {}
    if prob.eq_rhs.size:
        kwargs["A"] = prob.eq_matrix.tocsr()
        kwargs["b"] = prob.eq_rhs.reshape(-1, 1)
    model = qics.Model(c=-prob.objective.reshape(-1, 1), G=sparse.vstack(G, format="csr"),
                       h=np.concatenate(h).reshape(-1, 1), cones=cones, **kwargs)
    solver = qics.Solver(model, max_iter=settings.max_iter, tol_gap=settings.gap_tol,
                         tol_feas=settings.feas_tol, verbose=3 if settings.verbose else 0)
    t0 = time.perf_counter()
    info = solver.solve()
    elapsed = time.perf_counter() - t0
    raw = str(info["sol_status"])
    status_map = {"optimal": "optimal", "near_optimal": "near-optimal", "pinfeas": "infeasible",
                  "near_pinfeas": "infeasible", "dinfeas": "unbounded", "near_dinfeas": "unbounded"}
    status: Status = status_map.get(raw, "failed")
    x = np.asarray(info["x_opt"]).ravel()
    y = np.asarray(info["y_opt"]).ravel() if prob.eq_rhs.size else np.zeros(0)
    z = info["z_opt"]
    duals = []
    for k, cone in enumerate(prob.cones):
        v = np.asarray(z.vecs[k]).ravel()
        duals.append(v.copy() if cone.kind == "nonneg" else v.reshape(cone.size, cone.size).copy())
    return _finish(prob, status, x, y, duals, int(info["num_iter"]), elapsed, "qics", raw, settings)


def _finish(prob, status, x, y, duals, iters, elapsed, backend, raw, settings) -> SolveReport:
    primal = float(prob.objective @ x)
    dual = float(prob.eq_rhs @ y)
    for cone, Z in zip(prob.cones, duals):
        if cone.offset is not None:
            dual += float(np.ravel(Z) @ np.asarray(cone.offset, float))
    if status in ("optimal", "near-optimal"):
        gap = abs(primal - dual)
        if gap > settings.accept_gap * max(1.0, abs(primal)):
            log.info("duality gap %.3g above acceptance threshold", gap)
            status = "near-optimal"
    return SolveReport(status, primal, dual, x, y, duals, iters, elapsed, backend, raw)


_RANK = {"optimal": 0, "near-optimal": 1, "infeasible": 2, "unbounded": 2, "failed": 3}

BACKENDS = {"clarabel": _solve_clarabel, "qics": _solve_qics, "highs": _solve_highs}


def solve(prob: ConicProblem, settings: SolverSettings | None = None) -> SolveReport:
    settings = settings or SolverSettings()
    backend = settings.backend
    if backend == "auto":
        backend = "clarabel" if prob.has_psd else "highs"
    if backend not in BACKENDS:
        raise SolverError(f"unknown backend {backend!r}")
    report = BACKENDS[backend](prob, settings)
    if (settings.backend == "auto" and backend == "clarabel" and report.status != "optimal"
            and report.status != "infeasible" and len(prob.cones) <= settings.fallback_max_cones):
        try:
            retry = _solve_qics(prob, settings)
        except SolverError:
            retry = None
        if retry is not None and _RANK[retry.status] <= _RANK[report.status]:
            log.debug("clarabel %s (%s); using qics %s", report.status, report.raw_status, retry.status)
            report = retry
    log.debug("%s: %s primal=%.10g dual=%.10g in %.2fs", backend, report.status,
              report.primal_value, report.dual_value, report.solve_time)
    return report


def export_sdpa(prob: ConicProblem, path) -> None:
    """Write the problem in SDPA sparse format (``.dat-s``).

    Equalities become a pair of diagonal LP blocks; nonnegative cones are
    diagonal blocks.  SDPA minimizes, so the objective is negated.
    """
    n = prob.num_vars
    blocks = []  # (signed size, constant matrix entries, per-variable entries)
    if prob.eq_rhs.size:
        m = prob.eq_rhs.size
        A = prob.eq_matrix.tocoo()
        ent = [(r, r, v, c) for r, c, v in zip(A.row, A.col, A.data)]
        ent += [(r + m, r + m, -v, c) for r, c, v in zip(A.row, A.col, A.data)]
        const = [(i, i, b) for i, b in enumerate(prob.eq_rhs)] + [(i + m, i + m, -b) for i, b in enumerate(prob.eq_rhs)]
        blocks.append((-2 * m, const, ent))
    for cone in prob.cones:
        L = cone.linear.tocoo()
        h = np.zeros(cone.dim) if cone.offset is None else np.asarray(cone.offset, float)
        if cone.kind == "nonneg":
            ent = [(r, r, v, c) for r, c, v in zip(L.row, L.col, L.data)]
            const = [(i, i, -hv) for i, hv in enumerate(h) if hv]
            blocks.append((-cone.size, const, ent))
        else:
            s = cone.size
            ent = [(r // s, r % s, v, c) for r, c, v in zip(L.row, L.col, L.data) if r // s <= r % s]
            const = [(k // s, k % s, -hv) for k, hv in enumerate(h) if hv and k // s <= k % s]
            blocks.append((s, const, ent))
    lines = ["* exported by randcert", str(n), str(len(blocks)),
             " ".join(str(b[0]) for b in blocks),
             " ".join(repr(float(-c)) for c in prob.objective)]
    for bi, (_, const, ent) in enumerate(blocks, start=1):
        for i, j, v in const:
            lines.append(f"0 {bi} {i + 1} {j + 1} {v!r}")
        for i, j, v, var in ent:
            lines.append(f"{var + 1} {bi} {i + 1} {j + 1} {float(v)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
