"""Experimental count records: correlators, no-signalling projection and
quantum-membership checks for 2-input binary experiments.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import sparse

from .bell import Behavior, CorrelatorSet, behavior_from_correlators
from .relaxation import build_structure, cg_coordinates
from .solver import ConicProblem, SolverSettings, solve

log = logging.getLogger(__name__)

COUNTS_HEADER = ("x", "y", "N", "C", "SA", "SB")
REFERENCE_DATASET = "reference_projected.json"


class InvalidCounts(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CountsRecord:
    """Tallies per setting pair: trials N, coincidences C, singles S_A and S_B.

    Arrays are indexed [x, y].
    """

    N: np.ndarray
    C: np.ndarray
    SA: np.ndarray
    SB: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(a, dtype=np.int64) for a in (self.N, self.C, self.SA, self.SB)]
        if len({a.shape for a in arrs}) != 1 or arrs[0].ndim != 2:
            raise InvalidCounts("count tables must share one 2-D shape")
        N, C, SA, SB = arrs
        if np.any(N <= 0):
            raise InvalidCounts("every setting pair needs N > 0")
        if np.any(C < 0) or np.any(C > np.minimum(SA, SB)) or np.any(np.maximum(SA, SB) > N):
            raise InvalidCounts("counts must satisfy 0 <= C <= min(SA, SB) <= max(SA, SB) <= N")
        for name, a in zip(("N", "C", "SA", "SB"), arrs):
            object.__setattr__(self, name, a)

    @property
    def shape(self) -> tuple[int, int]:
        return self.N.shape

    @classmethod
    def from_csv(cls, path) -> "CountsRecord":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != COUNTS_HEADER:
                raise InvalidCounts(f"expected header {','.join(COUNTS_HEADER)}, got {reader.fieldnames}")
            rows = [{k: int(v) for k, v in r.items()} for r in reader]
        if not rows:
            raise InvalidCounts("empty counts file")
        nx = max(r["x"] for r in rows) + 1
        ny = max(r["y"] for r in rows) + 1
        tables = {k: np.full((nx, ny), -1, dtype=np.int64) for k in COUNTS_HEADER[2:]}
        for r in rows:
            for k in tables:
                tables[k][r["x"], r["y"]] = r[k]
        if np.any(tables["N"] < 0):
            raise InvalidCounts("missing setting pairs in counts file")
        return cls(**tables)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COUNTS_HEADER)
            for x in range(self.shape[0]):
                for y in range(self.shape[1]):
                    w.writerow([x, y, self.N[x, y], self.C[x, y], self.SA[x, y], self.SB[x, y]])


@dataclass(frozen=True, eq=False)
class SettingCorrelators:
    """Setting-dependent <A_xy>, <B_xy>, <A_xy B_xy>, each indexed [x, y]."""

    A: np.ndarray
    B: np.ndarray
    AB: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.A), np.ravel(self.B), np.ravel(self.AB)])

    @classmethod
    def from_vector(cls, v, shape=(2, 2)) -> "SettingCorrelators":
        k = shape[0] * shape[1]
        v = np.asarray(v, float)
        return cls(v[:k].reshape(shape), v[k:2 * k].reshape(shape), v[2 * k:].reshape(shape))

    @classmethod
    def from_correlators(cls, c: CorrelatorSet) -> "SettingCorrelators":
        nx, ny = c.correlators.shape
        return cls(np.repeat(c.marginals_a[:, None], ny, axis=1),
                   np.repeat(c.marginals_b[None, :], nx, axis=0), c.correlators.copy())

    def to_dict(self) -> dict:
        return {"A": np.asarray(self.A).tolist(), "B": np.asarray(self.B).tolist(),
                "AB": np.asarray(self.AB).tolist()}


def counts_to_correlators(rec: CountsRecord) -> SettingCorrelators:
    N = rec.N.astype(float)
    return SettingCorrelators(A=(2 * rec.SA - N) / N, B=(2 * rec.SB - N) / N,
                              AB=(4 * rec.C - 2 * rec.SA - 2 * rec.SB + N) / N)


def project_no_signalling(raw: SettingCorrelators) -> CorrelatorSet:
    """Closest no-signalling point in the per-setting correlator coordinates.

    Marginals are averaged over the other party's setting; joint
    correlators are unconstrained by no-signalling and pass through.
    """
    A, B, AB = (np.asarray(t, float) for t in (raw.A, raw.B, raw.AB))
    if A.shape != (2, 2) or B.shape != (2, 2) or AB.shape != (2, 2):
        raise ValueError("projection is defined for two inputs per party")
    return CorrelatorSet(A.mean(axis=1), B.mean(axis=0), AB)


def ns_directions(shape=(2, 2)) -> np.ndarray:
    """Orthonormal basis (rows) of the no-signalling subspace in per-setting coordinates."""
    nx, ny = shape
    k = nx * ny
    rows = []
    for x in range(nx):
        v = np.zeros(3 * k)
        v[[x * ny + y for y in range(ny)]] = 1 / np.sqrt(ny)
        rows.append(v)
    for y in range(ny):
        v = np.zeros(3 * k)
        v[[k + x * ny + y for x in range(nx)]] = 1 / np.sqrt(nx)
        rows.append(v)
    for i in range(k):
        v = np.zeros(3 * k)
        v[2 * k + i] = 1.0
        rows.append(v)
    return np.array(rows)


@dataclass
class MembershipReport:
    feasible: bool
    margin: float       # largest t with Gamma - t I >= 0; negative means outside the relaxation
    level: str
    status: str

    def to_dict(self) -> dict:
        return {"feasible": self.feasible, "margin": self.margin, "level": self.level,
                "status": self.status}


def check_quantum_membership(P: Behavior, level: str = "local-1", tol: float = 1e-7,
                             settings: SolverSettings | None = None) -> MembershipReport:
    """Test whether some moment matrix at ``level`` reproduces ``P``.

    Solves ``max t`` subject to the Collins-Gisin moments of ``P`` and
    ``Gamma - t I >= 0``; ``P`` is accepted when ``t >= -tol``.
    """
    if not P.is_no_signalling(max(P.tol, 1e-9)):
        raise ValueError(f"behavior is signalling ({P.signalling():.3g}); project it first")
    ms = build_structure(P.scenario, level)
    n = ms.num_vars
    sel = np.zeros((ms.cg_index.size, n + 1))
    sel[np.arange(ms.cg_index.size), ms.cg_index] = 1.0
    L = ms.lmi_operator()
    eye = sparse.csr_matrix(np.eye(ms.size).reshape(-1, 1))
    c = np.zeros(n + 1)
    c[n] = 1.0
    prob = ConicProblem(n + 1, c, sel, cg_coordinates(P))
    prob.add_cone("psd", ms.size, sparse.hstack([L, -eye]), label="gamma")
    report = solve(prob, settings)
    if report.status == "infeasible":
        return MembershipReport(False, -np.inf, level, report.status)
    if not report.ok:
        from .solver import SolverError
        raise SolverError(f"membership test failed ({report.raw_status})")
    margin = float(report.primal_value)
    return MembershipReport(margin >= -tol, margin, level, report.status)


def process_counts(rec: CountsRecord) -> tuple[Behavior, dict]:
    """Counts to a no-signalling behavior plus a provenance block."""
    raw = counts_to_correlators(rec)
    proj = project_no_signalling(raw)
    residual = raw.vector() - SettingCorrelators.from_correlators(proj).vector()
    provenance = {"raw_correlators": raw.to_dict(), "projected_correlators": proj.to_dict(),
                  "projection_residual_norm": float(np.linalg.norm(residual))}
    return behavior_from_correlators(proj), provenance


def behavior_document(P: Behavior, provenance: dict | None = None) -> dict:
    doc = P.to_dict()
    if provenance:
        doc["provenance"] = provenance
    return doc


def write_behavior(path, P: Behavior, provenance: dict | None = None) -> None:
    Path(path).write_text(json.dumps(behavior_document(P, provenance), indent=2))


def read_behavior(path) -> Behavior:
    return Behavior.from_dict(json.loads(Path(path).read_text()))


def reference_document() -> dict:
    """Bundled projected correlators with their provenance notes."""
    text = resources.files("randcert.data").joinpath(REFERENCE_DATASET).read_text()
    return json.loads(text)


def reference_correlators() -> CorrelatorSet:
    return CorrelatorSet.from_dict(reference_document()["correlators"])


def reference_behavior() -> Behavior:
    return behavior_from_correlators(reference_correlators())
