"""Dual certificates of guessing-probability programs.

Every dual-feasible point of a block program is a Bell expression ``c`` plus
one negative semidefinite matrix ``M_k`` per block such that, for every
moment variable ``i`` and block ``k``::

    sum_abxy f_i(ab|xy) c_abxy + Tr(F_i M_k) = rows_k[i]

where ``rows_k`` are the objective coefficients of block ``k``.  Any behavior
``Q`` in the relaxation then satisfies ``G(Q) <= c . Q``, so the Bell value
alone bounds the guessing probability.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .bell import BellExpression, Behavior, InputDistribution, evaluate_bell
from .programs import GuessingResult, guessing_from_violation
from .solver import SolverSettings

DEFAULT_GAP_TOL = 1e-6
IDENTITY_TOL = 1e-7


class CertificateError(ValueError):
    pass


@dataclass(eq=False)
class Certificate:
    bell: BellExpression
    block_duals: list = field(repr=False)   # M_k, negative semidefinite (vectors for ns blocks)
    claimed_bound: float
    bell_value: float | None
    gap: float
    level: str
    advisory: bool = False
    fingerprint: str | None = None

    def bound_for(self, Q: Behavior) -> float:
        """Upper bound on the guessing probability of any behavior ``Q`` in the relaxation."""
        return evaluate_bell(self.bell, Q)

    def max_eigenvalue(self) -> float:
        """Largest eigenvalue over all M_k; soundness needs it <= 0 up to tolerance."""
        worst = -np.inf
        for M in self.block_duals:
            M = np.asarray(M)
            worst = max(worst, float(np.linalg.eigvalsh(M).max()) if M.ndim == 2 else float(M.max()))
        return worst

    def to_dict(self) -> dict:
        return {"coefficients": self.bell.coefficients.ravel().tolist(),
                "scenario": self.bell.scenario.to_dict(),
                "claimed_bound": self.claimed_bound, "bell_value": self.bell_value,
                "gap": self.gap, "level": self.level, "advisory": self.advisory,
                "fingerprint": self.fingerprint}

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def fingerprint(P: Behavior | None, p: InputDistribution | None, level: str) -> str:
    h = hashlib.sha256()
    if P is not None:
        h.update(np.round(P.probabilities, 12).tobytes())
    if p is not None:
        h.update(np.round(p.weights, 12).tobytes())
    h.update(level.encode())
    return h.hexdigest()[:16]


def extract_certificate(result: GuessingResult, gap_tol: float = DEFAULT_GAP_TOL,
                        strict: bool = False) -> Certificate:
    """Reorganize the dual solution of ``result`` into a :class:`Certificate`.

    A gap above ``gap_tol`` (relative) marks the certificate advisory, or
    raises when ``strict``.
    """
    sol = result.solution
    if sol is None or result.certificate is None:
        raise CertificateError("result carries no dual solution")
    if not np.all(np.isfinite(sol.eq_duals)) or any(Z is None for Z in sol.block_duals):
        raise CertificateError("dual solution unavailable")
    gap = result.gap
    advisory = gap > gap_tol * max(1.0, abs(result.primal_value))
    if advisory and strict:
        raise CertificateError(f"duality gap {gap:.3g} above tolerance {gap_tol:g}")
    bell = result.certificate
    if result.behavior is not None:
        value = evaluate_bell(bell, result.behavior)
    else:
        # the identity functional carries the normalization; c . Q equals the dual value
        value = float(result.dual_value)
    return Certificate(bell=bell, block_duals=[-np.asarray(Z) for Z in sol.block_duals],
                       claimed_bound=float(result.dual_value), bell_value=value, gap=gap,
                       level=result.level, advisory=bool(advisory),
                       fingerprint=fingerprint(result.behavior, result.inputs, result.level))


def dual_residual(cert: Certificate, result: GuessingResult) -> float:
    """Largest entrywise violation of the dual feasibility identities."""
    model = result.model
    lin = np.einsum("abxy,abxyi->i", cert.bell.coefficients, model.prob_map)
    worst = 0.0
    for row, M in zip(result.objective_rows, cert.block_duals):
        if model.structure is not None:
            trace = model.structure.lmi_operator().T @ np.asarray(M).ravel()
        else:
            trace = model.prob_map.reshape(-1, model.num_vars).T @ np.asarray(M).ravel()
        worst = max(worst, float(np.abs(lin + trace - row).max()))
    return worst


def verify_certificate(cert: Certificate, P: Behavior | None, p: InputDistribution, level: str,
                       settings: SolverSettings | None = None, **kw) -> float:
    """Re-derive the guessing bound from the certificate's Bell value alone.

    With ``P`` omitted the stored Bell value is used, which covers
    certificates of value-only programs.
    """
    v = cert.bell_value if P is None else evaluate_bell(cert.bell, P)
    return guessing_from_violation(cert.bell, v, p, level, settings, **kw).G


def check_certificate(cert: Certificate, result: GuessingResult, tol: float = IDENTITY_TOL) -> dict:
    """Summary of the soundness conditions; ``ok`` when all hold within ``tol``."""
    res = dual_residual(cert, result)
    eig = cert.max_eigenvalue()
    weak = cert.claimed_bound >= result.primal_value - tol
    return {"dual_residual": res, "max_eigenvalue": eig, "weak_duality": bool(weak),
            "ok": bool(res <= tol and eig <= tol and weak)}


def correlator_form(bell: BellExpression) -> dict:
    """Write a binary functional as c0 + sum a_x <A_x> + sum b_y <B_y> + sum w_xy <A_x B_y>.

    Exact on no-signalling behaviors.
    """
    s = bell.scenario
    if not s.is_binary:
        raise ValueError("correlator form needs binary outcomes")
    c = bell.coefficients
    sign = np.array([1.0, -1.0])
    return {"constant": float(c.sum() / 4),
            "A": np.einsum("abxy,a->x", c, sign) / 4,
            "B": np.einsum("abxy,b->y", c, sign) / 4,
            "AB": np.einsum("abxy,a,b->xy", c, sign, sign) / 4}


@dataclass
class GammaFit:
    gamma: float
    scale: float
    residual: float   # relative distance of the non-constant part from scale * gamma-form


def fit_gamma(bell: BellExpression) -> GammaFit:
    """Closest ``scale * (gamma <A0B0> + <A0B1> + <A1B0> - <A1B1>)`` to ``bell``.

    Constants are ignored (they shift every behavior equally); marginal
    terms count toward the residual.
    """
    if bell.scenario.shape != (2, 2, 2, 2):
        raise ValueError("the gamma family lives in the 2-input binary scenario")
    f = correlator_form(bell)
    w = f["AB"]
    scale = float(np.mean([w[0, 1], w[1, 0], -w[1, 1]]))
    if scale == 0:
        return GammaFit(float("nan"), 0.0, float("inf"))
    gamma = float(w[0, 0] / scale)
    target = scale * np.array([[gamma, 1.0], [1.0, -1.0]])
    full = np.concatenate([w.ravel(), f["A"], f["B"]])
    diff = np.concatenate([(w - target).ravel(), f["A"], f["B"]])
    return GammaFit(gamma, scale, float(np.linalg.norm(diff) / np.linalg.norm(full)))
