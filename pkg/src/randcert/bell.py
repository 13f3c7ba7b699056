"""Bipartite Bell scenarios, behaviors, correlators and Bell expressions.

All tables are indexed ``[a, b, x, y]`` with 0-based outcomes and inputs.
For binary outcomes, outcome 0 is identified with the eigenvalue +1 and
outcome 1 with -1 when converting to correlators.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any

import numpy as np

DEFAULT_TOL = 1e-9
MAX_DETERMINISTIC_STRATEGIES = 10**7


class ScenarioMismatch(ValueError):
    pass


class InvalidBehavior(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    num_inputs_a: int
    num_inputs_b: int
    num_outputs_a: int
    num_outputs_b: int

    def __post_init__(self):
        for name in ("num_inputs_a", "num_inputs_b", "num_outputs_a", "num_outputs_b"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.num_outputs_a, self.num_outputs_b, self.num_inputs_a, self.num_inputs_b)

    @property
    def size(self) -> int:
        return self.num_outputs_a * self.num_outputs_b * self.num_inputs_a * self.num_inputs_b

    @property
    def is_binary(self) -> bool:
        return self.num_outputs_a == 2 and self.num_outputs_b == 2

    def settings(self):
        return itertools.product(range(self.num_inputs_a), range(self.num_inputs_b))

    def to_dict(self) -> dict:
        return {"x": self.num_inputs_a, "y": self.num_inputs_b,
                "a": self.num_outputs_a, "b": self.num_outputs_b}

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(int(d["x"]), int(d["y"]), int(d["a"]), int(d["b"]))


CHSH_SCENARIO = Scenario(2, 2, 2, 2)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Behavior:
    """A conditional distribution P(ab|xy), validated on construction."""

    scenario: Scenario
    probabilities: np.ndarray
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        p = _frozen(self.probabilities)
        if p.shape != self.scenario.shape:
            raise InvalidBehavior(f"table shape {p.shape} does not match scenario {self.scenario.shape}")
        if np.any(p < -self.tol) or np.any(p > 1 + self.tol):
            raise InvalidBehavior("probabilities outside [0, 1]")
        norms = p.sum(axis=(0, 1))
        if np.max(np.abs(norms - 1)) > self.tol:
            raise InvalidBehavior(f"not normalized: max deviation {np.max(np.abs(norms - 1)):.3g}")
        object.__setattr__(self, "probabilities", p)

    def marginals_a(self) -> np.ndarray:
        """P_A(a|x, y) with shape (|a|, |x|, |y|)."""
        return self.probabilities.sum(axis=1)

    def marginals_b(self) -> np.ndarray:
        """P_B(b|x, y) with shape (|b|, |x|, |y|)."""
        return self.probabilities.sum(axis=0)

    def signalling(self) -> float:
        """Largest violation of the no-signalling conditions."""
        pa = self.marginals_a()
        pb = self.marginals_b()
        dev_a = np.max(np.abs(pa - pa[:, :, :1])) if pa.size else 0.0
        dev_b = np.max(np.abs(pb - pb[:, :1, :])) if pb.size else 0.0
        return float(max(dev_a, dev_b))

    def is_no_signalling(self, tol: float | None = None) -> bool:
        return self.signalling() <= (self.tol if tol is None else tol)

    def mix(self, other: "Behavior", weight: float) -> "Behavior":
        """Return ``weight * self + (1 - weight) * other``."""
        _check_same(self.scenario, other.scenario)
        return Behavior(self.scenario, weight * self.probabilities + (1 - weight) * other.probabilities)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario.to_dict(),
                "probabilities": self.probabilities.ravel().tolist()}

    @classmethod
    def from_dict(cls, d: dict, tol: float = DEFAULT_TOL) -> "Behavior":
        if "correlators" in d:
            return behavior_from_correlators(CorrelatorSet.from_dict(d["correlators"]))
        scenario = Scenario.from_dict(d["scenario"])
        table = np.asarray(d["probabilities"], dtype=float).reshape(scenario.shape)
        return cls(scenario, table, tol=tol)


@dataclass(frozen=True, eq=False)
class CorrelatorSet:
    """Marginals <A_x>, <B_y> and correlators <A_x B_y> of a binary behavior."""

    marginals_a: np.ndarray
    marginals_b: np.ndarray
    correlators: np.ndarray

    def __post_init__(self):
        a = _frozen(np.ravel(self.marginals_a))
        b = _frozen(np.ravel(self.marginals_b))
        ab = _frozen(self.correlators)
        if ab.shape != (a.size, b.size):
            raise ValueError(f"correlator table shape {ab.shape} inconsistent with marginals")
        for arr in (a, b, ab):
            if np.any(np.abs(arr) > 1 + DEFAULT_TOL):
                raise ValueError("correlator values must lie in [-1, 1]")
        object.__setattr__(self, "marginals_a", a)
        object.__setattr__(self, "marginals_b", b)
        object.__setattr__(self, "correlators", ab)

    @property
    def scenario(self) -> Scenario:
        return Scenario(self.marginals_a.size, self.marginals_b.size, 2, 2)

    def to_dict(self) -> dict:
        return {"A": self.marginals_a.tolist(), "B": self.marginals_b.tolist(),
                "AB": self.correlators.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CorrelatorSet":
        return cls(np.asarray(d["A"], float), np.asarray(d["B"], float), np.asarray(d["AB"], float))


@dataclass(frozen=True, eq=False)
class InputDistribution:
    weights: np.ndarray
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 2:
            raise ValueError("input weights must be a |x| by |y| table")
        if np.any(w < -self.tol):
            raise ValueError("input weights must be nonnegative")
        if abs(w.sum() - 1) > self.tol:
            raise ValueError(f"input weights sum to {w.sum()}, not 1")
        object.__setattr__(self, "weights", w)

    @property
    def support(self) -> list[tuple[int, int]]:
        return [(int(x), int(y)) for x, y in zip(*np.nonzero(self.weights > 0))]

    @classmethod
    def uniform(cls, scenario: Scenario) -> "InputDistribution":
        n = scenario.num_inputs_a * scenario.num_inputs_b
        return cls(np.full((scenario.num_inputs_a, scenario.num_inputs_b), 1.0 / n))

    @classmethod
    def point(cls, scenario: Scenario, x: int, y: int) -> "InputDistribution":
        w = np.zeros((scenario.num_inputs_a, scenario.num_inputs_b))
        w[x, y] = 1.0
        return cls(w)

    def check_scenario(self, scenario: Scenario):
        if self.weights.shape != (scenario.num_inputs_a, scenario.num_inputs_b):
            raise ScenarioMismatch("input distribution does not match scenario inputs")

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist()}


@dataclass(frozen=True, eq=False)
class BellExpression:
    scenario: Scenario
    coefficients: np.ndarray
    local_bound: float | None = None
    name: str | None = field(default=None, compare=False)

    def __post_init__(self):
        c = _frozen(self.coefficients)
        if c.shape != self.scenario.shape:
            raise ScenarioMismatch(f"coefficient table shape {c.shape} does not match scenario")
        object.__setattr__(self, "coefficients", c)

    def __call__(self, behavior: Behavior) -> float:
        return evaluate_bell(self, behavior)

    def scaled(self, factor: float) -> "BellExpression":
        bound = None if self.local_bound is None or factor < 0 else self.local_bound * factor
        return BellExpression(self.scenario, factor * self.coefficients, bound)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"scenario": self.scenario.to_dict(),
                             "coefficients": self.coefficients.ravel().tolist()}
        if self.local_bound is not None:
            d["local_bound"] = self.local_bound
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BellExpression":
        scenario = Scenario.from_dict(d["scenario"])
        coeffs = np.asarray(d["coefficients"], dtype=float).reshape(scenario.shape)
        return cls(scenario, coeffs, d.get("local_bound"), d.get("name"))


def _check_same(s1: Scenario, s2: Scenario):
    if s1 != s2:
        raise ScenarioMismatch(f"scenario mismatch: {s1} vs {s2}")


def evaluate_bell(expr: BellExpression, behavior: Behavior) -> float:
    _check_same(expr.scenario, behavior.scenario)
    return float(np.sum(expr.coefficients * behavior.probabilities))


def correlator_expression(weights, marginals_a=None, marginals_b=None) -> np.ndarray:
    """Coefficient table of sum_xy w_xy <A_x B_y> + sum_x m_x <A_x> + sum_y n_y <B_y>."""
    w = np.asarray(weights, dtype=float)
    nx, ny = w.shape
    sign = np.array([1.0, -1.0])
    table = np.einsum("a,b,xy->abxy", sign, sign, w)
    if marginals_a is not None:
        # <A_x> = sum_b P(ab|x0) picks up the y=0 slice
        table[:, :, :, 0] += np.einsum("a,b,x->abx", sign, np.ones(2), np.asarray(marginals_a, float))
    if marginals_b is not None:
        table[:, :, 0, :] += np.einsum("a,b,y->aby", np.ones(2), sign, np.asarray(marginals_b, float))
    return table


def chsh_expression() -> BellExpression:
    """<A0B0> + <A0B1> + <A1B0> - <A1B1>, local bound 2."""
    return gamma_expression(1.0, name="chsh")


def gamma_expression(gamma: float, name: str | None = None) -> BellExpression:
    """gamma<A0B0> + <A0B1> + <A1B0> - <A1B1> with local bound max(1+gamma, 3-gamma).

    Only the positive branch of the absolute value is encoded; negate the
    coefficients for the other one.
    """
    w = np.array([[gamma, 1.0], [1.0, -1.0]])
    return BellExpression(CHSH_SCENARIO, correlator_expression(w), max(1 + gamma, 3 - gamma),
                          name or f"gamma={gamma:g}")


def deterministic_behavior(scenario: Scenario, outputs_a, outputs_b) -> Behavior:
    """Local deterministic behavior with a = outputs_a[x], b = outputs_b[y]."""
    p = np.zeros(scenario.shape)
    for x, y in scenario.settings():
        p[outputs_a[x], outputs_b[y], x, y] = 1.0
    return Behavior(scenario, p)


def uniform_behavior(scenario: Scenario) -> Behavior:
    return Behavior(scenario, np.full(scenario.shape, 1.0 / (scenario.num_outputs_a * scenario.num_outputs_b)))


def pr_box() -> Behavior:
    return behavior_from_correlators(CorrelatorSet(np.zeros(2), np.zeros(2), [[1, 1], [1, -1]]))


def local_bound(expr: BellExpression, max_strategies: int = MAX_DETERMINISTIC_STRATEGIES) -> float:
    """Exact maximum of ``expr`` over local deterministic strategies.

    Alice's strategies are enumerated explicitly; Bob's best response is
    independent per input, which keeps the cost at |a|^|x| * |y| * |b|.
    """
    s = expr.scenario
    count = s.num_outputs_a ** s.num_inputs_a * s.num_outputs_b ** s.num_inputs_b
    if count > max_strategies:
        raise ValueError(f"{count} deterministic strategies exceed the limit of {max_strategies}")
    c = expr.coefficients
    xs = np.arange(s.num_inputs_a)
    best = -np.inf
    for alice in itertools.product(range(s.num_outputs_a), repeat=s.num_inputs_a):
        # contrib[b, y] = sum_x c[alice[x], b, x, y]
        contrib = c[np.asarray(alice), :, xs, :].sum(axis=0)
        best = max(best, float(contrib.max(axis=0).sum()))
    return best


def behavior_from_correlators(corr: CorrelatorSet) -> Behavior:
    sign = np.array([1.0, -1.0])
    p = (1.0
         + np.einsum("a,x->ax", sign, corr.marginals_a)[:, None, :, None]
         + np.einsum("b,y->by", sign, corr.marginals_b)[None, :, None, :]
         + np.einsum("a,b,xy->abxy", sign, sign, corr.correlators)) / 4.0
    return Behavior(corr.scenario, p)


def correlators_from_behavior(behavior: Behavior, tol: float | None = None) -> CorrelatorSet:
    if not behavior.scenario.is_binary:
        raise ValueError("correlators are only defined for binary outcomes")
    if not behavior.is_no_signalling(tol):
        raise InvalidBehavior(f"behavior is signalling (deviation {behavior.signalling():.3g})")
    sign = np.array([1.0, -1.0])
    p = behavior.probabilities
    ab = np.einsum("a,b,abxy->xy", sign, sign, p)
    a = np.einsum("a,abx->x", sign, p[:, :, :, 0])
    b = np.einsum("b,aby->y", sign, p[:, :, 0, :])
    return CorrelatorSet(a, b, ab)
