import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from randcert.bell import Scenario, chsh_expression, evaluate_bell, gamma_expression
from randcert.models import (NO_CLICK, EberhardConfig, NoViolationError, eberhard_behavior,
                             gamma_optimal_angles, gamma_optimal_behavior, gamma_theta00, gamma_vq,
                             max_chsh_behavior, optimize_eberhard, random_quantum_behavior)
from randcert.pipeline import check_quantum_membership
from randcert.programs import bell_maximum

angle = st.floats(-math.pi, math.pi)
configs = st.builds(EberhardConfig, st.floats(0, math.pi / 2), angle, angle, st.floats(0, 1))


@given(configs)
def test_single_detector_equals_binning(cfg):
    # one detector on the +1 port sees exactly what binning no-clicks into outcome 1 sees
    b = eberhard_behavior(cfg).probabilities
    b_prime = eberhard_behavior(cfg.with_binning("single-detector")).probabilities
    assert np.allclose(b, b_prime, atol=1e-12)


@given(configs, st.sampled_from(["three-outcome", "bin-to-outcome-1"]))
def test_behaviors_are_valid(cfg, binning):
    P = eberhard_behavior(cfg.with_binning(binning))
    assert np.allclose(P.probabilities.sum(axis=(0, 1)), 1.0)
    assert P.is_no_signalling(1e-12)


@given(configs)
def test_binning_merges_three_outcomes(cfg):
    P3 = eberhard_behavior(cfg.with_binning("three-outcome")).probabilities
    P2 = eberhard_behavior(cfg).probabilities
    merged = P3[:2, :2].copy()
    merged[1, :] += P3[2, :2]
    merged[:, 1] += P3[:2, 2]
    merged[1, 1] += P3[2, 2]
    assert np.allclose(merged, P2)


def test_perfect_detectors_have_no_missing_clicks():
    P = eberhard_behavior(EberhardConfig(0.3, 0.2, 0.9, 1.0, "three-outcome")).probabilities
    assert np.allclose(P[NO_CLICK], 0) and np.allclose(P[:, NO_CLICK], 0)


def test_no_detection_is_deterministic():
    P = eberhard_behavior(EberhardConfig(0.3, 0.2, 0.9, 0.0))
    assert np.allclose(P.probabilities[1, 1], 1.0)
    assert evaluate_bell(chsh_expression(), P) == pytest.approx(2.0)


@given(configs, st.floats(-1e-4, 1e-4))
def test_continuous_in_efficiency(cfg, d):
    eta2 = min(1.0, max(0.0, cfg.eta + d))
    P1 = eberhard_behavior(cfg).probabilities
    P2 = eberhard_behavior(EberhardConfig(cfg.theta, cfg.alpha1, cfg.alpha2, eta2)).probabilities
    assert np.abs(P1 - P2).max() <= 4 * abs(eta2 - cfg.eta) + 1e-12


def test_max_chsh_behavior():
    assert evaluate_bell(chsh_expression(), max_chsh_behavior()) == pytest.approx(2 * math.sqrt(2), abs=1e-12)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        EberhardConfig(2.0, 0, 0)
    with pytest.raises(ValueError):
        EberhardConfig(0.3, 0, 0, eta=1.2)
    with pytest.raises(ValueError):
        EberhardConfig(0.3, 0, 0, binning="drop")
    cfg = EberhardConfig(0.3, 0.1, -0.4, 0.9, "three-outcome")
    assert EberhardConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.scenario == Scenario(2, 2, 3, 3)


def test_closed_forms_at_chsh():
    assert gamma_theta00(1.0) == pytest.approx(math.pi / 4, abs=1e-12)
    assert gamma_vq(1.0) == pytest.approx(2 * math.sqrt(2), abs=1e-12)
    with pytest.raises(ValueError):
        gamma_theta00(0.9)


@pytest.mark.parametrize("gamma", [1.0, 1.2, 1.5, 2.0, 2.9])
def test_closed_form_attained(gamma):
    # the stated angles and state reach V_Q
    P = gamma_optimal_behavior(gamma)
    assert evaluate_bell(gamma_expression(gamma), P) == pytest.approx(gamma_vq(gamma), abs=1e-12)
    ang = gamma_optimal_angles(gamma)
    assert ang["a1"] - ang["b1"] == pytest.approx(math.pi - ang["alpha"])


@pytest.mark.parametrize("gamma", [1.0, 1.3, 2.0])
def test_closed_form_against_angle_search(gamma):
    # independent oracle: maximize over coplanar directions with a maximally entangled state
    def neg(t):
        a0, a1, b0, b1 = t
        return -(gamma * math.cos(a0 - b0) + math.cos(a0 - b1) + math.cos(a1 - b0) - math.cos(a1 - b1))
    best = min((minimize(neg, x0, method="BFGS") for x0 in np.random.default_rng(0).uniform(-3, 3, (20, 4))),
               key=lambda r: r.fun)
    assert -best.fun == pytest.approx(gamma_vq(gamma), abs=1e-7)


@pytest.mark.parametrize("gamma", [1.01, 1.05, 1.1])
def test_closed_form_against_relaxation(gamma):
    assert bell_maximum(gamma_expression(gamma), "npa-2") == pytest.approx(gamma_vq(gamma), abs=1e-4)


def test_optimizer_finds_violation_above_threshold():
    fit = optimize_eberhard(0.8)
    assert fit.violates and fit.value > 2.08
    # the binned optimum puts more weight on |11>
    assert math.pi / 4 < fit.config.theta < math.pi / 2


def test_no_violation_below_threshold():
    fit = optimize_eberhard(0.6)
    assert not fit.violates and fit.value <= 2 + 1e-9
    with pytest.raises(NoViolationError):
        optimize_eberhard(0.6, require_violation=True)


def test_optimizer_is_reproducible():
    a, b = optimize_eberhard(0.9, seed=3), optimize_eberhard(0.9, seed=3)
    assert a.config == b.config


@pytest.mark.parametrize("eta", [0.7, 0.85, 1.0])
@pytest.mark.parametrize("binning", ["bin-to-outcome-1", "three-outcome"])
@pytest.mark.parametrize("level", ["local-1", "npa-2"])
def test_model_behaviors_are_in_relaxations(eta, binning, level):
    cfg = EberhardConfig(1.1, -0.26, -1.06, eta, binning)
    rep = check_quantum_membership(eberhard_behavior(cfg), level)
    assert rep.feasible, rep


@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3]))
@settings(max_examples=20)
def test_random_behaviors_are_no_signalling(seed, k):
    P = random_quantum_behavior(Scenario(2, 2, k, k), np.random.default_rng(seed))
    assert P.is_no_signalling(1e-10)
    assert np.allclose(P.probabilities.sum(axis=(0, 1)), 1)
