"""Device-independent randomness bounds from full Bell-test statistics."""
from .bell import (BellExpression, Behavior, CorrelatorSet, InputDistribution, Scenario,
                   CHSH_SCENARIO, chsh_expression, evaluate_bell, gamma_expression, local_bound)
from .programs import (GuessingResult, guessing_fixed_settings, guessing_from_violation,
                       guessing_no_signalling, guessing_weighted, min_entropy,
                       single_strategy_curve)

__version__ = "0.1.0"

__all__ = ["BellExpression", "Behavior", "CorrelatorSet", "InputDistribution", "Scenario",
           "CHSH_SCENARIO", "chsh_expression", "evaluate_bell", "gamma_expression", "local_bound",
           "GuessingResult", "guessing_fixed_settings", "guessing_from_violation",
           "guessing_no_signalling", "guessing_weighted", "min_entropy", "single_strategy_curve"]
