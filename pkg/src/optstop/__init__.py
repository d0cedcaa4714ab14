"""Bayes factor hypothesis testing under optional stopping.

The package verifies, mechanically, the three senses in which Bayes
factor tests handle optional stopping: the stopped evidence is a
function of the observed data alone (tau-independence), among stopped
samples with Bayes factor b the alternative is b times as likely as the
null (calibration, strengthened to hold at every nuisance value for
group-invariant pairs with right Haar priors), and the rule 'reject once
beta >= 1/alpha' keeps its Type-I error below alpha under any admissible
stopping rule.  Finite sample spaces are checked by exhaustive
enumeration (`optstop.exact`), group-invariant models by Monte Carlo
(`optstop.montecarlo`).
"""

from .core import (
    NEVER,
    BfTrajectory,
    PriorOdds,
    SignificanceLevel,
    StopOutcome,
    conditional_bf,
    posterior_odds,
    stop,
)
from .errors import OptstopError, QuadratureError, ResourceLimitError, SingularInputError
from .groups import LOCATION_SCALE, SCALE, LocationScaleGroup, ScaleGroup
from .models import (
    CauchyEffect,
    InvariantModelPair,
    MaximalInvariantValue,
    PointMass,
    ScaleBfCurves,
    trajectory,
)
from .stopping import (
    BfThreshold,
    FixedN,
    InvariantStatistic,
    InvarianceReport,
    RawStatistic,
    StoppingRule,
    check_invariance,
    rule_from_params,
    sum_squares_rule,
)

from . import exact, montecarlo, quadrature  # noqa: E402  (submodule access)

__version__ = "0.1.0"

__all__ = [
    "NEVER",
    "BfTrajectory",
    "PriorOdds",
    "SignificanceLevel",
    "StopOutcome",
    "conditional_bf",
    "posterior_odds",
    "stop",
    "OptstopError",
    "QuadratureError",
    "ResourceLimitError",
    "SingularInputError",
    "SCALE",
    "LOCATION_SCALE",
    "ScaleGroup",
    "LocationScaleGroup",
    "CauchyEffect",
    "PointMass",
    "InvariantModelPair",
    "MaximalInvariantValue",
    "ScaleBfCurves",
    "trajectory",
    "StoppingRule",
    "FixedN",
    "BfThreshold",
    "InvariantStatistic",
    "RawStatistic",
    "InvarianceReport",
    "check_invariance",
    "rule_from_params",
    "sum_squares_rule",
    "__version__",
]
