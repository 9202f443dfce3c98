"""Approximate Thompson sampling for Markov decision processes with a
parametric dynamics model."""
from .core import (BoundViolationError, EstimationError, History, ImpossibleTransitionError,
                   InsufficientDataError, NumericError, Record, append_record, log_likelihood)
from .engine import (EngineConfig, ParameterPosterior, ThompsonSampler, draw_perturbed_parameters,
                     truncation_horizon, ts_epoch)
from .estimation import FitResult, MLEstimator, fit_mle, observed_information
from .policy_eval import (FinitePolicyClass, ParametricPolicyClass, SearchConfig, ValueEstimate, estimate_value,
                          optimize_policy)
from .rng import stream

__version__ = "0.1.0"
