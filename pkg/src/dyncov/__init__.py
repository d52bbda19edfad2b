"""Dynamic covariance forecasting.

BEKK(1,1) baselines fit by maximum likelihood, a BEKK model with drifting
parameters tracked by a regularized auxiliary particle filter, and a rolling
evaluation / rank-test harness.
"""

from . import data, evaluation, mle, models, mvstat, rapf
from .errors import DyncovError

__all__ = ["data", "evaluation", "mle", "models", "mvstat", "rapf", "DyncovError"]
__version__ = "0.1.0"
