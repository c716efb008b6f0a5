"""Flow-based intrusion detection: metering, Weibull baseline, image CNN, SDS policy loop."""

__version__ = "0.1.0"

from .errors import FlowIdsError
from .features import FEATURE_NAMES, FeatureVector, Label
from .kernels import BACKEND

__all__ = ["BACKEND", "FEATURE_NAMES", "FeatureVector", "FlowIdsError", "Label", "__version__"]
