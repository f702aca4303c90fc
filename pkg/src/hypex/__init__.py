"""Error exponents and detection schemes for a sensor observed by two detectors,
where the first detector may pass a message to the second."""

__version__ = "0.1.0"

from .errors import HypexError
from .probkit import Alphabet, Channel, EmpiricalType, HypothesisModel, JointPmf
from .exponents import ExponentPair, RegionBoundary

__all__ = [
    "__version__",
    "HypexError",
    "Alphabet",
    "Channel",
    "EmpiricalType",
    "HypothesisModel",
    "JointPmf",
    "ExponentPair",
    "RegionBoundary",
]
