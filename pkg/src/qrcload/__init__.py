"""Quantum reservoir computing for short-term load forecasting with a quantized readout."""

__version__ = "0.1.0"

from .quantize import FixedPointReadout
from .readout import ElasticNetReadout
from .reservoir import QuantumReservoirFeatures, ReservoirConfig

__all__ = ["ElasticNetReadout", "FixedPointReadout", "QuantumReservoirFeatures",
           "ReservoirConfig", "__version__"]
