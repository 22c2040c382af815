"""On-line spot volatility estimation from tick data with a rounding-aware particle filter."""
from .filter import ParticleCloud, init_cloud, step
from .model import NoiseModel, StateMode, SupportBox, TickObservation
from .pipeline import EstimatorConfig, estimate_stream, run
from .seqem import ConstantStep, FixedStep, VolEstimatorState

__version__ = "0.1.0"

__all__ = [
    "ConstantStep", "EstimatorConfig", "FixedStep", "NoiseModel", "ParticleCloud", "StateMode",
    "SupportBox", "TickObservation", "VolEstimatorState", "estimate_stream", "init_cloud", "run", "step",
]
