from .model import AcousticNet, ArchitectureConfig, ConfigurationError, ConvLayerSpec, RnnLayerSpec, StateError
from .optim import LrSchedule, OptimizerState, TrainingError, adam_step

__all__ = [
    "AcousticNet", "ArchitectureConfig", "ConfigurationError", "ConvLayerSpec", "RnnLayerSpec", "StateError",
    "LrSchedule", "OptimizerState", "TrainingError", "adam_step",
]
