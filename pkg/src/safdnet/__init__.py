"""Hypotension prediction from perioperative waveforms with a learnable spectral filter."""

from .errors import DataError, NumericalError, SafdError
from .model import ABLATIONS, HyperConfig, SAFDNet, forward
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "ABLATIONS", "DataError", "HyperConfig", "NumericalError", "SAFDNet", "SafdError",
    "TrainConfig", "forward", "load_checkpoint", "save_checkpoint", "train",
]
__version__ = "0.1.0"
