"""Two-stream temporal fusion head over precomputed per-frame features.

numpy-only implementation with hand-written backward passes; see the README
for the CLI and file formats.
"""

from .errors import ConfigError, ContextError, FormatError, ShapeError, StfnError
from .model import ModelConfig, StfnModel
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = ["ConfigError", "ContextError", "FormatError", "ModelConfig", "ShapeError",
           "StfnError", "StfnModel", "TrainConfig", "evaluate", "train", "__version__"]
