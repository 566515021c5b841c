"""Large-kernel modulation network for lightweight image super-resolution, on numpy."""

from .errors import (
    CompatibilityError,
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    IntegrityError,
    LKMNError,
    TrainingDiverged,
)
from .model import (
    PRESETS,
    Model,
    ModelConfig,
    build,
    count_flops,
    count_params,
    forward,
    model_from_weights,
    preset,
    self_ensemble_forward,
    tile_forward,
)
from .tensor import Tensor, backward, no_grad
from .train import TrainConfig, train_loop
from .weights import WeightStore, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "CompatibilityError", "ConfigError", "ContractError", "DimensionError", "FormatError", "IntegrityError",
    "LKMNError", "TrainingDiverged", "PRESETS", "Model", "ModelConfig", "build", "count_flops", "count_params",
    "forward", "model_from_weights", "preset", "self_ensemble_forward", "tile_forward", "Tensor", "backward",
    "no_grad", "TrainConfig", "train_loop", "WeightStore", "load_weights", "save_weights",
]
