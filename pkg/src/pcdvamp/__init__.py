"""Learned VAMP recovery with a parameter convergence detector for sparse scenes."""

__version__ = "0.1.0"

from .errors import (ConfigError, DegenerateSupportError, InvalidDimensionsError,  # noqa: E402
                     InvalidParameterError, InvalidShapeError, NumericalFailureError,
                     ParamsFormatError, PcdVampError, TheoryViolationError)
from .pcd import PcdConfig, PcdResult, run_pcd, threshold_for_pfa  # noqa: E402
from .signal_model import (ObservationModel, Scene, SceneParams, generate_scene,  # noqa: E402
                           make_model, measure)
from .unfolding import TrainConfig, TrainedParams, load_params, save_params, train_layerwise  # noqa: E402
from .vamp import VampConfig, VampLayerParams, run_vamp  # noqa: E402

__all__ = [
    "ConfigError", "DegenerateSupportError", "InvalidDimensionsError", "InvalidParameterError",
    "InvalidShapeError", "NumericalFailureError", "ParamsFormatError", "PcdVampError",
    "TheoryViolationError", "PcdConfig", "PcdResult", "run_pcd", "threshold_for_pfa",
    "ObservationModel", "Scene", "SceneParams", "generate_scene", "make_model", "measure",
    "TrainConfig", "TrainedParams", "load_params", "save_params", "train_layerwise",
    "VampConfig", "VampLayerParams", "run_vamp",
]
