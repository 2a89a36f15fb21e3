"""Lightweight RGB/infrared feature fusion on a small NumPy autodiff core."""

from .asff import AsffParams, asff_forward, asff_stages
from .config import ModuleConfig
from .cost import CostReport, compare_fusion_baselines, count_flops, count_params
from .errors import ConfigError, DataError, FormatError, FuseError, ShapeError, TrainingError, VersionError
from .fatm import FatmParams, fatm_forward
from .serialize import WeightArchive, read_archive, read_tensor, write_archive, write_tensor
from .tensor import ConvSpec, Tensor
from .toy import ToyTask, train_toy
from .weights import init_weights

__version__ = "0.1.0"

__all__ = [
    "AsffParams", "ConfigError", "ConvSpec", "CostReport", "DataError", "FatmParams",
    "FormatError", "FuseError", "ModuleConfig", "ShapeError", "Tensor", "ToyTask",
    "TrainingError", "VersionError", "WeightArchive", "asff_forward", "asff_stages",
    "compare_fusion_baselines", "count_flops", "count_params", "fatm_forward",
    "init_weights", "read_archive", "read_tensor", "train_toy", "write_archive", "write_tensor",
]
