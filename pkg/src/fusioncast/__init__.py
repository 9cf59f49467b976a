"""Precipitation nowcasting with a 3D-UNet core and a two-stream
precipitation/wind-speed fusion network, plus the data pipeline, training
protocol, and verification metrics around them."""

from .core_unet import CoreUNet, CoreUNetConfig, count_parameters, init_parameters
from .dataset import DatasetManifest, FilterRule, SampleWindow, WindowSpec
from .grid_io import CropSpec, VariableSeries, read_series, write_series
from .synthetic import SyntheticConfig, generate
from .training import PlateauPolicy, TrainConfig, TrainResult
from .wf_unet import WFUNet, WFUNetConfig, count_wf_parameters

__all__ = [
    "CoreUNet",
    "CoreUNetConfig",
    "CropSpec",
    "DatasetManifest",
    "FilterRule",
    "PlateauPolicy",
    "SampleWindow",
    "SyntheticConfig",
    "TrainConfig",
    "TrainResult",
    "VariableSeries",
    "WFUNet",
    "WFUNetConfig",
    "WindowSpec",
    "count_parameters",
    "count_wf_parameters",
    "generate",
    "init_parameters",
    "read_series",
    "write_series",
]
