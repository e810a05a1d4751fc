"""FIF-UNet segmentation network with a desk-scale training and verification harness."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, FifsegError, NumericError  # noqa: E402
from .model import FIFUNet, ForwardOutputs, ModelConfig, param_count  # noqa: E402

__all__ = [
    "ConfigError",
    "DataError",
    "FifsegError",
    "FIFUNet",
    "ForwardOutputs",
    "ModelConfig",
    "NumericError",
    "param_count",
]
