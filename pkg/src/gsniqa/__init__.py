"""Full-reference image quality assessment with a gradient siamese network on numpy."""

from .errors import ConfigConflictError, ContractError, DimensionError, FormatError, GsnError, InputError, NumericError
from .losses import LossConfig, list_loss, pair_loss, total_loss
from .metrics import MetricReport, krcc, plcc, psnr, report, srcc, ssim
from .model import GsnConfig, GsnModel, load_checkpoint, predict_image, save_checkpoint
from .tensor import Tensor, gradcheck

__all__ = [
    "ConfigConflictError", "ContractError", "DimensionError", "FormatError", "GsnError", "InputError",
    "NumericError", "LossConfig", "list_loss", "pair_loss", "total_loss", "MetricReport", "krcc", "plcc",
    "psnr", "report", "srcc", "ssim", "GsnConfig", "GsnModel", "load_checkpoint", "predict_image",
    "save_checkpoint", "Tensor", "gradcheck",
]
