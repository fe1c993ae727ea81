"""Cross-attention siamese networks for sentence-pair similarity, on a small numpy autodiff core."""

from .model import VARIANTS, CATsNet, ModelConfig, SiameseOutput, predict
from .tensor import Tensor, gradcheck, no_grad

__all__ = ["CATsNet", "ModelConfig", "SiameseOutput", "Tensor", "VARIANTS", "gradcheck", "no_grad", "predict"]
__version__ = "0.1.0"
