"""ticodec: a desk-scale learned image codec.

Windowed-attention analysis/synthesis transforms around strided
convolutions, a causal-attention context model over the quantized latent,
a factorized hyper-prior, and a bit-exact range coder, all on a small
numpy-backed autodiff engine.
"""

from .model import LAMBDA_LADDER, PRESETS, ModelConfig, TICModel, load_checkpoint, save_checkpoint
from .tensor import Tensor, no_grad

__all__ = [
    "LAMBDA_LADDER",
    "PRESETS",
    "ModelConfig",
    "TICModel",
    "Tensor",
    "load_checkpoint",
    "no_grad",
    "save_checkpoint",
]

__version__ = "0.1.0"
