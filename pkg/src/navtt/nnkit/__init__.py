"""Minimal neural toolkit: dense/conv/GRU layers, BCE loss, Adam, gradient checking.

Everything runs on plain numpy arrays (row-major, float64 by default;
float32 opt-in for training speed). Layers expose analytic gradients that
are validated against central finite differences in the test suite.
"""

from .layers import (
    Dense,
    Conv2D,
    MaxPool2D,
    Flatten,
    FourierFeatures,
    GRULayer,
    gru_cell_forward,
    ShapeError,
)
from .network import Network
from .losses import sigmoid, softmax, log_softmax, bce_loss, bce_from_probability
from .optim import AdamState, adam_step
from .gradcheck import grad_check, finite_difference_grads
from .serialize import save_params, load_params

__all__ = [
    "Dense",
    "Conv2D",
    "MaxPool2D",
    "Flatten",
    "FourierFeatures",
    "GRULayer",
    "gru_cell_forward",
    "ShapeError",
    "Network",
    "sigmoid",
    "softmax",
    "log_softmax",
    "bce_loss",
    "bce_from_probability",
    "AdamState",
    "adam_step",
    "grad_check",
    "finite_difference_grads",
    "save_params",
    "load_params",
]
