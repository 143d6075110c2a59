"""Minimal float64 neural-network engine with manual backpropagation."""
from .container import load, loads, dumps, save
from .gradcheck import GradcheckReport, gradcheck
from .layers import (
    AvgPool,
    BatchNorm,
    Conv2d,
    Dense,
    Dropout,
    ElementwiseMultiply,
    Embedding,
    Flatten,
    Layer,
    MaxPool,
    Parameter,
    ReLU,
    Sequential,
    softmax,
)
from .losses import cross_entropy, mse
from .optim import Adam

__all__ = [
    "Adam", "AvgPool", "BatchNorm", "Conv2d", "Dense", "Dropout", "ElementwiseMultiply", "Embedding",
    "Flatten", "GradcheckReport", "Layer", "MaxPool", "Parameter", "ReLU", "Sequential", "cross_entropy",
    "dumps", "gradcheck", "load", "loads", "mse", "save", "softmax",
]
