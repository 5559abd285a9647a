from .functional import ShapeError, sigmoid
from .gradcheck import GradCheckError, GradCheckResult, grad_check
from .layers import (
    Activation, BatchNorm2d, Conv2d, Dense, GlobalAvgPool, Module, Parameter,
    ReLU, SEBlock, Sequential, Sigmoid,
)
from .optim import Adam, AdamState, NonFiniteGradient, adam_update

__all__ = [
    "Activation", "Adam", "AdamState", "BatchNorm2d", "Conv2d", "Dense",
    "GlobalAvgPool", "GradCheckError", "GradCheckResult", "Module",
    "NonFiniteGradient", "Parameter", "ReLU", "SEBlock", "Sequential",
    "ShapeError", "Sigmoid", "adam_update", "grad_check", "sigmoid",
]
