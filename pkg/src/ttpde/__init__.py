"""Tensor-train regression solver for high-dimensional parabolic PDEs via
their backward-SDE reformulation."""

__version__ = "0.1.0"

from .basis import BasisSet, build_basis
from .tensor_train import TensorTrain, contract, frobenius_norm, orthogonalize, tt_svd
from .tt_function import TTFunction

__all__ = [
    "BasisSet",
    "build_basis",
    "TensorTrain",
    "TTFunction",
    "contract",
    "frobenius_norm",
    "orthogonalize",
    "tt_svd",
    "__version__",
]
