"""Mass-flow estimators: static polynomial regression and the causal CNN."""

from .cnn import (
    Block,
    CnnModel,
    ConvLayer,
    cnn_forward,
    cnn_gradients,
    conv1d_causal,
    leaky_relu,
    leaky_relu_grad,
    mse_loss,
)
from .estimators import CausalCNNRegressor, DTWKMeans, PolynomialRegressor
from .pr import PRModel, design_matrix, fit_pr, predict_pr
from .train import TrainConfig, TrainResult, sequence_mse, train_cnn, train_cnn_detailed

__all__ = [
    "Block", "CnnModel", "ConvLayer", "cnn_forward", "cnn_gradients", "conv1d_causal", "leaky_relu",
    "leaky_relu_grad", "mse_loss", "CausalCNNRegressor", "DTWKMeans", "PolynomialRegressor", "PRModel",
    "design_matrix", "fit_pr", "predict_pr", "TrainConfig", "TrainResult", "sequence_mse", "train_cnn",
    "train_cnn_detailed",
]
