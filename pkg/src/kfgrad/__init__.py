"""Exact reverse-mode gradients of Kalman filter losses.

The backward sweep in :mod:`kfgrad.backprop` gives the gradient of a
scalar loss of the filter outputs with respect to ``P0``, ``Q``, ``R``,
the initial state and the measurements at the cost of one extra pass.
Forward sensitivities (:mod:`kfgrad.sensitivity`) and central finite
differences (:mod:`kfgrad.fdcheck`) compute the same quantities
independently.
"""

from .backprop import GradientSet, backward, grad_wrt, sqrt_factor_grad
from .fdcheck import FdConfig, fd_full, fd_gradient
from .filter import FilterModel, FilterTape, StepRecord, predict, run_filter, update
from .linalg import NotPositiveDefinite, SpdFactor, count_ops
from .loss import LossLocalGrads, MseLoss, NllLoss, ZeroLoss, mse_step, nll_step, total_loss
from .optim import FitConfig, FitReport, fit
from .sensitivity import ParamSelector, forward_sensitivity, full_gradient_forward
from .sim import SimConfig, Trajectory, model_from_sim, simulate

__version__ = "0.1.0"

__all__ = [
    "FilterModel", "FilterTape", "StepRecord", "predict", "update", "run_filter",
    "LossLocalGrads", "NllLoss", "MseLoss", "ZeroLoss", "nll_step", "mse_step", "total_loss",
    "GradientSet", "backward", "grad_wrt", "sqrt_factor_grad",
    "ParamSelector", "forward_sensitivity", "full_gradient_forward",
    "FdConfig", "fd_gradient", "fd_full",
    "SimConfig", "Trajectory", "simulate", "model_from_sim",
    "FitConfig", "FitReport", "fit",
    "NotPositiveDefinite", "SpdFactor", "count_ops",
]
