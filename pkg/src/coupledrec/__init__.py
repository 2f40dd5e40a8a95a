"""Coupled-regularization inverse problems with mixed data discrepancies.

A small library and CLI for reconstructing multi-channel images from several
measurement channels at once, where each channel has its own forward operator
and its own noise model (squared 2-norm or Kullback-Leibler), and the channels
are tied together by a coupled regularizer (second-order TGV or wavelet
sparsity). Includes an experiment harness for measuring empirical convergence
rates under parameter-choice rules.
"""

__version__ = "0.1.0"

from .coupling import project_dual_ball, project_group_l2ball
from .diffops import LinearOp, adjoint_check, div, grad, op_norm_estimate, sym_div, sym_grad
from .discrepancy import (
    add_gaussian_noise,
    add_poisson_noise,
    eval_kl,
    eval_l2sq,
    prox_kl_dual,
    prox_l2_dual,
)
from .forward import convolution_op, identity_op, masked_fourier_op, radon_op
from .grids import Grid, MultiImage, SymTensorField, VectorField, inner_product
from .problem import ChannelSpec, ProblemSpec, Quadratic, TGV2, WaveletL21
from .rates import RateRule, choose_lambdas, fit_loglog_slope, phantom, run_rate_experiment
from .solver import SolveConfig, SolveResult, solve

__all__ = [
    "Grid",
    "MultiImage",
    "VectorField",
    "SymTensorField",
    "inner_product",
    "LinearOp",
    "grad",
    "div",
    "sym_grad",
    "sym_div",
    "adjoint_check",
    "op_norm_estimate",
    "identity_op",
    "convolution_op",
    "masked_fourier_op",
    "radon_op",
    "eval_l2sq",
    "eval_kl",
    "prox_l2_dual",
    "prox_kl_dual",
    "add_gaussian_noise",
    "add_poisson_noise",
    "project_dual_ball",
    "project_group_l2ball",
    "ChannelSpec",
    "ProblemSpec",
    "TGV2",
    "WaveletL21",
    "Quadratic",
    "SolveConfig",
    "SolveResult",
    "solve",
    "RateRule",
    "choose_lambdas",
    "phantom",
    "run_rate_experiment",
    "fit_loglog_slope",
]
