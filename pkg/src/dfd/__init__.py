"""Delayed finite-difference black-box policy optimization."""

from .estimators import (Batch, Evaluation, GradEstimate, ParamHistory, compute_lambda,
                         estimate_baseline, grad_dfd, grad_es_antithetic, grad_fd,
                         standardize_rewards)
from .vecmath import dot, norm_squared, sample_noise

__version__ = "0.1.0"
