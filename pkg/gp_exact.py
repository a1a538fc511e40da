# gp_exact.py
"""Exact GP regression, used as the reference for the sparse model."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from errors import ConfigurationError, InputError, InputShapeError
from kernels import DEFAULT_JITTER, ArdKernelParams, kernel_matrix, stable_cholesky
from svgp import GaussianMoments

logger = logging.getLogger(__name__)

MAX_EXACT_POINTS = 4096


@dataclass
class ExactGpModel:
    inputs: np.ndarray
    targets: np.ndarray
    kernel: ArdKernelParams
    log_noise_variance: float

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        n = self.inputs.shape[0]
        if n < 1:
            raise InputError("exact GP needs at least one training point")
        if n > MAX_EXACT_POINTS:
            raise InputError(f"exact GP refuses n = {n} > {MAX_EXACT_POINTS} (cubic cost); use the sparse model")
        if self.targets.shape[0] != n:
            raise InputShapeError(f"{n} inputs but {self.targets.shape[0]} targets")
        if self.inputs.shape[1] != self.kernel.dim:
            raise InputShapeError(f"inputs have {self.inputs.shape[1]} columns, kernel expects {self.kernel.dim}")
        if not np.all(np.isfinite(self.targets)):
            raise InputError("targets must be finite")
        if not np.isfinite(self.log_noise_variance):
            raise ConfigurationError("noise variance must be positive and finite")

    @property
    def noise_variance(self) -> float:
        return float(np.exp(self.log_noise_variance))


def _factor(model: ExactGpModel) -> np.ndarray:
    n = model.inputs.shape[0]
    K = kernel_matrix(model.inputs, model.inputs, model.kernel) + model.noise_variance * np.eye(n)
    return stable_cholesky(K, DEFAULT_JITTER, name="K+noise", try_clean=True).lower


def log_marginal_likelihood(model: ExactGpModel) -> float:
    L = _factor(model)
    y = model.targets
    alpha = cho_solve((L, True), y)
    data_fit = -0.5 * float(y @ alpha)
    complexity = -float(np.sum(np.log(np.diag(L))))
    return data_fit + complexity - 0.5 * y.shape[0] * np.log(2.0 * np.pi)


def predict(model: ExactGpModel, queries: np.ndarray) -> GaussianMoments:
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[1] != model.kernel.dim:
        raise InputShapeError(f"queries must have {model.kernel.dim} columns, got {queries.shape[1]}")
    L = _factor(model)
    Kxq = kernel_matrix(model.inputs, queries, model.kernel)
    mean = Kxq.T @ cho_solve((L, True), model.targets)
    V = solve_triangular(L, Kxq, lower=True)
    cov = kernel_matrix(queries, queries, model.kernel) - V.T @ V
    cov = 0.5 * (cov + cov.T)
    return GaussianMoments(mean, cov, full=True)
