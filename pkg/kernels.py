# kernels.py
"""SE-ARD covariance, deep-kernel composition and jittered Cholesky factors.

All positive kernel parameters are stored in the log domain so the optimizer
can move them freely.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cholesky

from deepnet import forward
from errors import ConfigurationError, InputShapeError, NumericalFailureError

logger = logging.getLogger(__name__)

DEFAULT_JITTER = 1e-6
JITTER_ESCALATIONS = 5  # jitter_base * 10**k for k = 0..4


@dataclass
class ArdKernelParams:
    log_signal_variance: float
    log_length_scales: np.ndarray

    def __post_init__(self):
        self.log_signal_variance = float(self.log_signal_variance)
        self.log_length_scales = np.asarray(self.log_length_scales, dtype=np.float64).reshape(-1)
        if not np.isfinite(self.log_signal_variance) or not np.all(np.isfinite(self.log_length_scales)):
            raise ConfigurationError("kernel parameters must be finite")

    @property
    def signal_variance(self) -> float:
        return float(np.exp(self.log_signal_variance))

    @property
    def inverse_squared_length_scales(self) -> np.ndarray:
        return np.exp(-2.0 * self.log_length_scales)

    @property
    def dim(self) -> int:
        return int(self.log_length_scales.shape[0])

    @classmethod
    def isotropic(cls, dim: int, signal_variance: float = 1.0, length_scale: float = 1.0) -> "ArdKernelParams":
        return cls(np.log(signal_variance), np.full(dim, np.log(length_scale)))

    def copy(self) -> "ArdKernelParams":
        return ArdKernelParams(self.log_signal_variance, self.log_length_scales.copy())


@dataclass
class DeepKernelSpec:
    layer_sizes: List[int]
    hidden_activation: str = "relu"
    output_activation: str = "linear"
    jitter_base: float = DEFAULT_JITTER

    def validate(self, kernel: ArdKernelParams = None) -> None:
        if len(self.layer_sizes) < 3:
            raise ConfigurationError(
                f"deep kernel needs an input, at least one hidden and an output layer, got {self.layer_sizes}")
        if any(int(size) < 1 for size in self.layer_sizes):
            raise ConfigurationError(f"layer sizes must be >= 1, got {self.layer_sizes}")
        if kernel is not None and kernel.dim != self.layer_sizes[-1]:
            raise ConfigurationError(
                f"net output size {self.layer_sizes[-1]} != ARD length-scale count {kernel.dim}")


class PsdFactor(NamedTuple):
    lower: np.ndarray
    jitter: float


def _check_columns(A: np.ndarray, p: ArdKernelParams, name: str) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A.reshape(1, -1)
    if A.ndim != 2 or A.shape[1] != p.dim:
        raise InputShapeError(f"{name} must have {p.dim} columns, got shape {A.shape}")
    return A


def squared_distances(A: np.ndarray, B: np.ndarray, inv_l2: np.ndarray) -> np.ndarray:
    """Scaled squared distances, accumulated in ascending dimension order."""
    dist = np.zeros((A.shape[0], B.shape[0]))
    for q in range(A.shape[1]):
        diff = A[:, q][:, None] - B[:, q][None, :]
        dist += diff * diff * inv_l2[q]
    return dist


def kernel_matrix(A: np.ndarray, B: np.ndarray, p: ArdKernelParams) -> np.ndarray:
    A = _check_columns(A, p, "A")
    B = _check_columns(B, p, "B")
    return p.signal_variance * np.exp(-0.5 * squared_distances(A, B, p.inverse_squared_length_scales))


def se_ard(a: np.ndarray, b: np.ndarray, p: ArdKernelParams) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise InputShapeError(f"se_ard expects two vectors of equal length, got {a.shape} and {b.shape}")
    return float(kernel_matrix(a, b, p)[0, 0])


def kernel_matrix_grads(A, B, p: ArdKernelParams, K, G):
    """Backward pass of ``K = kernel_matrix(A, B, p)`` for upstream gradient ``G``.

    Returns (dA, dB, d_log_signal_variance, d_log_length_scales).
    """
    inv_l2 = p.inverse_squared_length_scales
    W = G * K
    row = W.sum(axis=1)
    col = W.sum(axis=0)
    WB = W @ B
    WtA = W.T @ A
    dA = -(A * row[:, None] - WB) * inv_l2
    dB = (WtA - B * col[:, None]) * inv_l2
    d_log_sf2 = float(W.sum())
    d_log_ls = (row @ (A * A) - 2.0 * np.sum(A * WB, axis=0) + col @ (B * B)) * inv_l2
    return dA, dB, d_log_sf2, d_log_ls


def stable_cholesky(matrix: np.ndarray, jitter_base: float, name: str = "K",
                    scale: float = None, try_clean: bool = False) -> PsdFactor:
    """Lower Cholesky factor of ``matrix + eps * scale * I`` with escalating ``eps``.

    ``scale`` defaults to the mean of the diagonal. With ``try_clean`` the
    unjittered matrix is attempted first.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    n = matrix.shape[0]
    if scale is None:
        scale = float(np.mean(np.diag(matrix)))
    candidates = [jitter_base * 10.0 ** k for k in range(JITTER_ESCALATIONS)]
    if try_clean:
        candidates.insert(0, 0.0)
    for eps in candidates:
        try:
            lower = cholesky(matrix + eps * scale * np.eye(n), lower=True, check_finite=True)
        except (LinAlgError, ValueError):
            continue
        if eps > jitter_base:
            logger.warning(f"{name}: jitter escalated to {eps:g} (relative)")
        return PsdFactor(lower, eps)
    logger.error(f"{name}: Cholesky failed up to relative jitter {candidates[-1]:g}")
    raise NumericalFailureError(f"could not factorize {name} ({n}x{n}) even with jitter {candidates[-1]:g}")


def psd_factor(A: np.ndarray, p: ArdKernelParams, jitter_base: float = DEFAULT_JITTER,
               name: str = "K") -> PsdFactor:
    A = _check_columns(A, p, "A")
    if A.shape[0] < 1:
        raise InputShapeError("psd_factor needs at least one row")
    K = kernel_matrix(A, A, p)
    # mean(diag) of an SE kernel is exactly sigma_f^2
    return stable_cholesky(K, jitter_base, name=name, scale=p.signal_variance)


def deep_kernel(x_i: np.ndarray, x_j: np.ndarray, net, p: ArdKernelParams) -> float:
    if net.output_size != p.dim:
        raise ConfigurationError(f"net output size {net.output_size} != ARD length-scale count {p.dim}")
    if net.input_size != np.size(x_i) or net.input_size != np.size(x_j):
        raise ConfigurationError(f"net expects inputs of size {net.input_size}")
    features = forward(net, np.vstack([np.ravel(x_i), np.ravel(x_j)]))
    return se_ard(features[0], features[1], p)
