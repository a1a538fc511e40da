# svgp.py
"""Sparse variational GP heads composed with a shared deep kernel.

Every target dimension has its own head (inducing inputs Z in feature space,
variational mean m, Cholesky factor of S, noise variance); the net and the ARD
kernel parameters are shared by all heads.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from deepnet import FeedForwardNet, forward
from errors import ConfigurationError, InputError, InputShapeError
from kernels import (DEFAULT_JITTER, ArdKernelParams, kernel_matrix, kernel_matrix_grads, psd_factor,
                     stable_cholesky)

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
VARIANCE_FLOOR = -1e-10


@dataclass
class VariationalState:
    """q(f_Z) = N(m, S) with S = L L^T.

    ``chol_s_raw`` is the lower factor L with its diagonal stored as log values.
    """
    inducing_inputs: np.ndarray
    mean: np.ndarray
    chol_s_raw: np.ndarray

    def __post_init__(self):
        self.inducing_inputs = np.atleast_2d(np.asarray(self.inducing_inputs, dtype=np.float64))
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.chol_s_raw = np.tril(np.asarray(self.chol_s_raw, dtype=np.float64))
        size = self.mean.shape[0]
        if size < 1:
            raise ConfigurationError("a variational state needs at least one inducing point")
        if self.inducing_inputs.shape[0] != size or self.chol_s_raw.shape != (size, size):
            raise ConfigurationError(
                f"inconsistent variational shapes: Z {self.inducing_inputs.shape}, m {self.mean.shape}, "
                f"chol_S {self.chol_s_raw.shape}")
        if not np.all(np.isfinite(self.inducing_inputs)):
            raise ConfigurationError("inducing inputs must be finite")

    @classmethod
    def from_cholesky(cls, inducing_inputs, mean, chol_s) -> "VariationalState":
        chol_s = np.tril(np.asarray(chol_s, dtype=np.float64))
        diag = np.diag(chol_s)
        if np.any(diag <= 0.0):
            raise ConfigurationError("chol_S needs a strictly positive diagonal")
        raw = chol_s.copy()
        np.fill_diagonal(raw, np.log(diag))
        return cls(inducing_inputs, mean, raw)

    @property
    def size(self) -> int:
        return int(self.mean.shape[0])

    @property
    def chol_s(self) -> np.ndarray:
        lower = np.tril(self.chol_s_raw, -1)
        return lower + np.diag(np.exp(np.diag(self.chol_s_raw)))

    @property
    def covariance(self) -> np.ndarray:
        chol = self.chol_s
        return chol @ chol.T


@dataclass
class SvgpHead:
    state: VariationalState
    log_noise_variance: float

    def __post_init__(self):
        self.log_noise_variance = float(self.log_noise_variance)
        if not np.isfinite(self.log_noise_variance):
            raise ConfigurationError("noise variance must be positive and finite")

    @property
    def noise_variance(self) -> float:
        return float(np.exp(self.log_noise_variance))


@dataclass
class GaussianMoments:
    mean: np.ndarray
    variance: np.ndarray
    full: bool = False

    @property
    def marginal_variance(self) -> np.ndarray:
        return np.diag(self.variance) if self.full else self.variance


@dataclass
class SvdklModel:
    net: Optional[FeedForwardNet]
    kernel: ArdKernelParams
    heads: List[SvgpHead]
    input_mean: np.ndarray
    input_scale: np.ndarray
    output_centers: np.ndarray
    f0_source: Any = None
    f0_target: Any = None
    jitter_base: float = DEFAULT_JITTER
    alpha: float = 0.41
    config: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.input_mean = np.asarray(self.input_mean, dtype=np.float64).reshape(-1)
        self.input_scale = np.asarray(self.input_scale, dtype=np.float64).reshape(-1)
        self.output_centers = np.asarray(self.output_centers, dtype=np.float64).reshape(-1)
        self.validate()

    @property
    def input_dim(self) -> int:
        return self.net.input_size if self.net is not None else self.kernel.dim

    @property
    def feature_dim(self) -> int:
        return self.kernel.dim

    @property
    def output_dim(self) -> int:
        return len(self.heads)

    def validate(self) -> None:
        if not self.heads:
            raise ConfigurationError("model has no heads")
        if self.net is not None and self.net.output_size != self.kernel.dim:
            raise ConfigurationError(
                f"net output size {self.net.output_size} != ARD length-scale count {self.kernel.dim}")
        if self.input_mean.shape != (self.input_dim,) or self.input_scale.shape != (self.input_dim,):
            raise ConfigurationError(f"input normalizer must have {self.input_dim} entries")
        if self.output_centers.shape != (self.output_dim,):
            raise ConfigurationError(
                f"{self.output_dim} heads but {self.output_centers.shape[0]} output centers")
        for index, head in enumerate(self.heads):
            if head.state.inducing_inputs.shape[1] != self.feature_dim:
                raise ConfigurationError(
                    f"head {index}: Z has {head.state.inducing_inputs.shape[1]} columns, "
                    f"feature space has {self.feature_dim}")

    def normalize(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.input_mean) / self.input_scale


@dataclass
class HeadTerms:
    """ELBO contribution of one head and, optionally, its gradients (ascent direction)."""
    value: float
    expected_log_lik: float
    kl: float
    jitter: float
    d_mean: Optional[np.ndarray] = None
    d_chol_s_raw: Optional[np.ndarray] = None
    d_inducing: Optional[np.ndarray] = None
    d_log_noise: float = 0.0
    d_features: Optional[np.ndarray] = None
    d_log_signal_variance: float = 0.0
    d_log_length_scales: Optional[np.ndarray] = None


def feature_map(model: SvdklModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise InputShapeError(f"inputs must have shape (n, {model.input_dim}), got {X.shape}")
    if model.net is None:
        return X
    return forward(model.net, X)


def expected_log_lik(mu_i, var_i, y_i, noise_var):
    """E_{f ~ N(mu, var)} log N(y | f, noise_var); works elementwise on arrays."""
    mu_i = np.asarray(mu_i, dtype=np.float64)
    residual = np.asarray(y_i, dtype=np.float64) - mu_i
    value = -0.5 * (LOG_2PI + np.log(noise_var)) - (residual * residual + var_i) / (2.0 * noise_var)
    return float(value) if np.ndim(value) == 0 else value


def marginal_q(head: SvgpHead, kernel: ArdKernelParams, features: np.ndarray,
               jitter_base: float = DEFAULT_JITTER) -> GaussianMoments:
    state = head.state
    factor = psd_factor(state.inducing_inputs, kernel, jitter_base, name="K_ZZ")
    Kxz = kernel_matrix(features, state.inducing_inputs, kernel)
    psi = cho_solve((factor.lower, True), Kxz.T).T
    mean = psi @ state.mean
    variance = (kernel.signal_variance - np.sum(psi * Kxz, axis=1)
                + np.sum((psi @ state.covariance) * psi, axis=1))
    return GaussianMoments(mean, _clamp_variance(variance))


def kl_q_p(head: SvgpHead, kernel: ArdKernelParams, jitter_base: float = DEFAULT_JITTER) -> float:
    state = head.state
    factor = psd_factor(state.inducing_inputs, kernel, jitter_base, name="K_ZZ")
    return _kl_from_factor(state, factor.lower)


def _kl_from_factor(state: VariationalState, Lz: np.ndarray) -> float:
    chol_s = state.chol_s
    scaled = solve_triangular(Lz, chol_s, lower=True)
    white_mean = solve_triangular(Lz, state.mean, lower=True)
    trace = float(np.sum(scaled * scaled))
    mahalanobis = float(white_mean @ white_mean)
    logdet_k = 2.0 * float(np.sum(np.log(np.diag(Lz))))
    logdet_s = 2.0 * float(np.sum(np.diag(state.chol_s_raw)))
    return 0.5 * (trace + mahalanobis - state.size + logdet_k - logdet_s)


def _clamp_variance(variance: np.ndarray) -> np.ndarray:
    if np.any(variance < VARIANCE_FLOOR):
        logger.warning(f"negative predictive variance clamped (min {variance.min():.3g})")
    return np.maximum(variance, 0.0)


def head_terms(head: SvgpHead, kernel: ArdKernelParams, features: np.ndarray, y: np.ndarray,
               scale: float = 1.0, jitter_base: float = DEFAULT_JITTER, with_grad: bool = False) -> HeadTerms:
    """``scale * sum_i E[log p(y_i | f_i)] - KL`` for one head, with one K_ZZ factorization."""
    state = head.state
    Z = state.inducing_inputs
    m = state.mean
    factor = psd_factor(Z, kernel, jitter_base, name="K_ZZ")
    Lz = factor.lower
    sf2 = kernel.signal_variance
    noise = head.noise_variance

    Kxz = kernel_matrix(features, Z, kernel)
    psi = cho_solve((Lz, True), Kxz.T).T
    chol_s = state.chol_s
    S = chol_s @ chol_s.T
    psi_s = psi @ S
    mu = psi @ m
    raw_var = sf2 - np.sum(psi * Kxz, axis=1) + np.sum(psi_s * psi, axis=1)
    var = np.maximum(raw_var, 0.0)
    residual = y - mu
    ell = expected_log_lik(mu, var, y, noise)
    data_fit = scale * float(np.sum(ell))
    kl = _kl_from_factor(state, Lz)
    terms = HeadTerms(value=data_fit - kl, expected_log_lik=data_fit, kl=kl, jitter=factor.jitter)
    if not with_grad:
        return terms

    M = state.size
    K_inv = cho_solve((Lz, True), np.eye(M))
    alpha = K_inv @ m
    g_mu = scale * residual / noise
    g_var = np.where(raw_var > 0.0, -scale / (2.0 * noise), 0.0)

    terms.d_log_noise = scale * float(np.sum(-0.5 + (residual * residual + var) / (2.0 * noise)))
    d_m = psi.T @ g_mu - alpha
    d_psi = np.outer(g_mu, m) + g_var[:, None] * (2.0 * psi_s - Kxz)
    d_Kxz = -g_var[:, None] * psi + d_psi @ K_inv
    d_S = psi.T @ (g_var[:, None] * psi) - 0.5 * K_inv
    d_Kzz = -psi.T @ d_psi @ K_inv + 0.5 * (K_inv @ S @ K_inv + np.outer(alpha, alpha) - K_inv)

    # prior diagonal k(x, x) = sf2 and the jitter eps * sf2 * I both scale with sf2
    d_log_sf2 = sf2 * float(np.sum(g_var)) + factor.jitter * sf2 * float(np.trace(d_Kzz))

    d_feat, d_z_cross, d_sf_cross, d_ls_cross = kernel_matrix_grads(features, Z, kernel, Kxz, d_Kxz)
    Kzz = kernel_matrix(Z, Z, kernel)
    d_z_a, d_z_b, d_sf_zz, d_ls_zz = kernel_matrix_grads(Z, Z, kernel, Kzz, d_Kzz)

    d_chol = np.tril((d_S + d_S.T) @ chol_s)
    d_raw = d_chol.copy()
    diag = np.diag(chol_s)
    # +1: derivative of 0.5 * log|S| w.r.t. each log-diagonal entry
    np.fill_diagonal(d_raw, np.diag(d_chol) * diag + 1.0)

    terms.d_mean = d_m
    terms.d_chol_s_raw = d_raw
    terms.d_inducing = d_z_cross + d_z_a + d_z_b
    terms.d_features = d_feat
    terms.d_log_signal_variance = d_log_sf2 + d_sf_cross + d_sf_zz
    terms.d_log_length_scales = d_ls_cross + d_ls_zz
    return terms


def _check_pair(model: SvdklModel, X: np.ndarray, Y: np.ndarray):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise InputShapeError(f"X and Y must be row-aligned matrices, got {X.shape} and {Y.shape}")
    if X.shape[0] < 1:
        raise InputError("ELBO needs at least one row")
    if Y.shape[1] != model.output_dim:
        raise InputShapeError(f"Y must have {model.output_dim} columns, got {Y.shape[1]}")
    return X, Y - model.output_centers


def _elbo(model: SvdklModel, X, Y, scale: float) -> float:
    X, Yc = _check_pair(model, X, Y)
    features = feature_map(model, X)
    total = 0.0
    for d, head in enumerate(model.heads):
        total += head_terms(head, model.kernel, features, Yc[:, d], scale, model.jitter_base).value
    return total


def elbo_full(model: SvdklModel, X: np.ndarray, Y: np.ndarray) -> float:
    """Full-data ELBO; X is normalized input, Y is in target units."""
    return _elbo(model, X, Y, 1.0)


def elbo_minibatch(model: SvdklModel, X_B: np.ndarray, Y_B: np.ndarray, total_n: int) -> float:
    batch = np.shape(X_B)[0]
    if batch < 1 or batch > total_n:
        raise InputError(f"minibatch size must be in [1, {total_n}], got {batch}")
    return _elbo(model, X_B, Y_B, total_n / batch)


def predict(model: SvdklModel, X_star: np.ndarray, full_cov: bool = False) -> List[GaussianMoments]:
    """Predictive moments of f for each head at normalized inputs ``X_star``."""
    features = feature_map(model, X_star)
    kernel = model.kernel
    result = []
    for d, head in enumerate(model.heads):
        state = head.state
        factor = psd_factor(state.inducing_inputs, kernel, model.jitter_base, name="K_ZZ")
        Kqz = kernel_matrix(features, state.inducing_inputs, kernel)
        psi = cho_solve((factor.lower, True), Kqz.T).T
        mean = psi @ state.mean + model.output_centers[d]
        psi_s = psi @ state.covariance
        if full_cov:
            cov = psi_s @ psi.T + kernel_matrix(features, features, kernel) - psi @ Kqz.T
            cov = 0.5 * (cov + cov.T)
            result.append(GaussianMoments(mean, cov, full=True))
        else:
            var = kernel.signal_variance + np.sum(psi_s * psi, axis=1) - np.sum(psi * Kqz, axis=1)
            result.append(GaussianMoments(mean, _clamp_variance(var)))
    return result


def predict_mean(model: SvdklModel, X_star: np.ndarray) -> np.ndarray:
    return np.column_stack([moments.mean for moments in predict(model, X_star)])


def optimal_variational_state(head: SvgpHead, kernel: ArdKernelParams, features: np.ndarray, y: np.ndarray,
                              jitter_base: float = DEFAULT_JITTER) -> VariationalState:
    """Analytic maximiser of the full-data ELBO over (m, S) for fixed Z, kernel and noise."""
    Z = head.state.inducing_inputs
    factor = psd_factor(Z, kernel, jitter_base, name="K_ZZ")
    Lz = factor.lower
    Kzz = Lz @ Lz.T
    Kzx = kernel_matrix(features, Z, kernel).T
    precision = 1.0 / head.noise_variance
    sigma = Kzz + precision * (Kzx @ Kzx.T)
    sigma = 0.5 * (sigma + sigma.T)
    Ls = stable_cholesky(sigma, 1e-12, name="Sigma", try_clean=True).lower
    mean = precision * Kzz @ cho_solve((Ls, True), Kzx @ y)
    # S = Kzz Sigma^-1 Kzz = B^T B with B = Ls^-1 Kzz
    B = solve_triangular(Ls, Kzz, lower=True)
    S = B.T @ B
    S = 0.5 * (S + S.T)
    chol = stable_cholesky(S, 1e-12, name="S", try_clean=True).lower
    return VariationalState.from_cholesky(Z.copy(), mean, chol)
