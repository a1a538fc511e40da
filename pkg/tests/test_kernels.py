# tests/test_kernels.py
import numpy as np
import pytest

from deepnet import DenseLayer, FeedForwardNet, LINEAR, forward, init_net
from errors import ConfigurationError, InputShapeError, NumericalFailureError
from kernels import (ArdKernelParams, DeepKernelSpec, deep_kernel, kernel_matrix, kernel_matrix_grads, psd_factor,
                     se_ard, stable_cholesky)


def test_se_ard_zero_distance_gives_signal_variance():
    p = ArdKernelParams.isotropic(4, signal_variance=2.5, length_scale=0.7)
    a = np.array([0.3, -1.0, 2.0, 0.1])
    assert se_ard(a, a, p) == pytest.approx(2.5, rel=1e-15)


def test_se_ard_unit_offset():
    p = ArdKernelParams.isotropic(24)
    a = np.zeros(24)
    b = np.zeros(24)
    b[0] = 1.0
    assert se_ard(a, b, p) == pytest.approx(np.exp(-0.5), rel=1e-12)
    assert se_ard(a, b, p) == pytest.approx(0.60653, abs=1e-5)


def test_se_ard_infinite_length_scale_limit(rng):
    p = ArdKernelParams.isotropic(5, signal_variance=1.7, length_scale=1e8)
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    assert se_ard(a, b, p) == pytest.approx(1.7, abs=1e-9)


def test_se_ard_rejects_mismatched_lengths():
    p = ArdKernelParams.isotropic(3)
    with pytest.raises(InputShapeError):
        se_ard(np.zeros(3), np.zeros(4), p)


def test_kernel_matrix_single_row():
    p = ArdKernelParams.isotropic(2, signal_variance=3.0)
    K = kernel_matrix(np.array([[0.5, 0.5]]), np.array([[0.5, 0.5]]), p)
    assert K.shape == (1, 1)
    assert K[0, 0] == pytest.approx(3.0)


def test_kernel_matrix_matches_entrywise_loop(rng):
    p = ArdKernelParams(np.log(0.8), np.log(rng.uniform(0.5, 2.0, 6)))
    A = rng.standard_normal((3, 6))
    B = rng.standard_normal((4, 6))
    K = kernel_matrix(A, B, p)
    expected = np.array([[se_ard(a, b, p) for b in B] for a in A])
    np.testing.assert_allclose(K, expected, rtol=1e-14)


def test_kernel_matrix_transpose_symmetry(rng):
    p = ArdKernelParams(0.2, rng.uniform(-0.5, 0.5, 3))
    A = rng.standard_normal((5, 3))
    B = rng.standard_normal((2, 3))
    assert np.array_equal(kernel_matrix(A, B, p).T, kernel_matrix(B, A, p))


def test_kernel_matrix_dimension_mismatch():
    p = ArdKernelParams.isotropic(3)
    with pytest.raises(InputShapeError):
        kernel_matrix(np.zeros((2, 3)), np.zeros((2, 4)), p)


def test_kernel_matrix_grads_match_finite_differences(rng):
    p = ArdKernelParams(np.log(1.2), np.log(rng.uniform(0.7, 1.5, 2)))
    A = rng.standard_normal((4, 2))
    B = rng.standard_normal((3, 2))
    G = rng.standard_normal((4, 3))
    K = kernel_matrix(A, B, p)
    dA, dB, d_sf, d_ls = kernel_matrix_grads(A, B, p, K, G)
    h = 1e-6

    def value(A_, B_, p_):
        return float(np.sum(G * kernel_matrix(A_, B_, p_)))

    for i in range(4):
        for q in range(2):
            plus, minus = A.copy(), A.copy()
            plus[i, q] += h
            minus[i, q] -= h
            assert dA[i, q] == pytest.approx((value(plus, B, p) - value(minus, B, p)) / (2 * h), abs=1e-7)
    for j in range(3):
        for q in range(2):
            plus, minus = B.copy(), B.copy()
            plus[j, q] += h
            minus[j, q] -= h
            assert dB[j, q] == pytest.approx((value(A, plus, p) - value(A, minus, p)) / (2 * h), abs=1e-7)
    up = ArdKernelParams(p.log_signal_variance + h, p.log_length_scales)
    down = ArdKernelParams(p.log_signal_variance - h, p.log_length_scales)
    assert d_sf == pytest.approx((value(A, B, up) - value(A, B, down)) / (2 * h), abs=1e-7)
    for q in range(2):
        ls_up, ls_down = p.log_length_scales.copy(), p.log_length_scales.copy()
        ls_up[q] += h
        ls_down[q] -= h
        numeric = (value(A, B, ArdKernelParams(p.log_signal_variance, ls_up))
                   - value(A, B, ArdKernelParams(p.log_signal_variance, ls_down))) / (2 * h)
        assert d_ls[q] == pytest.approx(numeric, abs=1e-7)


def test_psd_factor_single_row():
    p = ArdKernelParams.isotropic(3, signal_variance=2.0)
    factor = psd_factor(np.array([[1.0, 2.0, 3.0]]), p, jitter_base=1e-6)
    assert factor.lower.shape == (1, 1)
    assert factor.lower[0, 0] == pytest.approx(np.sqrt(2.0 * (1.0 + 1e-6)), rel=1e-14)
    assert factor.jitter == 1e-6


def test_psd_factor_reconstruction(rng):
    p = ArdKernelParams(np.log(1.5), np.log(np.full(2, 0.8)))
    A = rng.uniform(-3, 3, size=(10, 2))
    factor = psd_factor(A, p)
    L = factor.lower
    target = kernel_matrix(A, A, p) + factor.jitter * p.signal_variance * np.eye(10)
    assert np.max(np.abs(L @ L.T - target)) <= 1e-10
    assert np.allclose(L, np.tril(L))


@pytest.mark.parametrize("rows", [64, 512])
def test_psd_factor_large_with_duplicates(rng, rows):
    p = ArdKernelParams(np.log(1.5), np.log(np.array([0.8, 1.3])))
    A = rng.uniform(-3, 3, size=(rows, 2))
    A[rows // 2:] = A[: rows - rows // 2]
    factor = psd_factor(A, p)
    L = factor.lower
    assert np.all(np.diag(L) > 0.0)
    target = kernel_matrix(A, A, p) + factor.jitter * p.signal_variance * np.eye(rows)
    assert np.max(np.abs(L @ L.T - target)) <= 1e-9


def test_psd_factor_escalates_on_duplicated_rows(caplog):
    p = ArdKernelParams.isotropic(2)
    A = np.array([[0.3, 0.2], [0.3, 0.2]])
    factor = psd_factor(A, p, jitter_base=1e-18, name="K_dup")
    assert factor.jitter > 1e-18
    assert "K_dup" in caplog.text


def test_stable_cholesky_failure_names_matrix():
    bad = np.array([[1.0, 0.0], [0.0, -5.0]])
    with pytest.raises(NumericalFailureError, match="K_bad"):
        stable_cholesky(bad, 1e-6, name="K_bad")


def test_deep_kernel_same_input_gives_signal_variance(rng):
    net = init_net([4, 5, 3], seed=1)
    p = ArdKernelParams.isotropic(3, signal_variance=0.9)
    x = rng.standard_normal(4)
    assert deep_kernel(x, x, net, p) == pytest.approx(0.9)


def test_deep_kernel_identity_net_equals_se_ard(rng):
    net = FeedForwardNet([DenseLayer(np.eye(3), np.zeros(3), LINEAR)])
    p = ArdKernelParams(0.3, rng.uniform(-0.2, 0.2, 3))
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    assert deep_kernel(a, b, net, p) == pytest.approx(se_ard(a, b, p), rel=1e-14)


def test_deep_kernel_composes_forward_and_se_ard(rng):
    net = init_net([6, 8, 4], seed=3)
    p = ArdKernelParams(np.log(2.0), np.log(rng.uniform(0.5, 2.0, 4)))
    a, b = rng.standard_normal(6), rng.standard_normal(6)
    features = forward(net, np.vstack([a, b]))
    assert deep_kernel(a, b, net, p) == pytest.approx(se_ard(features[0], features[1], p), rel=1e-14)


def test_deep_kernel_rejects_mismatched_feature_size():
    net = init_net([4, 5, 3], seed=0)
    with pytest.raises(ConfigurationError):
        deep_kernel(np.zeros(4), np.zeros(4), net, ArdKernelParams.isotropic(2))


def test_deep_kernel_spec_validation():
    DeepKernelSpec([24, 100, 20]).validate(ArdKernelParams.isotropic(20))
    with pytest.raises(ConfigurationError):
        DeepKernelSpec([24, 20]).validate()
    with pytest.raises(ConfigurationError):
        DeepKernelSpec([24, 100, 20]).validate(ArdKernelParams.isotropic(5))
