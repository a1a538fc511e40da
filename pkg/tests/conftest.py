# tests/conftest.py
import sys
import os

import numpy as np
import pytest

# Add project root to sys.path
sys.path.insert(
    0,
    os.path.abspath(
        os.path.join(
            os.path.dirname(__file__),
            '..'
        )
    )
)

from deepnet import init_net  # noqa: E402
from kernels import ArdKernelParams  # noqa: E402
from svgp import SvdklModel, SvgpHead, VariationalState  # noqa: E402


def build_toy_model(seed=0, heads=2, layer_sizes=(3, 6, 2), inducing=3, use_net=True, input_dim=None):
    """Small, well-conditioned SVDKL model with separated inducing points."""
    rng = np.random.default_rng(seed)
    net = None
    if use_net:
        net = init_net(list(layer_sizes), seed=seed)
        for layer in net.layers:
            layer.bias[:] = 0.1
        feature_dim = layer_sizes[-1]
        input_dim = layer_sizes[0]
    else:
        feature_dim = input_dim or layer_sizes[0]
        input_dim = feature_dim
    kernel = ArdKernelParams(np.log(1.3), np.log(np.full(feature_dim, 1.5)))
    model_heads = []
    for _ in range(heads):
        z = rng.standard_normal((inducing, feature_dim)) * 1.5
        chol = 0.3 * np.eye(inducing) + 0.05 * np.tril(rng.standard_normal((inducing, inducing)), -1)
        state = VariationalState.from_cholesky(z, rng.standard_normal(inducing), chol)
        model_heads.append(SvgpHead(state, np.log(0.2)))
    return SvdklModel(
        net=net,
        kernel=kernel,
        heads=model_heads,
        input_mean=np.zeros(input_dim),
        input_scale=np.ones(input_dim),
        output_centers=rng.standard_normal(heads),
        seed=seed,
    )


@pytest.fixture
def toy_model():
    return build_toy_model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
