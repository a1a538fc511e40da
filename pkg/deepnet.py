# deepnet.py
"""Feedforward feature extractor: rectifier hidden layers, linear output layer."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from errors import ConfigurationError, InputShapeError, NumericalFailureError
from optimizer import AdamSettings, AdamState, adam_step

logger = logging.getLogger(__name__)

RELU = "relu"
LINEAR = "linear"


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)
    activation: str = RELU

    @property
    def input_size(self) -> int:
        return int(self.weight.shape[1])

    @property
    def output_size(self) -> int:
        return int(self.weight.shape[0])


@dataclass
class FeedForwardNet:
    layers: List[DenseLayer]
    rng_seed: int = 0

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("a net needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.output_size != nxt.input_size:
                raise ConfigurationError(
                    f"layer sizes do not chain: {prev.output_size} -> {nxt.input_size}")
        for layer in self.layers:
            if layer.activation not in (RELU, LINEAR):
                raise ConfigurationError(f"unknown activation '{layer.activation}'")
            if layer.bias.shape != (layer.output_size,):
                raise ConfigurationError(f"bias shape {layer.bias.shape} does not match weight {layer.weight.shape}")

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def output_size(self) -> int:
        return self.layers[-1].output_size

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_size] + [layer.output_size for layer in self.layers]

    def copy(self) -> "FeedForwardNet":
        return copy.deepcopy(self)


@dataclass
class NetGradients:
    weights: List[np.ndarray] = field(default_factory=list)
    biases: List[np.ndarray] = field(default_factory=list)


class PretrainRecord(NamedTuple):
    layer: int
    initial_mse: float
    final_mse: float


def init_net(layer_sizes: Sequence[int], seed: int = 0) -> FeedForwardNet:
    """Glorot-uniform weights, zero biases, rectifier everywhere but the last layer."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigurationError(f"invalid layer sizes {list(layer_sizes)}")
    rng = np.random.default_rng(seed)
    layers = []
    for index, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        activation = LINEAR if index == len(sizes) - 2 else RELU
        layers.append(DenseLayer(weight, np.zeros(fan_out), activation))
    return FeedForwardNet(layers, rng_seed=seed)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == RELU:
        return np.maximum(z, 0.0)
    return z


def _check_batch(net: FeedForwardNet, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.input_size:
        raise InputShapeError(f"batch must have shape (n, {net.input_size}), got {batch.shape}")
    return batch


def _forward_cached(net: FeedForwardNet, batch: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    inputs, pre = [], []
    a = batch
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.weight.T + layer.bias
        pre.append(z)
        a = _activate(z, layer.activation)
    inputs.append(a)
    return inputs, pre


def forward(net: FeedForwardNet, batch: np.ndarray) -> np.ndarray:
    batch = _check_batch(net, batch)
    return _forward_cached(net, batch)[0][-1]


def backward(net: FeedForwardNet, batch: np.ndarray, upstream: np.ndarray) -> Tuple[NetGradients, np.ndarray]:
    """Gradients of ``sum(upstream * forward(net, batch))`` w.r.t. parameters and batch."""
    batch = _check_batch(net, batch)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (batch.shape[0], net.output_size):
        raise InputShapeError(
            f"upstream must have shape ({batch.shape[0]}, {net.output_size}), got {upstream.shape}")
    inputs, pre = _forward_cached(net, batch)
    grads = NetGradients([None] * len(net.layers), [None] * len(net.layers))
    delta = upstream
    for index in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[index]
        if layer.activation == RELU:
            delta = delta * (pre[index] > 0.0)
        grads.weights[index] = delta.T @ inputs[index]
        grads.biases[index] = delta.sum(axis=0)
        delta = delta @ layer.weight
    return grads, delta


def _glorot(rng, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def _reconstruction(params, data, activation):
    z = data @ params["enc_w"].T + params["enc_b"]
    hidden = _activate(z, activation)
    residual = hidden @ params["dec_w"].T + params["dec_b"] - data
    return z, hidden, residual


def _pretrain_layer(layer: DenseLayer, data: np.ndarray, epochs: int, settings: AdamSettings,
                    rng) -> Tuple[DenseLayer, float, float]:
    params = {
        "enc_w": layer.weight.copy(),
        "enc_b": layer.bias.copy(),
        "dec_w": _glorot(rng, layer.input_size, layer.output_size),
        "dec_b": np.zeros(layer.input_size),
    }
    count = data.size
    state = AdamState()
    best_mse, best_w, best_b = None, params["enc_w"].copy(), params["enc_b"].copy()
    initial_mse = None
    for epoch in range(epochs + 1):
        z, hidden, residual = _reconstruction(params, data, layer.activation)
        mse = float(np.sum(residual * residual) / count)
        if not np.isfinite(mse):
            raise NumericalFailureError(f"non-finite reconstruction loss in layerwise pretraining (epoch {epoch})")
        if initial_mse is None:
            initial_mse = mse
        if best_mse is None or mse < best_mse:
            best_mse, best_w, best_b = mse, params["enc_w"].copy(), params["enc_b"].copy()
        if epoch == epochs:
            break
        d_res = 2.0 * residual / count
        d_hidden = d_res @ params["dec_w"]
        d_z = d_hidden * (z > 0.0) if layer.activation == RELU else d_hidden
        grads = {
            "dec_w": d_res.T @ hidden,
            "dec_b": d_res.sum(axis=0),
            "enc_w": d_z.T @ data,
            "enc_b": d_z.sum(axis=0),
        }
        adam_step(params, grads, state, settings)
    return DenseLayer(best_w, best_b, layer.activation), initial_mse, best_mse


def pretrain_layerwise_report(net: FeedForwardNet, data: np.ndarray, epochs: int, step_size: float,
                              seed: int = 0) -> Tuple[FeedForwardNet, List[PretrainRecord]]:
    """Greedy layerwise pretraining; returns the new net and per-layer reconstruction MSEs.

    Each layer is trained with a temporary linear decoder to reconstruct its own
    input, then frozen; its output feeds the next layer. The best encoder seen
    (initial weights included) is kept.
    """
    data = _check_batch(net, data)
    if data.shape[0] < 2:
        raise InputShapeError("layerwise pretraining needs at least two rows")
    if epochs < 1:
        raise ConfigurationError(f"pretraining epochs must be >= 1, got {epochs}")
    pretrained = net.copy()
    settings = AdamSettings(step_size=step_size)
    records = []
    current = data
    for index, layer in enumerate(pretrained.layers):
        rng = np.random.default_rng([seed, index])
        new_layer, initial_mse, final_mse = _pretrain_layer(layer, current, epochs, settings, rng)
        pretrained.layers[index] = new_layer
        records.append(PretrainRecord(index, initial_mse, final_mse))
        logger.info(f"pretrained layer {index}: reconstruction MSE {initial_mse:.6g} -> {final_mse:.6g}")
        current = _activate(current @ new_layer.weight.T + new_layer.bias, new_layer.activation)
    return pretrained, records


def pretrain_layerwise(net: FeedForwardNet, data: np.ndarray, epochs: int, step_size: float,
                       seed: int = 0) -> FeedForwardNet:
    return pretrain_layerwise_report(net, data, epochs, step_size, seed)[0]
