# baseline.py
"""MSE-trained comparator: the same feature net with one linear output layer."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from deepnet import LINEAR, DenseLayer, FeedForwardNet, backward, forward, init_net, pretrain_layerwise
from errors import ConfigurationError, InputError, InputShapeError, NumericalFailureError
from optimizer import AdamState, adam_step
from settings_manager import TrainConfig
from vc_pipeline import AlignedCorpus

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class BaselineRegressor:
    net: FeedForwardNet
    input_mean: np.ndarray
    input_scale: np.ndarray
    output_centers: np.ndarray
    validation_history: List[float] = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.validation_history)


def rmse(prediction: np.ndarray, target: np.ndarray) -> float:
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise InputShapeError(f"prediction {prediction.shape} and target {target.shape} differ")
    if prediction.size == 0:
        raise InputError("RMSE of an empty set")
    diff = prediction - target
    return float(np.sqrt(np.mean(diff * diff)))


def predict_baseline(regressor: BaselineRegressor, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return forward(regressor.net, (X - regressor.input_mean) / regressor.input_scale) + regressor.output_centers


def split_indices(n: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, then the first ``fraction`` of rows become validation."""
    if n < 2:
        raise InputError(f"a train/validation split needs at least two rows, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_val = min(max(1, int(round(fraction * n))), n - 1)
    return order[n_val:], order[:n_val]


def _parameters(net: FeedForwardNet):
    params = {}
    for index, layer in enumerate(net.layers):
        params[f"{index}.weight"] = layer.weight
        params[f"{index}.bias"] = layer.bias
    return params


def run_baseline_dnn(corpus: AlignedCorpus, cfg: TrainConfig) -> Tuple[BaselineRegressor, float]:
    """Train on a seeded 80/20 split with early stopping; returns the best regressor and its validation RMSE."""
    cfg.validate()
    if corpus.size == 0:
        raise InputError("baseline corpus is empty")
    if corpus.X.shape[1] != cfg.layer_sizes[0]:
        raise ConfigurationError(
            f"corpus has {corpus.X.shape[1]} input dims, layer_sizes starts with {cfg.layer_sizes[0]}")
    train_rows, val_rows = split_indices(corpus.size, cfg.validation_fraction, cfg.seed)
    X_train, Y_train = corpus.X[train_rows], corpus.Y[train_rows]
    X_val, Y_val = corpus.X[val_rows], corpus.Y[val_rows]

    input_mean = X_train.mean(axis=0)
    input_scale = X_train.std(axis=0)
    input_scale[input_scale < 1e-8] = 1.0
    Xn = (X_train - input_mean) / input_scale
    centers = Y_train.mean(axis=0)
    centered = Y_train - centers

    features = init_net(cfg.layer_sizes, seed=cfg.seed)
    if cfg.pretrain_epochs > 0 and Xn.shape[0] >= 2:
        features = pretrain_layerwise(features, Xn, cfg.pretrain_epochs, cfg.pretrain_step_size, cfg.seed)
    rng = np.random.default_rng([cfg.seed, len(cfg.layer_sizes)])
    fan_in, fan_out = cfg.layer_sizes[-1], corpus.Y.shape[1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    head = DenseLayer(rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out), LINEAR)
    net = FeedForwardNet(features.layers + [head], rng_seed=cfg.seed)

    regressor = BaselineRegressor(net, input_mean, input_scale, centers)
    params = _parameters(net)
    state = AdamState()
    n = Xn.shape[0]
    best_rmse = np.inf
    best_net = net.copy()
    waited = 0
    for epoch in range(cfg.baseline_epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        for start in range(0, n, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            residual = forward(net, Xn[rows]) - centered[rows]
            upstream = 2.0 * residual / residual.size
            grads, _ = backward(net, Xn[rows], upstream)
            named = {}
            for index in range(len(net.layers)):
                named[f"{index}.weight"] = grads.weights[index]
                named[f"{index}.bias"] = grads.biases[index]
            adam_step(params, named, state, cfg, {key: cfg.net_step_size for key in params})

        score = rmse(predict_baseline(regressor, X_val), Y_val)
        if not np.isfinite(score):
            raise NumericalFailureError(f"non-finite validation RMSE at baseline epoch {epoch}")
        regressor.validation_history.append(score)
        logger.info(f"baseline epoch {epoch}: validation RMSE {score:.6g}")
        if score < best_rmse:
            best_rmse, best_net, waited = score, net.copy(), 0
        else:
            waited += 1
            if waited > cfg.baseline_patience:
                logger.info(f"early stop after epoch {epoch}, best validation RMSE {best_rmse:.6g}")
                break

    regressor.net = best_net
    return regressor, float(best_rmse)
