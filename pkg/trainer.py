# trainer.py
"""Joint Adam maximisation of the summed per-head minibatch ELBO."""
from __future__ import annotations

import concurrent.futures
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional

import numpy as np

from deepnet import backward, forward, init_net, pretrain_layerwise
from errors import ConfigurationError, InputError, InputShapeError, NumericalFailureError
from kernels import ArdKernelParams, DeepKernelSpec, psd_factor
from optimizer import AdamState, adam_step
from settings_manager import TrainConfig
from svgp import SvdklModel, SvgpHead, VariationalState, elbo_full, feature_map, head_terms, optimal_variational_state
from vc_pipeline import AlignedCorpus

logger = logging.getLogger(__name__)

__all__ = [
    "AdamState", "EpochRecord", "GradCheckReport", "GradientRecord", "TrainingLog", "adam_step",
    "assign_parameters", "collect_parameters", "compute_gradients", "grad_check", "initialize_model", "train",
]

GROUPS = ("net", "kernel", "mean", "chol_s", "inducing", "noise")
SHARED_Z_KEY = "inducing.z"


@dataclass
class EpochRecord:
    epoch: int
    mean_objective: float
    full_elbo: float = math.nan
    jitter_escalations: int = 0


@dataclass
class TrainingLog:
    records: List[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("training log records must be chronological")
        self.records.append(record)


class GradientRecord(NamedTuple):
    objective: float
    grads: Dict[str, np.ndarray]
    jitter_escalations: int


def parameter_group(key: str) -> str:
    if key.startswith("net."):
        return "net"
    if key.startswith("kernel."):
        return "kernel"
    if key == SHARED_Z_KEY or key.endswith(".z"):
        return "inducing"
    if key.endswith(".mean"):
        return "mean"
    if key.endswith(".chol_s"):
        return "chol_s"
    return "noise"


def _shared_inducing(model: SvdklModel) -> bool:
    return bool(model.config.get("shared_inducing", False))


def collect_parameters(model: SvdklModel) -> Dict[str, np.ndarray]:
    """Named views of every trainable array; scalars are wrapped in length-1 arrays."""
    params: Dict[str, np.ndarray] = {}
    if model.net is not None:
        for index, layer in enumerate(model.net.layers):
            params[f"net.{index}.weight"] = layer.weight
            params[f"net.{index}.bias"] = layer.bias
    params["kernel.log_signal_variance"] = np.array([model.kernel.log_signal_variance])
    params["kernel.log_length_scales"] = model.kernel.log_length_scales
    if _shared_inducing(model):
        params[SHARED_Z_KEY] = model.heads[0].state.inducing_inputs
    for d, head in enumerate(model.heads):
        params[f"head.{d}.mean"] = head.state.mean
        params[f"head.{d}.chol_s"] = head.state.chol_s_raw
        if not _shared_inducing(model):
            params[f"head.{d}.z"] = head.state.inducing_inputs
        params[f"head.{d}.log_noise"] = np.array([head.log_noise_variance])
    return params


def assign_parameters(model: SvdklModel, params: Dict[str, np.ndarray]) -> None:
    """Write ``params`` back into ``model`` (copies into the model's own arrays)."""
    if model.net is not None:
        for index, layer in enumerate(model.net.layers):
            np.copyto(layer.weight, params[f"net.{index}.weight"])
            np.copyto(layer.bias, params[f"net.{index}.bias"])
    model.kernel.log_signal_variance = float(params["kernel.log_signal_variance"][0])
    np.copyto(model.kernel.log_length_scales, params["kernel.log_length_scales"])
    for d, head in enumerate(model.heads):
        np.copyto(head.state.mean, params[f"head.{d}.mean"])
        np.copyto(head.state.chol_s_raw, np.tril(params[f"head.{d}.chol_s"]))
        z_key = SHARED_Z_KEY if _shared_inducing(model) else f"head.{d}.z"
        np.copyto(head.state.inducing_inputs, params[z_key])
        head.log_noise_variance = float(params[f"head.{d}.log_noise"][0])


def _map_heads(function, count: int, workers: int):
    if workers <= 1 or count <= 1:
        return [function(d) for d in range(count)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        # map keeps head order, so the reductions below are order-fixed
        return list(executor.map(function, range(count)))


def compute_gradients(model: SvdklModel, X_B: np.ndarray, Y_B: np.ndarray, total_n: int,
                      workers: int = 1) -> GradientRecord:
    """Negative minibatch ELBO and its gradient for every parameter in ``collect_parameters``.

    ``X_B`` is normalized input, ``Y_B`` is in target units.
    """
    X_B = np.asarray(X_B, dtype=np.float64)
    Y_B = np.asarray(Y_B, dtype=np.float64)
    batch = X_B.shape[0]
    if batch < 1:
        raise InputError("gradient batch is empty")
    if Y_B.shape != (batch, model.output_dim):
        raise InputShapeError(f"Y_B must have shape ({batch}, {model.output_dim}), got {Y_B.shape}")
    if batch > total_n:
        raise InputError(f"batch of {batch} rows exceeds total_n = {total_n}")
    scale = total_n / batch
    features = feature_map(model, X_B)
    centered = Y_B - model.output_centers

    def run(d):
        return head_terms(model.heads[d], model.kernel, features, centered[:, d], scale,
                          model.jitter_base, with_grad=True)

    terms = _map_heads(run, model.output_dim, workers)

    grads: Dict[str, np.ndarray] = {}
    objective = 0.0
    d_features = np.zeros_like(features)
    d_log_sf2 = 0.0
    d_log_ls = np.zeros(model.kernel.dim)
    d_shared_z = np.zeros_like(model.heads[0].state.inducing_inputs) if _shared_inducing(model) else None
    escalations = 0
    for d, term in enumerate(terms):
        objective -= term.value
        d_features -= term.d_features
        d_log_sf2 -= term.d_log_signal_variance
        d_log_ls -= term.d_log_length_scales
        grads[f"head.{d}.mean"] = -term.d_mean
        grads[f"head.{d}.chol_s"] = -term.d_chol_s_raw
        if d_shared_z is not None:
            d_shared_z -= term.d_inducing
        else:
            grads[f"head.{d}.z"] = -term.d_inducing
        grads[f"head.{d}.log_noise"] = np.array([-term.d_log_noise])
        if term.jitter > model.jitter_base:
            escalations += 1
    if d_shared_z is not None:
        grads[SHARED_Z_KEY] = d_shared_z
    grads["kernel.log_signal_variance"] = np.array([d_log_sf2])
    grads["kernel.log_length_scales"] = d_log_ls
    if model.net is not None:
        net_grads, _ = backward(model.net, X_B, d_features)
        for index in range(len(model.net.layers)):
            grads[f"net.{index}.weight"] = net_grads.weights[index]
            grads[f"net.{index}.bias"] = net_grads.biases[index]

    if not np.isfinite(objective):
        raise NumericalFailureError("non-finite training objective")
    for key, value in grads.items():
        if not np.all(np.isfinite(value)):
            raise NumericalFailureError(f"non-finite gradient in group '{parameter_group(key)}' ({key})")
    return GradientRecord(objective, grads, escalations)


def _distinct_rows(features: np.ndarray) -> np.ndarray:
    _, first = np.unique(features, axis=0, return_index=True)
    return np.sort(first)


def initialize_model(X: np.ndarray, Y: np.ndarray, cfg: TrainConfig, input_mean: np.ndarray,
                     input_scale: np.ndarray) -> SvdklModel:
    """Pretrain the net and place the heads; ``X`` is already normalized."""
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    net = None
    features = X
    if cfg.use_net:
        net = init_net(cfg.layer_sizes, seed=cfg.seed)
        if cfg.pretrain_epochs > 0:
            net = pretrain_layerwise(net, X, cfg.pretrain_epochs, cfg.pretrain_step_size, cfg.seed)
        features = forward(net, X)
    q = features.shape[1]

    centers = Y.mean(axis=0)
    centered = Y - centers
    target_var = np.maximum(centered.var(axis=0), 1e-6)
    feature_std = np.maximum(features.std(axis=0), 1e-3)
    kernel = ArdKernelParams(np.log(float(np.mean(target_var))), np.log(feature_std * np.sqrt(q)))
    if cfg.use_net:
        DeepKernelSpec(cfg.layer_sizes, jitter_base=cfg.jitter_base).validate(kernel)

    candidates = _distinct_rows(features)
    inducing = cfg.inducing_count
    if inducing > candidates.shape[0]:
        logger.warning(f"inducing count {inducing} clamped to {candidates.shape[0]} distinct training features")
        inducing = candidates.shape[0]

    def pick_inducing():
        rows = rng.choice(candidates, size=inducing, replace=False)
        return features[np.sort(rows)] + 1e-3 * rng.standard_normal((inducing, q))

    shared_z = pick_inducing() if cfg.shared_inducing else None
    heads = []
    for d in range(Y.shape[1]):
        z = shared_z if shared_z is not None else pick_inducing()
        chol = 0.1 * psd_factor(z, kernel, cfg.jitter_base, name="K_ZZ").lower
        state = VariationalState.from_cholesky(z, np.zeros(inducing), chol)
        if shared_z is not None:
            state.inducing_inputs = shared_z
        head = SvgpHead(state, np.log(0.1 * target_var[d]))
        if cfg.warm_start_heads:
            warm = optimal_variational_state(head, kernel, features, centered[:, d], cfg.jitter_base)
            head.state.mean[:] = warm.mean
            head.state.chol_s_raw[:] = warm.chol_s_raw
        heads.append(head)

    return SvdklModel(
        net=net,
        kernel=kernel,
        heads=heads,
        input_mean=input_mean,
        input_scale=input_scale,
        output_centers=centers,
        jitter_base=cfg.jitter_base,
        alpha=cfg.alpha,
        config=cfg.to_dict(),
        seed=cfg.seed,
    )


def normalizer(X: np.ndarray):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-8] = 1.0
    return mean, scale


def _step_sizes(params: Dict[str, np.ndarray], cfg: TrainConfig) -> Dict[str, float]:
    return {key: (cfg.net_step_size if key.startswith("net.") else cfg.step_size) for key in params}


def train(corpus: AlignedCorpus, cfg: TrainConfig, f0_source=None, f0_target=None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None):
    """Fit an SvdklModel to ``corpus``; returns ``(model, TrainingLog)``."""
    cfg.validate()
    if corpus.size == 0:
        raise InputError("training corpus is empty")
    X, Y = corpus.X, corpus.Y
    if cfg.use_net and X.shape[1] != cfg.layer_sizes[0]:
        raise ConfigurationError(f"corpus has {X.shape[1]} input dims, layer_sizes starts with {cfg.layer_sizes[0]}")
    n = X.shape[0]
    input_mean, input_scale = normalizer(X)
    Xn = (X - input_mean) / input_scale

    model = initialize_model(Xn, Y, cfg, input_mean, input_scale)
    model.f0_source = f0_source
    model.f0_target = f0_target
    params = collect_parameters(model)
    step_sizes = _step_sizes(params, cfg)
    state = AdamState()
    log = TrainingLog()
    logger.info(f"training on {n} frames: {model.output_dim} heads, {model.heads[0].state.size} inducing points, "
                f"feature dim {model.feature_dim}")

    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        objectives = []
        escalations = 0
        for batch_index, start in enumerate(range(0, n, cfg.batch_size)):
            rows = order[start:start + cfg.batch_size]
            try:
                record = compute_gradients(model, Xn[rows], Y[rows], n, cfg.workers)
            except NumericalFailureError as e:
                logger.error(f"numerical failure at epoch {epoch}, batch {batch_index}: {e}")
                raise NumericalFailureError(f"epoch {epoch}, batch {batch_index}: {e}") from e
            adam_step(params, record.grads, state, cfg, step_sizes)
            assign_parameters(model, params)
            objectives.append(record.objective)
            escalations += record.jitter_escalations
        full = math.nan
        if cfg.eval_every and ((epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
            full = elbo_full(model, Xn, Y)
        entry = EpochRecord(epoch, float(np.mean(objectives)), full, escalations)
        log.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        logger.info(f"epoch {epoch}: mean objective {entry.mean_objective:.6g}")
    return model, log


@dataclass
class GradCheckReport:
    worst: Dict[str, float]
    tolerance: float

    @property
    def failing(self) -> List[str]:
        return [group for group, error in self.worst.items() if not error <= self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failing


def relative_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(model: SvdklModel, corpus: AlignedCorpus, tolerance: float = 1e-4, step: float = 1e-5,
               gradient_fn: Callable = compute_gradients) -> GradCheckReport:
    """Compare ``gradient_fn`` with central finite differences of the full-data objective."""
    X = model.normalize(corpus.X)
    Y = corpus.Y
    n = X.shape[0]
    if n > 32:
        logger.warning(f"gradient check on {n} rows will be slow")
    analytic = gradient_fn(model, X, Y, n).grads
    params = collect_parameters(model)
    original = {key: value.copy() for key, value in params.items()}

    def objective():
        assign_parameters(model, params)
        return -elbo_full(model, X, Y)

    worst = {group: 0.0 for group in GROUPS if any(parameter_group(k) == group for k in params)}
    try:
        for key, value in params.items():
            group = parameter_group(key)
            flat = value.reshape(-1)
            for index in range(flat.shape[0]):
                if key.endswith(".chol_s"):
                    row, col = np.unravel_index(index, value.shape)
                    if col > row:
                        continue
                saved = flat[index]
                flat[index] = saved + step
                plus = objective()
                flat[index] = saved - step
                minus = objective()
                flat[index] = saved
                numeric = (plus - minus) / (2.0 * step)
                error = relative_error(float(analytic[key].reshape(-1)[index]), numeric)
                worst[group] = max(worst[group], error)
    finally:
        for key, value in params.items():
            np.copyto(value, original[key])
        assign_parameters(model, params)
    report = GradCheckReport(worst, tolerance)
    for group, error in worst.items():
        logger.info(f"gradient check {group}: worst relative error {error:.3g}")
    return report
