import logging
import os

import numpy as np
from packaging import version

from deepnet import DenseLayer, FeedForwardNet
from errors import DataError, SvdklError
from feature_io import atomic_write_json, read_json_document
from kernels import ArdKernelParams
from svgp import SvdklModel, SvgpHead, VariationalState
from vc_pipeline import F0Stats

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "svdkl-checkpoint"
FORMAT_VERSION = version.Version("1.0")
REQUIRED_KEYS = [
    "format", "format_version", "alpha", "layer_sizes", "net", "kernel", "heads",
    "input_mean", "input_scale", "output_centers", "f0_source", "f0_target", "jitter_base", "config", "seed",
]


def _lower_triangle(matrix):
    return [float(v) for i in range(matrix.shape[0]) for v in matrix[i, : i + 1]]


def _from_lower_triangle(values, size):
    if len(values) != size * (size + 1) // 2:
        raise DataError(f"lower triangle needs {size * (size + 1) // 2} values, got {len(values)}")
    matrix = np.zeros((size, size))
    matrix[np.tril_indices(size)] = values
    return matrix


def _stats_to_dict(stats):
    if stats is None:
        return None
    return {"mean_log_f0": stats.mean_log_f0, "std_log_f0": stats.std_log_f0,
            "voiced_frame_count": stats.voiced_frame_count}


def _stats_from_dict(data):
    if data is None:
        return None
    return F0Stats(float(data["mean_log_f0"]), float(data["std_log_f0"]), int(data["voiced_frame_count"]))


def _matrix(values, shape):
    array = np.array(values, dtype=np.float64)
    if array.size != int(np.prod(shape)):
        raise DataError(f"expected {int(np.prod(shape))} values for shape {list(shape)}, got {array.size}")
    return array.reshape(shape)


def checkpoint_document(model):
    layers = []
    if model.net is not None:
        for layer in model.net.layers:
            layers.append({
                "shape": list(layer.weight.shape),
                "weight": layer.weight.ravel().tolist(),
                "bias": layer.bias.tolist(),
                "activation": layer.activation,
            })
    heads = []
    for head in model.heads:
        state = head.state
        heads.append({
            "z_shape": list(state.inducing_inputs.shape),
            "z": state.inducing_inputs.ravel().tolist(),
            "m": state.mean.tolist(),
            # diagonal entries are log values
            "chol_s": _lower_triangle(state.chol_s_raw),
            "log_noise_variance": head.log_noise_variance,
        })
    return {
        "format": CHECKPOINT_FORMAT,
        "format_version": str(FORMAT_VERSION),
        "alpha": model.alpha,
        "layer_sizes": model.net.layer_sizes if model.net is not None else [],
        "net": layers,
        "kernel": {
            "log_signal_variance": model.kernel.log_signal_variance,
            "log_length_scales": model.kernel.log_length_scales.tolist(),
        },
        "heads": heads,
        "input_mean": model.input_mean.tolist(),
        "input_scale": model.input_scale.tolist(),
        "output_centers": model.output_centers.tolist(),
        "f0_source": _stats_to_dict(model.f0_source),
        "f0_target": _stats_to_dict(model.f0_target),
        "jitter_base": model.jitter_base,
        "config": model.config,
        "seed": model.seed,
    }


def save_checkpoint(model, path):
    atomic_write_json(path, checkpoint_document(model))
    logger.info(f"checkpoint written to {path}")


def model_from_document(data, path=None):
    missing = [key for key in REQUIRED_KEYS if key not in data]
    if missing:
        raise DataError(f"checkpoint is missing keys {missing}", path=path)
    if data["format"] != CHECKPOINT_FORMAT:
        raise DataError(f"not a checkpoint (format {data['format']!r})", path=path)
    try:
        saved_version = version.Version(str(data["format_version"]))
    except version.InvalidVersion:
        raise DataError(f"invalid format_version {data['format_version']!r}", path=path)
    if saved_version.major != FORMAT_VERSION.major or saved_version > FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format_version {saved_version} (reader {FORMAT_VERSION})",
                        path=path)
    try:
        net = None
        if data["net"]:
            layers = [DenseLayer(_matrix(entry["weight"], entry["shape"]),
                                 np.array(entry["bias"], dtype=np.float64), entry["activation"])
                      for entry in data["net"]]
            net = FeedForwardNet(layers, rng_seed=int(data["seed"]))
            if net.layer_sizes != list(data["layer_sizes"]):
                raise DataError(f"layer_sizes {data['layer_sizes']} disagree with stored weights {net.layer_sizes}")
        kernel = ArdKernelParams(data["kernel"]["log_signal_variance"],
                                 np.array(data["kernel"]["log_length_scales"], dtype=np.float64))
        heads = []
        for entry in data["heads"]:
            z = _matrix(entry["z"], entry["z_shape"])
            raw = _from_lower_triangle(entry["chol_s"], z.shape[0])
            state = VariationalState(z, np.array(entry["m"], dtype=np.float64), raw)
            heads.append(SvgpHead(state, entry["log_noise_variance"]))
        return SvdklModel(
            net=net,
            kernel=kernel,
            heads=heads,
            input_mean=np.array(data["input_mean"], dtype=np.float64),
            input_scale=np.array(data["input_scale"], dtype=np.float64),
            output_centers=np.array(data["output_centers"], dtype=np.float64),
            f0_source=_stats_from_dict(data["f0_source"]),
            f0_target=_stats_from_dict(data["f0_target"]),
            jitter_base=float(data["jitter_base"]),
            alpha=float(data["alpha"]),
            config=dict(data["config"]),
            seed=int(data["seed"]),
        )
    except DataError as e:
        if e.path is None and path is not None:
            raise DataError(str(e), path=path)
        raise
    except (SvdklError, KeyError, TypeError, ValueError) as e:
        raise DataError(f"inconsistent checkpoint: {e}", path=path)


def load_checkpoint(path):
    if not os.path.exists(path):
        raise DataError("checkpoint not found", path=path)
    return model_from_document(read_json_document(path), path)
