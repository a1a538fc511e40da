# tests/test_checkpoint_manager.py
import json

import numpy as np
import pytest

from checkpoint_manager import checkpoint_document, load_checkpoint, model_from_document, save_checkpoint
from errors import DataError
from svgp import predict
from trainer import collect_parameters
from vc_pipeline import F0Stats


def test_round_trip_predictions_are_bitwise_equal(toy_model, tmp_path, rng):
    model = toy_model(seed=3)
    model.f0_source = F0Stats(np.log(120.0), 0.11, 400)
    model.f0_target = F0Stats(np.log(210.0), 0.09, 380)
    model.config = {"epochs": 5, "layer_sizes": [3, 6, 2]}
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)

    X = rng.standard_normal((7, 3))
    for before, after in zip(predict(model, X), predict(loaded, X)):
        assert np.array_equal(before.mean, after.mean)
        assert np.array_equal(before.variance, after.variance)
    for key, value in collect_parameters(model).items():
        assert np.array_equal(value, collect_parameters(loaded)[key]), key
    assert loaded.f0_target == model.f0_target
    assert loaded.config == model.config
    assert loaded.alpha == model.alpha


def test_saving_twice_gives_identical_bytes(toy_model, tmp_path):
    model = toy_model(seed=1)
    save_checkpoint(model, tmp_path / "a.ckpt")
    save_checkpoint(model, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_plain_svgp_model_round_trip(toy_model, tmp_path):
    model = toy_model(use_net=False, input_dim=2)
    save_checkpoint(model, tmp_path / "plain.ckpt")
    loaded = load_checkpoint(tmp_path / "plain.ckpt")
    assert loaded.net is None
    assert loaded.output_dim == 2


def test_truncated_file(toy_model, tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(toy_model(), path)
    text = path.read_text(encoding="utf-8")
    path.write_text(text[: len(text) // 2], encoding="utf-8")
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_missing_checkpoint(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_checkpoint(tmp_path / "nothing.ckpt")


def test_inconsistent_output_centers(toy_model):
    document = checkpoint_document(toy_model())
    document["output_centers"] = [0.0, 0.0, 0.0]
    with pytest.raises(DataError, match="inconsistent"):
        model_from_document(document, "model.ckpt")


def test_wrong_triangle_length(toy_model):
    document = json.loads(json.dumps(checkpoint_document(toy_model())))
    document["heads"][0]["chol_s"] = document["heads"][0]["chol_s"][:-1]
    with pytest.raises(DataError, match="model.ckpt"):
        model_from_document(document, "model.ckpt")


def test_newer_major_version_is_rejected(toy_model):
    document = checkpoint_document(toy_model())
    document["format_version"] = "2.0"
    with pytest.raises(DataError, match="format_version"):
        model_from_document(document)


def test_missing_keys(toy_model):
    document = checkpoint_document(toy_model())
    del document["kernel"]
    with pytest.raises(DataError, match="kernel"):
        model_from_document(document)
