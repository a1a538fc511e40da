# feature_io.py
"""Structured-text (JSON) documents for utterance features and aligned corpora.

Every write goes to a temporary file in the target directory and is renamed
into place, so readers never see a half-written document.
"""
from __future__ import annotations

import json
import logging
import os
import tempfile
from typing import Any, Dict, List, Tuple

import numpy as np

from errors import DataError, InputError, SvdklError
from vc_pipeline import MCC_COLUMNS, AlignedCorpus, Utterance

logger = logging.getLogger(__name__)

UTTERANCE_FORMAT = "vcfeat"
UTTERANCE_VERSION = 1
UTTERANCE_KEYS = {"format", "version", "sample_rate_hz", "frame_period_ms", "f0_hz", "mcc", "aperiodicity"}
CORPUS_FORMAT = "vcalign"
CORPUS_VERSION = 1
CORPUS_KEYS = {"format", "version", "X", "Y", "provenance"}

SOURCE_SUFFIX = ".src.vcfeat"
TARGET_SUFFIX = ".tgt.vcfeat"


def atomic_write_json(path, document: Dict[str, Any]) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(prefix=".tmp_", suffix=".json", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=1, allow_nan=False)
            f.write("\n")
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise


def read_json_document(path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise DataError("file not found", path=path)
    except json.JSONDecodeError as e:
        raise DataError(f"cannot parse document: {e.msg} (column {e.colno})", path=path, line=e.lineno)
    except UnicodeDecodeError as e:
        raise DataError(f"file is not UTF-8 text: {e}", path=path)
    if not isinstance(data, dict):
        raise DataError("top-level value must be an object", path=path)
    return data


def check_header(data: Dict[str, Any], path, fmt: str, version: int, allowed: set) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise DataError(f"unknown keys {unknown}", path=path)
    if data.get("format") != fmt:
        raise DataError(f"expected format '{fmt}', got {data.get('format')!r}", path=path)
    if data.get("version") != version:
        raise DataError(f"unsupported version {data.get('version')!r} (expected {version})", path=path)


def _float_list(values, path, what) -> List[float]:
    if not isinstance(values, list):
        raise DataError(f"{what} must be an array", path=path)
    try:
        return [float(v) for v in values]
    except (TypeError, ValueError):
        raise DataError(f"{what} must hold numbers", path=path)


def utterance_to_document(utterance: Utterance) -> Dict[str, Any]:
    document = {
        "format": UTTERANCE_FORMAT,
        "version": UTTERANCE_VERSION,
        "sample_rate_hz": int(utterance.sample_rate_hz),
        "frame_period_ms": float(utterance.frame_period_ms),
        "f0_hz": utterance.f0_hz.tolist(),
        "mcc": utterance.mcc.tolist(),
    }
    if utterance.aperiodicity is not None:
        document["aperiodicity"] = utterance.aperiodicity
    return document


def utterance_from_document(data: Dict[str, Any], path=None) -> Utterance:
    check_header(data, path, UTTERANCE_FORMAT, UTTERANCE_VERSION, UTTERANCE_KEYS)
    for key in ("sample_rate_hz", "frame_period_ms", "f0_hz", "mcc"):
        if key not in data:
            raise DataError(f"missing key '{key}'", path=path)
    f0 = _float_list(data["f0_hz"], path, "f0_hz")
    rows = data["mcc"]
    if not isinstance(rows, list):
        raise DataError("mcc must be an array of rows", path=path)
    mcc = []
    for index, row in enumerate(rows):
        values = _float_list(row, path, f"mcc row {index}")
        if len(values) != MCC_COLUMNS:
            raise DataError(f"mcc row {index} has {len(values)} coefficients, expected {MCC_COLUMNS}", path=path)
        mcc.append(values)
    if len(f0) != len(mcc):
        raise DataError(f"f0_hz has {len(f0)} frames but mcc has {len(mcc)}", path=path)
    if not isinstance(data["sample_rate_hz"], int) or isinstance(data["sample_rate_hz"], bool):
        raise DataError("sample_rate_hz must be an integer", path=path)
    mcc_array = np.array(mcc, dtype=np.float64).reshape(len(mcc), MCC_COLUMNS)
    try:
        return Utterance(data["sample_rate_hz"], float(data["frame_period_ms"]), np.array(f0), mcc_array,
                         data.get("aperiodicity"))
    except (SvdklError, TypeError, ValueError) as e:
        raise DataError(str(e), path=path)


def save_utterance(utterance: Utterance, path) -> None:
    atomic_write_json(path, utterance_to_document(utterance))


def load_utterance(path) -> Utterance:
    return utterance_from_document(read_json_document(path), path)


def save_aligned_corpus(corpus: AlignedCorpus, path) -> None:
    atomic_write_json(path, {
        "format": CORPUS_FORMAT,
        "version": CORPUS_VERSION,
        "X": corpus.X.tolist(),
        "Y": corpus.Y.tolist(),
        "provenance": [[utt_id, int(i), int(j)] for utt_id, i, j in corpus.provenance],
    })


def load_aligned_corpus(path) -> AlignedCorpus:
    data = read_json_document(path)
    check_header(data, path, CORPUS_FORMAT, CORPUS_VERSION, CORPUS_KEYS)
    try:
        X = np.array(data["X"], dtype=np.float64)
        Y = np.array(data["Y"], dtype=np.float64)
        provenance = [(str(u), int(i), int(j)) for u, i, j in data.get("provenance", [])]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"malformed aligned corpus: {e}", path=path)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise DataError(f"X {X.shape} and Y {Y.shape} are not row-aligned matrices", path=path)
    return AlignedCorpus(X, Y, provenance)


def load_pair_directory(directory) -> List[Tuple[str, Utterance, Utterance]]:
    """Read ``<id>.src.vcfeat`` / ``<id>.tgt.vcfeat`` pairs, sorted by id."""
    if not os.path.isdir(directory):
        raise InputError(f"not a directory: {directory}")
    names = sorted(os.listdir(directory))
    ids = [name[: -len(SOURCE_SUFFIX)] for name in names if name.endswith(SOURCE_SUFFIX)]
    pairs = []
    for utt_id in ids:
        target_path = os.path.join(directory, utt_id + TARGET_SUFFIX)
        if not os.path.exists(target_path):
            logger.warning(f"no target file for '{utt_id}', skipped")
            continue
        src = load_utterance(os.path.join(directory, utt_id + SOURCE_SUFFIX))
        tgt = load_utterance(target_path)
        pairs.append((utt_id, src, tgt))
    if not pairs:
        raise InputError(f"no '<id>{SOURCE_SUFFIX}' / '<id>{TARGET_SUFFIX}' pairs in {directory}")
    return pairs
