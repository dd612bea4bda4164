"""Atomic file writes and the binary model format.

Every artifact lands under its declared name only after a temp-file rename,
so an interrupted run never leaves a partial file behind.

The model file is a single JSON header line (shapes and dtype) followed by
the raw little-endian float64 parameter block, weights then bias.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_model(weights: np.ndarray, bias: np.ndarray, path) -> None:
    header = {
        "dtype": "<f8",
        "order": ["weights", "bias"],
        "weights_shape": list(weights.shape),
        "bias_shape": list(bias.shape),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    blob += np.ascontiguousarray(weights, dtype="<f8").tobytes()
    blob += np.ascontiguousarray(bias, dtype="<f8").tobytes()
    atomic_write_bytes(path, blob)


def load_model(path):
    raw = Path(path).read_bytes()
    newline = raw.index(b"\n")
    header = json.loads(raw[:newline].decode("utf-8"))
    body = raw[newline + 1:]
    w_shape = tuple(header["weights_shape"])
    b_shape = tuple(header["bias_shape"])
    w_count = int(np.prod(w_shape))
    data = np.frombuffer(body, dtype="<f8")
    weights = data[:w_count].reshape(w_shape).copy()
    bias = data[w_count:w_count + int(np.prod(b_shape))].reshape(b_shape).copy()
    return weights, bias
