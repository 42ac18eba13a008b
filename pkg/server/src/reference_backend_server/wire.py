"""Tensor payload codec and request-field validation for the backend protocol.

Tensors travel as JSON objects with base64 little-endian float32 data, shape
[channels, height, width], row-major within each channel. Every request and
response carries the protocol version header; anything malformed raises
:class:`WireError`, which the HTTP layer turns into a 400 with the message
as diagnostic.
"""

from __future__ import annotations

import base64
import math

import numpy as np

PROTO_HEADER = "x-msbd-proto"
PROTO_VERSION = "1"


class WireError(ValueError):
    """A fault in the request itself (not the server); maps to HTTP 400."""


def encode_tensor(arr: np.ndarray) -> dict:
    """(C, H, W) array -> {"tensor", "shape", "dtype"} JSON fields."""
    arr = np.asarray(arr)
    if arr.ndim != 3:
        raise ValueError(f"wire tensors are (C, H, W), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite values in tensor")
    raw = np.ascontiguousarray(arr, dtype="<f4")
    return {
        "tensor": base64.b64encode(raw.tobytes()).decode("ascii"),
        "shape": [int(s) for s in arr.shape],
        "dtype": "f32",
    }


def decode_tensor(obj: dict) -> np.ndarray:
    """Strict inverse of :func:`encode_tensor`; any defect is a WireError."""
    if not isinstance(obj, dict):
        raise WireError(f"tensor payload must be a JSON object, got {type(obj).__name__}")
    for key in ("tensor", "shape", "dtype"):
        if key not in obj:
            raise WireError(f"tensor payload missing field: '{key}'")
    if obj["dtype"] != "f32":
        raise WireError(f"unsupported dtype {obj['dtype']!r}")
    shape = obj["shape"]
    if (not isinstance(shape, list) or len(shape) != 3
            or any(not isinstance(s, int) or isinstance(s, bool) or s < 1 for s in shape)):
        raise WireError(f"bad shape {shape!r}")
    if not isinstance(obj["tensor"], str):
        raise WireError("tensor data must be a base64 string")
    try:
        raw = base64.b64decode(obj["tensor"], validate=True)
    except Exception as exc:
        raise WireError(f"undecodable tensor data: {exc}") from exc
    need = 4 * math.prod(shape)
    if len(raw) != need:
        raise WireError(f"payload is {len(raw)} bytes, shape {shape} needs {need}")
    arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise WireError("non-finite values in received tensor")
    return arr


def field_int(obj: dict, key: str, minimum: int | None = None) -> int:
    try:
        value = obj[key]
    except (KeyError, TypeError):
        raise WireError(f"missing field: '{key}'") from None
    if not isinstance(value, int) or isinstance(value, bool):
        raise WireError(f"field '{key}' must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise WireError(f"field '{key}' must be >= {minimum}, got {value}")
    return value


def field_number(obj: dict, key: str) -> float:
    try:
        value = obj[key]
    except (KeyError, TypeError):
        raise WireError(f"missing field: '{key}'") from None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise WireError(f"field '{key}' must be a number, got {value!r}")
    if not math.isfinite(value):
        raise WireError(f"field '{key}' must be finite, got {value!r}")
    return float(value)


def field_str(obj: dict, key: str) -> str:
    try:
        value = obj[key]
    except (KeyError, TypeError):
        raise WireError(f"missing field: '{key}'") from None
    if not isinstance(value, str):
        raise WireError(f"field '{key}' must be a string, got {type(value).__name__}")
    return value
