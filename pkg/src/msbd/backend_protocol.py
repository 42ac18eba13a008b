"""Wire protocol for remote denoiser/upscaler/scorer backends (client side).

Tensors travel as JSON objects carrying base64 little-endian float32, shape
[channels, height, width], row-major within each channel. alpha_bar rides
along with t so a server never needs the client's schedule to know the
noise level. Both directions stamp the protocol version header; a missing
or different version is a hard error, not a warning.

In-memory images in this package are channel-last; :func:`image_to_chw` and
:func:`chw_to_image` convert at the boundary.
"""

from __future__ import annotations

import base64
import math
import threading

import numpy as np
import requests

from .errors import BackendError, ProtocolError

PROTO_HEADER = "x-msbd-proto"
PROTO_VERSION = "1"


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
    """Inverse of :func:`encode_tensor`; strict about every field."""
    try:
        shape = obj["shape"]
        dtype = obj["dtype"]
        data = obj["tensor"]
    except (KeyError, TypeError) as exc:
        raise ProtocolError(f"tensor payload missing field: {exc}") from exc
    if dtype != "f32":
        raise ProtocolError(f"unsupported dtype {dtype!r}")
    if (not isinstance(shape, (list, tuple)) or len(shape) != 3
            or any(not isinstance(s, int) or s < 1 for s in shape)):
        raise ProtocolError(f"bad shape {shape!r}")
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise ProtocolError(f"undecodable tensor data: {exc}") from exc
    if len(raw) != 4 * math.prod(shape):
        raise ProtocolError(f"payload is {len(raw)} bytes, shape {shape} needs {4 * math.prod(shape)}")
    arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise ProtocolError("non-finite values in received tensor")
    return arr


def image_to_chw(image: np.ndarray) -> np.ndarray:
    """Channel-last (or 2-D) image to a contiguous float32 (C, H, W) tensor."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[None, :, :]
    elif image.ndim == 3:
        image = np.moveaxis(image, 2, 0)
    else:
        raise ValueError(f"expected (H, W) or (H, W, C), got shape {image.shape}")
    return np.ascontiguousarray(image, dtype=np.float32)


def chw_to_image(arr: np.ndarray, ndim: int) -> np.ndarray:
    """Wire tensor back to the caller's layout (ndim 2 or 3)."""
    if ndim == 2:
        if arr.shape[0] != 1:
            raise ProtocolError(f"expected single channel for a 2-D image, got {arr.shape[0]}")
        return arr[0]
    return np.moveaxis(arr, 0, 2)


class BackendClient:
    """HTTP client for one backend server; safe to share across threads.

    Requests are serialized on an internal lock (one in-flight request per
    client); callers wanting parallelism can hold one client per worker.
    """

    def __init__(self, base_url: str, timeout: float = 120.0,
                 session: requests.Session | None = None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()
        self._lock = threading.Lock()

    def _check(self, resp: requests.Response) -> dict:
        got = resp.headers.get(PROTO_HEADER)
        if got != PROTO_VERSION:
            raise ProtocolError(f"server protocol version {got!r}, need {PROTO_VERSION!r}")
        if resp.status_code != 200:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text.strip()[:500]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(f"non-JSON response: {exc}") from exc

    def _post(self, path: str, body: dict) -> dict:
        with self._lock:
            try:
                resp = self._session.post(
                    self.base_url + path, json=body, timeout=self.timeout,
                    headers={PROTO_HEADER: PROTO_VERSION})
            except requests.RequestException as exc:
                raise BackendError(f"request to {path} failed: {exc}") from exc
        return self._check(resp)

    def _get(self, path: str) -> dict:
        with self._lock:
            try:
                resp = self._session.get(self.base_url + path, timeout=self.timeout,
                                         headers={PROTO_HEADER: PROTO_VERSION})
            except requests.RequestException as exc:
                raise BackendError(f"request to {path} failed: {exc}") from exc
        return self._check(resp)

    def health(self) -> dict:
        return self._get("/v1/health")

    def denoise(self, x_chw: np.ndarray, t: int, alpha_bar: float,
                prompt: str, guidance: float) -> np.ndarray:
        body = encode_tensor(x_chw) | {
            "t": int(t), "alpha_bar": float(alpha_bar),
            "prompt": prompt, "guidance": float(guidance),
        }
        out = decode_tensor(self._post("/v1/denoise", body))
        if out.shape != tuple(x_chw.shape):
            raise ProtocolError(f"denoise returned shape {out.shape} for input {tuple(x_chw.shape)}")
        return out

    def upscale(self, x_chw: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
        body = encode_tensor(x_chw) | {"target_w": int(target_w), "target_h": int(target_h)}
        out = decode_tensor(self._post("/v1/upscale", body))
        want = (x_chw.shape[0], target_h, target_w)
        if out.shape != want:
            raise ProtocolError(f"upscale returned shape {out.shape}, wanted {want}")
        return out

    def score(self, x_chw: np.ndarray, prompt: str) -> float:
        body = encode_tensor(x_chw) | {"prompt": prompt}
        out = self._post("/v1/score", body)
        score = out.get("score")
        if not isinstance(score, (int, float)) or isinstance(score, bool):
            raise ProtocolError(f"bad score payload: {out!r}")
        if not math.isfinite(score):
            raise ProtocolError(f"non-finite score {score}")
        return float(score)
