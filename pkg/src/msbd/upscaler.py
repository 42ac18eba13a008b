"""Pluggable super-resolution used between stages.

A backend enlarges at its native factor and resizes to the exact target;
:func:`upscale` is the validated entry point samplers use. The built-in
backend is Catmull-Rom bicubic (a = -0.5) at 4x followed by a bilinear
resize, a dependency-free stand-in with the same call shape as a learned
model behind the remote protocol.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from . import backend_protocol
from .image_ops import resize_bilinear


class UpscalerBackend(Protocol):
    def upscale(self, image: np.ndarray, target_w: int, target_h: int) -> np.ndarray: ...


def _cubic_weights(u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    # Catmull-Rom basis for the four taps around a sample at fraction u
    u2 = u * u
    u3 = u2 * u
    return (
        0.5 * (-u3 + 2.0 * u2 - u),
        0.5 * (3.0 * u3 - 5.0 * u2 + 2.0),
        0.5 * (-3.0 * u3 + 4.0 * u2 + u),
        0.5 * (u3 - u2),
    )


def _cubic_axis(arr: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    in_len = arr.shape[axis]
    if out_len == in_len:
        return arr
    scale = in_len / out_len
    src = (np.arange(out_len, dtype=np.float64) + 0.5) * scale - 0.5
    base = np.floor(src).astype(np.int64)
    u = src - base
    weights = _cubic_weights(u)
    bshape = [1] * arr.ndim
    bshape[axis] = out_len
    oshape = list(arr.shape)
    oshape[axis] = out_len
    out = np.zeros(oshape)
    for offset, w in zip((-1, 0, 1, 2), weights):
        idx = np.clip(base + offset, 0, in_len - 1)
        out += np.take(arr, idx, axis=axis) * w.reshape(bshape)
    return out


def resize_bicubic(image: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Separable Catmull-Rom resize, align-corners-false, edge clamped.

    May overshoot the input range (the kernel has negative lobes); callers
    that need a bounded range clip at their own boundary.
    """
    image = np.asarray(image)
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target dims must be >= 1, got {out_w}x{out_h}")
    if (image.shape[1], image.shape[0]) == (out_w, out_h):
        return image.copy()
    out = _cubic_axis(image.astype(np.float64), out_h, axis=0)
    out = _cubic_axis(out, out_w, axis=1)
    return out.astype(image.dtype, copy=False)


class BicubicUpscaler:
    """Native 4x bicubic enlargement, then bilinear to the exact target."""

    factor = 4

    def upscale(self, image, target_w, target_h):
        image = np.asarray(image)
        h, w = image.shape[:2]
        big = resize_bicubic(image, w * self.factor, h * self.factor)
        return resize_bilinear(big, target_w, target_h)


class RemoteUpscaler:
    """Remote SR model behind the wire protocol; the server hits the target size."""

    def __init__(self, client: backend_protocol.BackendClient):
        self.client = client

    def upscale(self, image, target_w, target_h):
        image = np.asarray(image)
        out = self.client.upscale(backend_protocol.image_to_chw(image), target_w, target_h)
        return backend_protocol.chw_to_image(out, image.ndim)


def upscale(backend: UpscalerBackend, image: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Enlarge to exactly (target_h, target_w); target must not shrink either axis."""
    image = np.asarray(image)
    h, w = image.shape[:2]
    if target_w < w or target_h < h:
        raise ValueError(f"upscale target {target_w}x{target_h} below source {w}x{h}")
    if (target_w, target_h) == (w, h):
        return image.copy()
    out = np.asarray(backend.upscale(image, target_w, target_h))
    if out.shape[:2] != (target_h, target_w) or out.shape[2:] != image.shape[2:]:
        raise ValueError(f"backend produced shape {out.shape} for target {target_w}x{target_h}")
    return out.astype(image.dtype, copy=False)
