"""PNG reading and writing with float conversion.

Images live in memory as float32 in [0, 1], shaped (H, W) for grayscale or
(H, W, 3|4) in RGB(A) channel order. Files keep their bit depth: 8-bit maps
to 0..255, 16-bit to 0..65535. Masks are grayscale with 0 = keep and the
maximum value = edit; intermediate values stay soft.
"""

from __future__ import annotations

import os

import cv2
import numpy as np

_DEPTH_SCALE = {8: 255.0, 16: 65535.0}


def _to_rgb(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        return arr
    if arr.shape[2] == 3:
        return arr[:, :, ::-1]
    if arr.shape[2] == 4:
        return arr[:, :, [2, 1, 0, 3]]
    raise OSError(f"unsupported channel count {arr.shape[2]}")


def read_image(path: str) -> tuple[np.ndarray, int]:
    """Load a PNG as (float32 image in [0, 1], source bit depth)."""
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED | cv2.IMREAD_ANYDEPTH)
    if raw is None:
        raise OSError(f"cannot read image {path!r}")
    if raw.dtype == np.uint8:
        depth = 8
    elif raw.dtype == np.uint16:
        depth = 16
    else:
        raise OSError(f"unsupported pixel type {raw.dtype} in {path!r}")
    rgb = _to_rgb(raw)
    return rgb.astype(np.float32) / np.float32(_DEPTH_SCALE[depth]), depth


def read_mask(path: str) -> np.ndarray:
    """Load a grayscale mask PNG as float32 in [0, 1], 0 = keep, 1 = edit."""
    image, _ = read_image(path)
    if image.ndim == 3:
        flat = image.reshape(-1, image.shape[2])
        if not (flat[:, :3] == flat[:, :1]).all():
            raise OSError(f"mask {path!r} has differing color channels; expected grayscale")
        image = image[:, :, 0]
    return image


def write_image(path: str, image: np.ndarray, depth: int = 8) -> None:
    """Write a float image in [0, 1] as an 8- or 16-bit PNG (values clipped)."""
    if depth not in _DEPTH_SCALE:
        raise ValueError(f"depth must be 8 or 16, got {depth}")
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] not in (3, 4)):
        raise ValueError(f"image shape {arr.shape} is not gray, RGB, or RGBA")
    scale = _DEPTH_SCALE[depth]
    quant = np.round(np.clip(arr, 0.0, 1.0) * scale)
    quant = quant.astype(np.uint8 if depth == 8 else np.uint16)
    bgr = _to_rgb(quant)  # the RGB<->BGR swap is its own inverse
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    if not cv2.imwrite(path, bgr):
        raise OSError(f"cannot write image {path!r}")
