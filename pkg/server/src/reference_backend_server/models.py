"""Built-in backend models: mixture oracle, stub denoiser, upscaler, scorer.

Everything computes in float64 and is rounded to float32 once at the wire
boundary. The expressions deliberately match the in-process reference
implementations on the client side operation for operation, so a remote run
agrees with a local run to the last bit rather than merely to a tolerance.

Tensors arrive and leave as (C, H, W); height is axis 1 and width axis 2.
"""

from __future__ import annotations

import math

import numpy as np

_VAR_FLOOR = 1e-30  # keeps log-densities finite for point masses at alpha_bar = 1

DEFAULT_MIXTURE = ((0.5, -1.0, 0.1), (0.5, 1.0, 0.1))


def validate_mixture(components) -> tuple[tuple[float, float, float], ...]:
    """Check (weight, mean, std) triples; returns them as a normalized tuple."""
    comps = []
    for i, comp in enumerate(components):
        if len(comp) != 3:
            raise ValueError(f"mixture component {i} must be (weight, mean, std), got {comp!r}")
        weight, mu, std = (float(v) for v in comp)
        if not all(math.isfinite(v) for v in (weight, mu, std)):
            raise ValueError(f"mixture component {i} has non-finite values")
        comps.append((weight, mu, std))
    if not comps:
        raise ValueError("empty mixture")
    total = sum(c[0] for c in comps)
    if any(c[0] <= 0 for c in comps):
        raise ValueError("mixture weights must be > 0")
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"mixture weights sum to {total}, not 1")
    if any(c[2] < 0 for c in comps):
        raise ValueError("mixture stds must be >= 0")
    return tuple(comps)


def mixture_eps(components, x_t: np.ndarray, alpha_bar: float) -> np.ndarray:
    """Noise prediction for a per-element Gaussian mixture prior, in float64.

    Posterior responsibilities come from log-densities via log-sum-exp; the
    component marginal at noise level alpha_bar is
    N(sqrt(ab)*mu, ab*std^2 + 1 - ab).
    """
    x = np.asarray(x_t, dtype=np.float64)
    root_ab = math.sqrt(alpha_bar)
    log_dens = []
    post_means = []
    for weight, mu, std in components:
        mu = np.asarray(mu, dtype=np.float64)
        var = max(alpha_bar * std * std + 1.0 - alpha_bar, _VAR_FLOOR)
        resid = x - root_ab * mu
        log_dens.append(math.log(weight) - 0.5 * math.log(var) - 0.5 * resid * resid / var)
        post_means.append(mu + (root_ab * std * std / var) * resid)
    log_dens = np.stack(log_dens)
    post_means = np.stack(post_means)
    log_dens = log_dens - log_dens.max(axis=0, keepdims=True)
    resp = np.exp(log_dens)
    resp /= resp.sum(axis=0, keepdims=True)
    x0_hat = (resp * post_means).sum(axis=0)
    return (x - root_ab * x0_hat) / math.sqrt(1.0 - alpha_bar)


def _linear_axis(arr: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    # separable bilinear pass, align-corners-false, edge clamped
    in_len = arr.shape[axis]
    if out_len == in_len:
        return arr
    scale = in_len / out_len
    src = (np.arange(out_len, dtype=np.float64) + 0.5) * scale - 0.5
    lo = np.floor(src).astype(np.int64)
    frac = src - lo
    lo_c = np.clip(lo, 0, in_len - 1)
    hi_c = np.clip(lo + 1, 0, in_len - 1)
    shape = [1] * arr.ndim
    shape[axis] = out_len
    w = frac.reshape(shape)
    return np.take(arr, lo_c, axis=axis) * (1.0 - w) + np.take(arr, hi_c, axis=axis) * w


def _cubic_weights(u: np.ndarray):
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


def upscale_tensor(chw: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Catmull-Rom bicubic at 4x, then bilinear to the exact target size.

    The intermediate is rounded to float32 between the two resamples; the
    client-side reference does the same, and skipping that round would shift
    the final bits.
    """
    chw = np.asarray(chw)
    _, h, w = chw.shape
    if target_w < w or target_h < h:
        raise ValueError(f"upscale target {target_w}x{target_h} below source {w}x{h}")
    big = _cubic_axis(chw.astype(np.float64), h * 4, axis=1)
    big = _cubic_axis(big, w * 4, axis=2).astype(np.float32)
    out = _linear_axis(big.astype(np.float64), target_h, axis=1)
    return _linear_axis(out, target_w, axis=2)


def score_tensor(chw: np.ndarray, prompt: str) -> float:
    """Negative L2 norm of the tensor; the prompt is ignored."""
    x = np.asarray(chw, dtype=np.float64)
    return -float(np.sqrt((x ** 2).sum()))
