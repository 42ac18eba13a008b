"""Toy differentiable codec and decoder optimization.

The encoder is factor x factor average pooling. The decoder is a depthwise
transposed convolution (stride = factor, kernel 2*factor per axis) with a
per-channel gain and bias, initialized to the separable bilinear kernel so
that decode(encode(x)) starts out as plain pool-then-bilinear
reconstruction, exactly matching the edge-clamped resize in image_ops. All
decoder parameters are optimized with analytic gradients; no autodiff
framework is involved.

Geometry of the initial-equality claim: the latent is replicate-padded by
one sample, the transposed convolution scatters kernel taps at stride f,
and the result is cropped at offset f + f//2. For the bilinear kernel
w[i] = 1 - |i + 0.5 - f| / f this reproduces align-corners-false bilinear
upsampling with edge clamping, bit for bit in exact arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import MsbdError
from .image_ops import TileGrid


@dataclass(frozen=True)
class DecoderParams:
    kernel: np.ndarray  # (C, 2f, 2f)
    gain: np.ndarray    # (C,)
    bias: np.ndarray    # (C,)


@dataclass(frozen=True)
class ToyCodec:
    factor: int
    params: DecoderParams


@dataclass(frozen=True)
class DecoderOptConfig:
    """Settings for per-image decoder fine-tuning."""

    lam: float = 1.0
    steps: int = 100
    lr: float = 1e-4
    segmented: bool = False
    grid: TileGrid | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")


def _bilinear_tap(factor: int) -> np.ndarray:
    if factor == 1:
        return np.array([1.0, 0.0])  # identity: a delta, not an average
    i = np.arange(2 * factor, dtype=np.float64)
    return 1.0 - np.abs(i + 0.5 - factor) / factor


def make_codec(factor: int, channels: int = 1) -> ToyCodec:
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    w = _bilinear_tap(factor)
    kernel = np.broadcast_to(np.outer(w, w), (channels, 2 * factor, 2 * factor)).copy()
    return ToyCodec(factor=factor, params=DecoderParams(
        kernel=kernel, gain=np.ones(channels), bias=np.zeros(channels)))


def _split_channels(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """(H, W) or (H, W, C) -> (C, H, W) float64 view plus a had-channels flag."""
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None].astype(np.float64), False
    if x.ndim == 3:
        return np.moveaxis(x, 2, 0).astype(np.float64), True
    raise ValueError(f"expected (H, W) or (H, W, C), got shape {x.shape}")


def _join_channels(chw: np.ndarray, had_channels: bool, dtype) -> np.ndarray:
    out = np.moveaxis(chw, 0, 2) if had_channels else chw[0]
    return out.astype(dtype, copy=False)


def encode(codec: ToyCodec, x: np.ndarray) -> np.ndarray:
    """Average-pool by the codec factor; non-divisible dims are symmetric-padded."""
    x = np.asarray(x)
    f = codec.factor
    chw, had_c = _split_channels(x)
    c, h, w = chw.shape
    if c != codec.params.gain.shape[0]:
        raise ValueError(f"codec has {codec.params.gain.shape[0]} channels, image has {c}")
    pad_h = (-h) % f
    pad_w = (-w) % f
    if pad_h or pad_w:
        chw = np.pad(chw, ((0, 0), (0, pad_h), (0, pad_w)), mode="symmetric")
    _, hp, wp = chw.shape
    z = chw.reshape(c, hp // f, f, wp // f, f).mean(axis=(2, 4))
    return _join_channels(z, had_c, x.dtype)


def _decode_channel(z_pad: np.ndarray, kernel: np.ndarray, f: int) -> np.ndarray:
    """Transposed convolution (stride f) of one padded channel, uncropped."""
    ph, pw = z_pad.shape
    out = np.zeros((f * ph + f, f * pw + f))
    for ki in range(2 * f):
        for kj in range(2 * f):
            out[ki:ki + f * ph:f, kj:kj + f * pw:f] += kernel[ki, kj] * z_pad
    return out


def _crop_offset(f: int) -> int:
    return f + f // 2


def decode(codec: ToyCodec, z: np.ndarray, params: DecoderParams | None = None,
           out_h: int | None = None, out_w: int | None = None) -> np.ndarray:
    """Decoder forward pass; pass ``params`` to decode with candidate weights.

    ``out_h``/``out_w`` crop the full factor-times-latent output, undoing
    encode-side padding of non-divisible images.
    """
    p = params if params is not None else codec.params
    z = np.asarray(z)
    f = codec.factor
    zc, had_c = _split_channels(z)
    c, nh, nw = zc.shape
    if c != p.gain.shape[0]:
        raise ValueError(f"decoder has {p.gain.shape[0]} channels, latent has {c}")
    oh = f * nh if out_h is None else out_h
    ow = f * nw if out_w is None else out_w
    if not (0 < oh <= f * nh and 0 < ow <= f * nw):
        raise ValueError(f"output dims {ow}x{oh} not within {f * nw}x{f * nh}")
    c0 = _crop_offset(f)
    out = np.empty((c, oh, ow))
    for ci in range(c):
        z_pad = np.pad(zc[ci], 1, mode="edge")
        full = _decode_channel(z_pad, p.kernel[ci], f)
        crop = full[c0:c0 + oh, c0:c0 + ow]
        out[ci] = p.gain[ci] * crop + p.bias[ci]
    return _join_channels(out, had_c, z.dtype)


def _loss_and_grads(codec: ToyCodec, params: DecoderParams, z: np.ndarray,
                    x_in: np.ndarray, x_ref: np.ndarray, mask: np.ndarray,
                    lam: float) -> tuple[float, DecoderParams]:
    """L_DO and its analytic gradient in every decoder parameter.

    L = ||m (x_ref - y)||^2 + lam * ||(1-m) (x_in - y)||^2 with y the decode
    of z under ``params`` cropped to x_in's size; sums of squares, soft mask
    entering squared.
    """
    f = codec.factor
    zc, _ = _split_channels(z)
    c, nh, nw = zc.shape
    x_in_c, _ = _split_channels(x_in)
    x_ref_c, _ = _split_channels(x_ref)
    if x_in_c.shape != x_ref_c.shape:
        raise ValueError(f"x_in {x_in_c.shape} vs reference {x_ref_c.shape}")
    _, oh, ow = x_in_c.shape
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != (oh, ow):
        raise ValueError(f"mask shape {m.shape} does not match image {(oh, ow)}")
    m2 = m * m
    om2 = (1.0 - m) * (1.0 - m)
    c0 = _crop_offset(f)

    loss = 0.0
    k_grad = np.zeros_like(params.kernel)
    g_grad = np.zeros_like(params.gain)
    b_grad = np.zeros_like(params.bias)
    for ci in range(c):
        z_pad = np.pad(zc[ci], 1, mode="edge")
        full = _decode_channel(z_pad, params.kernel[ci], f)
        crop = full[c0:c0 + oh, c0:c0 + ow]
        y = params.gain[ci] * crop + params.bias[ci]
        r_ref = y - x_ref_c[ci]
        r_in = y - x_in_c[ci]
        with np.errstate(invalid="ignore"):  # non-finite targets surface as a non-finite loss
            loss += float((m2 * r_ref * r_ref).sum() + lam * (om2 * r_in * r_in).sum())
            gl = 2.0 * (m2 * r_ref + lam * om2 * r_in)
        b_grad[ci] = gl.sum()
        g_grad[ci] = (gl * crop).sum()
        g_full = np.zeros_like(full)
        g_full[c0:c0 + oh, c0:c0 + ow] = params.gain[ci] * gl
        ph, pw = z_pad.shape
        for ki in range(2 * f):
            for kj in range(2 * f):
                k_grad[ci, ki, kj] = (g_full[ki:ki + f * ph:f, kj:kj + f * pw:f] * z_pad).sum()
    return loss, DecoderParams(kernel=k_grad, gain=g_grad, bias=b_grad)


def l_do(codec: ToyCodec, z_out: np.ndarray, x_in: np.ndarray, x_out_ref: np.ndarray,
         mask: np.ndarray, lam: float = 1.0) -> float:
    """Decoder-optimization loss at the codec's current parameters."""
    loss, _ = _loss_and_grads(codec, codec.params, z_out, x_in, x_out_ref, mask, lam)
    return loss


class _Adam:
    """Adaptive-moment updates with bias correction; decays 0.9/0.999, eps 1e-8."""

    def __init__(self, lr: float):
        self.lr = lr
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: DecoderParams, grads: DecoderParams) -> DecoderParams:
        self.t += 1
        updated = {}
        for name in ("kernel", "gain", "bias"):
            p = getattr(params, name)
            g = getattr(grads, name)
            m = self.m.get(name, np.zeros_like(p))
            v = self.v.get(name, np.zeros_like(p))
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1.0 - 0.9 ** self.t)
            v_hat = v / (1.0 - 0.999 ** self.t)
            updated[name] = p - self.lr * m_hat / (np.sqrt(v_hat) + 1e-8)
        return DecoderParams(**updated)


def _run_optimizer(codec: ToyCodec, segments, cfg: DecoderOptConfig) -> DecoderParams:
    """Shared loop: segments is a list of (z, x_in, x_ref, mask) tuples."""
    params = codec.params
    opt = _Adam(cfg.lr)
    for step in range(cfg.steps):
        total = 0.0
        grad_sum = None
        for z, x_in, x_ref, mask in segments:
            loss, grads = _loss_and_grads(codec, params, z, x_in, x_ref, mask, cfg.lam)
            total += loss
            if grad_sum is None:
                grad_sum = grads
            else:
                grad_sum = DecoderParams(
                    kernel=grad_sum.kernel + grads.kernel,
                    gain=grad_sum.gain + grads.gain,
                    bias=grad_sum.bias + grads.bias)
        if not math.isfinite(total):
            raise MsbdError(f"decoder optimization diverged at step {step}: loss={total}")
        params = opt.step(params, grad_sum)
    return params


def decoder_optimize(codec: ToyCodec, z_out: np.ndarray, x_in: np.ndarray,
                     mask: np.ndarray, cfg: DecoderOptConfig) -> DecoderParams:
    """Optimize decoder weights against the fixed original-params decode.

    The reference x_out is decoded once with the codec's own (original)
    parameters; optimization then pulls the masked region toward that
    reference and the unmasked region toward x_in.
    """
    x_in_arr = np.asarray(x_in)
    h, w = x_in_arr.shape[:2]
    x_ref = decode(codec, z_out, out_h=h, out_w=w)
    return _run_optimizer(codec, [(z_out, x_in, x_ref, mask)], cfg)


def segmented_decoder_optimize(codec: ToyCodec, z_out_tiles: list[np.ndarray],
                               x_in: np.ndarray, mask: np.ndarray, grid: TileGrid,
                               cfg: DecoderOptConfig) -> DecoderParams:
    """One shared parameter set optimized on the summed per-segment losses."""
    if len(z_out_tiles) != len(grid.rects):
        raise ValueError(f"{len(grid.rects)} rects but {len(z_out_tiles)} latent tiles")
    x_in_arr = np.asarray(x_in)
    mask_arr = np.asarray(mask)
    segments = []
    for z_tile, (x, y, w, h) in zip(z_out_tiles, grid.rects):
        x_crop = x_in_arr[y:y + h, x:x + w]
        m_crop = mask_arr[y:y + h, x:x + w]
        x_ref = decode(codec, z_tile, out_h=h, out_w=w)
        segments.append((z_tile, x_crop, x_ref, m_crop))
    return _run_optimizer(codec, segments, cfg)


def with_params(codec: ToyCodec, params: DecoderParams) -> ToyCodec:
    """The same codec with replaced decoder weights."""
    return replace(codec, params=params)
