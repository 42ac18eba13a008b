"""Masked compositing and the two blended sampling loops.

Every noise draw is keyed, not sequential: a draw is fully determined by
(stream seed, purpose tag, plan entry, inner index), so the two loops are
structurally comparable (the repaint loop with R=0 consumes exactly the
draws of the plain loop and matches it bit for bit) and callers may run
many invocations concurrently without sharing RNG state.

Key layout, part of this module's contract:
    ("init", t_start)        forward sample that starts a rollout
    ("xhat", entry)          background sample x_hat for one outer step
    ("jump", entry, r)       repaint re-noising, inner iteration r

Plan entries are 0-based training-step indices; entry ``e`` denoises from
table level ``e + 1`` down to the next entry's level (0 for the last), so a
rollout makes exactly ``len(plan) * (1 + repaint_r)`` backend calls.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .denoiser import Conditioning, DenoiserBackend, predict_eps
from .errors import BackendError
from .schedule import NoiseSchedule, TimestepPlan, ddim_step, forward_jump, forward_marginal


def derive_seed(*parts) -> int:
    """Stable sub-seed from heterogeneous key parts.

    Hash-based (not python ``hash``) so values survive interpreter restarts;
    a separator byte keeps ("ab", "c") and ("a", "bc") distinct.
    """
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        h.update(str(part).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class NoiseStream:
    """Keyed standard-normal source: same (seed, key) always gives the same draw."""

    seed: int

    def normal(self, key: tuple, shape, dtype=np.float64) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(self.seed, *key))
        dtype = np.dtype(dtype)
        if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ValueError(f"unsupported noise dtype {dtype}")
        return rng.standard_normal(shape, dtype=dtype)


@dataclass(frozen=True)
class BlendInputs:
    """Everything a blended rollout needs besides the schedule and backend."""

    x_tilde: np.ndarray
    mask: np.ndarray
    cond: Conditioning
    plan: TimestepPlan
    rng_seed: int

    def __post_init__(self):
        x = np.asarray(self.x_tilde)
        m = np.asarray(self.mask)
        if m.shape != x.shape and m.shape != x.shape[:2]:
            raise ValueError(f"mask shape {m.shape} does not match buffer {x.shape}")
        if m.size and (m.min() < 0 or m.max() > 1):
            raise ValueError("mask values outside [0, 1]")


def blend_masked(x: np.ndarray, background: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Elementwise m*x + (1-m)*background.

    Where the mask is exactly 0 or 1 the corresponding source values are
    assigned outright, so fully-masked and fully-unmasked pixels survive
    bitwise regardless of float rounding.
    """
    x = np.asarray(x)
    background = np.asarray(background)
    mask = np.asarray(mask)
    if x.shape != background.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {background.shape}")
    if mask.shape == x.shape:
        m = mask
    elif x.ndim == 3 and mask.shape == x.shape[:2]:
        m = mask[:, :, None]
    else:
        raise ValueError(f"mask shape {mask.shape} does not match {x.shape}")
    dt = np.result_type(x, background)
    m = m.astype(dt, copy=False)
    out = m * x + (1.0 - m) * background
    out = np.where(m == 1.0, x, out)
    out = np.where(m == 0.0, background, out)
    return out


def _blended_rollout(schedule: NoiseSchedule, backend: DenoiserBackend, x: np.ndarray,
                     inputs: BlendInputs, plan_steps: tuple[int, ...], repaint_r: int,
                     stream: NoiseStream) -> np.ndarray:
    x_tilde = np.asarray(inputs.x_tilde)
    shape, dtype = x_tilde.shape, x_tilde.dtype
    n = len(plan_steps)
    for i, entry in enumerate(plan_steps):
        t_hi = entry + 1
        t_lo = plan_steps[i + 1] + 1 if i + 1 < n else 0
        try:
            eps = predict_eps(backend, schedule, x, t_hi, inputs.cond)
            x = ddim_step(schedule, x, eps, t_hi, t_lo)
            x_hat = forward_marginal(schedule, x_tilde, t_lo,
                                     stream.normal(("xhat", entry), shape, dtype))
            x = blend_masked(x, x_hat, inputs.mask)
            for r in range(repaint_r):
                x = forward_jump(schedule, x, t_lo, t_hi,
                                 stream.normal(("jump", entry, r), shape, dtype))
                eps = predict_eps(backend, schedule, x, t_hi, inputs.cond)
                x = ddim_step(schedule, x, eps, t_hi, t_lo)
                x = blend_masked(x, x_hat, inputs.mask)
        except BackendError as exc:
            raise BackendError(f"denoising failed at plan entry {entry} (t={t_hi}): {exc}") from exc
    return x


def first_stage_sample(schedule: NoiseSchedule, backend: DenoiserBackend,
                       inputs: BlendInputs, repaint_r: int) -> np.ndarray:
    """Blended rollout with repaint: one first-stage candidate at t=0.

    Per outer step the trajectory is denoised, composited against a fresh
    background sample x_hat, then re-noised and re-denoised ``repaint_r``
    times, compositing against the SAME x_hat each time.
    """
    if repaint_r < 0:
        raise ValueError(f"repaint_r must be >= 0, got {repaint_r}")
    x_tilde = np.asarray(inputs.x_tilde)
    stream = NoiseStream(inputs.rng_seed)
    t_start = inputs.plan.steps[0] + 1
    x = forward_marginal(schedule, x_tilde, t_start,
                         stream.normal(("init", t_start), x_tilde.shape, x_tilde.dtype))
    return _blended_rollout(schedule, backend, x, inputs, inputs.plan.steps, repaint_r, stream)


def sdedit_blended_stage(schedule: NoiseSchedule, backend: DenoiserBackend,
                         inputs: BlendInputs, t_prime_fraction: float) -> np.ndarray:
    """Blended rollout without repaint, started part-way down the plan.

    Runs the last ceil(t_prime_fraction * len(plan)) plan entries, starting
    from a forward sample of x_tilde at that depth; a fraction of 0 returns
    x_tilde unchanged and a fraction of 1 matches the repaint loop at R=0
    bit for bit.
    """
    if not 0.0 <= t_prime_fraction <= 1.0:
        raise ValueError(f"t_prime_fraction {t_prime_fraction} outside [0, 1]")
    x_tilde = np.asarray(inputs.x_tilde)
    n_run = math.ceil(t_prime_fraction * len(inputs.plan))
    if n_run == 0:
        return x_tilde.copy()
    steps = inputs.plan.steps[-n_run:]
    stream = NoiseStream(inputs.rng_seed)
    t_start = steps[0] + 1
    x = forward_marginal(schedule, x_tilde, t_start,
                         stream.normal(("init", t_start), x_tilde.shape, x_tilde.dtype))
    return _blended_rollout(schedule, backend, x, inputs, steps, 0, stream)
