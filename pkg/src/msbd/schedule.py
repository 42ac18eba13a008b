"""Noise-schedule construction and closed-form Gaussian diffusion arithmetic.

Conventions:
    * ``alpha_bars`` has ``t_train + 1`` entries indexed by the number of
      forward steps applied: ``alpha_bars[0] == 1`` (clean data) and
      ``alpha_bars[t] = prod_{s<=t} (1 - beta_s)``.
    * Timestep arguments to the ops below are indices into that table,
      i.e. ``t = 0`` is the data itself and ``t = t_train`` is the noisiest
      level the forward process reaches.
    * Sampler plans store 0-based training-step indices (``0 .. t_train-1``);
      a plan entry ``e`` corresponds to table timestep ``e + 1``.
    * All stochastic ops take caller-supplied standard-normal noise; this
      module owns no RNG state. Coefficients are applied as python floats so
      the output dtype always follows the input buffer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta forward process q plus its cumulative signal fractions."""

    t_train: int
    betas: np.ndarray       # (t_train,) float64, betas[i] is beta_{i+1}
    alpha_bars: np.ndarray  # (t_train + 1,) float64, alpha_bars[0] == 1

    def alpha_bar(self, t: int) -> float:
        """Signal fraction after ``t`` forward steps, as a python float."""
        if not 0 <= t <= self.t_train:
            raise ValueError(f"timestep {t} outside [0, {self.t_train}]")
        return float(self.alpha_bars[t])

    def beta(self, t: int) -> float:
        """Per-step variance of forward step ``t`` (1-based, in [1, t_train])."""
        if not 1 <= t <= self.t_train:
            raise ValueError(f"forward step {t} outside [1, {self.t_train}]")
        return float(self.betas[t - 1])


@dataclass(frozen=True)
class TimestepPlan:
    """Strictly decreasing 0-based training-step indices, ending at 0."""

    steps: tuple[int, ...]

    def __post_init__(self):
        if not self.steps:
            raise ValueError("empty timestep plan")
        if self.steps[-1] != 0:
            raise ValueError("timestep plan must end at 0")
        if any(a <= b for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("timestep plan must be strictly decreasing")
        if any(s < 0 for s in self.steps):
            raise ValueError("negative plan entry")

    def __len__(self) -> int:
        return len(self.steps)


def make_schedule(t_train: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Build a linear beta schedule and its cumulative alpha-bar table.

    ``betas`` interpolate linearly from ``beta_start`` to ``beta_end``
    inclusive; ``alpha_bars[0]`` is stored explicitly as 1 so t=0 is a true
    identity everywhere downstream.
    """
    if t_train < 1:
        raise ValueError("t_train must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"betas must satisfy 0 < {beta_start} <= {beta_end} < 1")
    if t_train == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, t_train, dtype=np.float64)
    alpha_bars = np.empty(t_train + 1, dtype=np.float64)
    alpha_bars[0] = 1.0
    np.cumprod(1.0 - betas, out=alpha_bars[1:])
    return NoiseSchedule(t_train=t_train, betas=betas, alpha_bars=alpha_bars)


def make_timestep_plan(t_train: int, n_steps: int) -> TimestepPlan:
    """Uniform-stride sampler plan: ``[(n-1)*stride, ..., stride, 0]``.

    stride = floor(t_train / n_steps); the remainder is absorbed at the
    high-t end of the training range.
    """
    if not 1 <= n_steps <= t_train:
        raise ValueError(f"n_steps {n_steps} outside [1, {t_train}]")
    stride = t_train // n_steps
    return TimestepPlan(steps=tuple(k * stride for k in range(n_steps - 1, -1, -1)))


def _require_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def forward_marginal(schedule: NoiseSchedule, x0: np.ndarray, t: int, noise: np.ndarray) -> np.ndarray:
    """Sample of q(x_t | x_0): sqrt(ab_t) * x0 + sqrt(1 - ab_t) * noise."""
    x0 = np.asarray(x0)
    noise = np.asarray(noise)
    _require_same_shape(x0, noise)
    if t == 0:
        return x0.copy()
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise


def forward_step(schedule: NoiseSchedule, x_prev: np.ndarray, t: int, noise: np.ndarray) -> np.ndarray:
    """One forward kernel q(x_t | x_{t-1}): sqrt(1-beta_t) * x + sqrt(beta_t) * noise."""
    x_prev = np.asarray(x_prev)
    noise = np.asarray(noise)
    _require_same_shape(x_prev, noise)
    beta = schedule.beta(t)  # raises on t == 0
    return math.sqrt(1.0 - beta) * x_prev + math.sqrt(beta) * noise


def forward_jump(schedule: NoiseSchedule, x_from: np.ndarray, t_from: int, t_to: int,
                 noise: np.ndarray) -> np.ndarray:
    """Forward kernel between two table levels t_from < t_to in one jump.

    Aggregates the per-step betas into beta_eff = 1 - ab_to/ab_from, so a
    jump over a single step reproduces :func:`forward_step` exactly (by the
    alpha-bar recurrence).
    """
    x_from = np.asarray(x_from)
    noise = np.asarray(noise)
    _require_same_shape(x_from, noise)
    if not 0 <= t_from < t_to <= schedule.t_train:
        raise ValueError(f"need 0 <= t_from < t_to <= {schedule.t_train}, got ({t_from}, {t_to})")
    ratio = schedule.alpha_bar(t_to) / schedule.alpha_bar(t_from)
    return math.sqrt(ratio) * x_from + math.sqrt(1.0 - ratio) * noise


def ddim_step(schedule: NoiseSchedule, x_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int,
              eta: float = 0.0, noise: np.ndarray | None = None) -> np.ndarray:
    """One (possibly stochastic) DDIM update from table level t down to t_prev.

    x0_hat = (x_t - sqrt(1-ab_t) * eps_hat) / sqrt(ab_t)
    result = sqrt(ab_prev) * x0_hat + sqrt(1 - ab_prev - sigma^2) * eps_hat + sigma * noise
    sigma  = eta * sqrt((1-ab_prev)/(1-ab_t)) * sqrt(1 - ab_t/ab_prev)

    With eta == 0 the step is deterministic and ``noise`` is unused.
    """
    x_t = np.asarray(x_t)
    eps_hat = np.asarray(eps_hat)
    _require_same_shape(x_t, eps_hat)
    if t_prev >= t:
        raise ValueError(f"t_prev {t_prev} must be < t {t}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta {eta} outside [0, 1]")
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t_prev)

    x0_hat = (x_t - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
    if eta > 0.0:
        sigma = eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_prev)
    else:
        sigma = 0.0
    dir_coef = math.sqrt(max(1.0 - ab_prev - sigma * sigma, 0.0))
    out = math.sqrt(ab_prev) * x0_hat + dir_coef * eps_hat
    if sigma > 0.0:
        if noise is None:
            raise ValueError("eta > 0 requires caller-supplied noise")
        noise = np.asarray(noise)
        _require_same_shape(x_t, noise)
        out = out + sigma * noise
    return out
