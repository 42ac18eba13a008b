"""Epsilon-prediction backends behind every sampling loop.

A backend is anything with ``predict_eps(x_t, t, alpha_bar, cond)``. The
free function :func:`predict_eps` is the boundary all samplers go through:
it validates the timestep, looks up alpha-bar, and casts the prediction back
to the caller's buffer dtype, so backend-internal precision never leaks into
a rollout.

The built-in oracle scores diagonal Gaussian mixtures per element, which
makes exact posterior math available at image shapes; the stub predicts
zero noise (a pure rescaling trajectory) for plumbing tests and dry runs.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import backend_protocol
from .errors import BackendError
from .schedule import NoiseSchedule

_VAR_FLOOR = 1e-30  # keeps log-densities finite for point masses at alpha_bar = 1


@dataclass(frozen=True)
class Conditioning:
    """Text conditioning forwarded verbatim to the backend on every call.

    ``guidance`` is carried for backends that implement it; the built-in
    backends ignore it.
    """

    prompt: str = ""
    guidance: float = 0.0

    def __post_init__(self):
        if self.guidance < 0:
            raise ValueError(f"guidance must be >= 0, got {self.guidance}")


@dataclass(frozen=True)
class MixtureSpec:
    """Per-element Gaussian mixture over clean data.

    components: (weight, mean, std) triples. Means may be scalars or arrays
    broadcastable to the buffer shape; stds are scalars, 0 meaning a point
    mass. Weights must be positive and sum to 1.
    """

    components: tuple[tuple[float, float | np.ndarray, float], ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("empty mixture")
        weights = [c[0] for c in self.components]
        if any(w <= 0 for w in weights):
            raise ValueError("mixture weights must be > 0")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError(f"mixture weights sum to {sum(weights)}, not 1")
        if any(c[2] < 0 for c in self.components):
            raise ValueError("mixture stds must be >= 0")


class DenoiserBackend(Protocol):
    def predict_eps(self, x_t: np.ndarray, t: int, alpha_bar: float,
                    cond: Conditioning) -> np.ndarray: ...


def oracle_posterior_mean(mix: MixtureSpec, x_t: np.ndarray, alpha_bar: float) -> np.ndarray:
    """E[x0 | x_t] under the mixture prior, elementwise, in float64.

    The marginal of component k at this noise level is
    N(sqrt(ab)*mu_k, ab*s_k^2 + 1 - ab); responsibilities come from the
    log-densities via log-sum-exp so the result stays finite far from all
    modes and at the point-mass limit.
    """
    if not 0.0 < alpha_bar <= 1.0:
        raise ValueError(f"alpha_bar {alpha_bar} outside (0, 1]")
    x = np.asarray(x_t, dtype=np.float64)
    root_ab = math.sqrt(alpha_bar)
    log_dens = []
    post_means = []
    for weight, mu, std in mix.components:
        mu = np.asarray(mu, dtype=np.float64)
        var = max(alpha_bar * std * std + 1.0 - alpha_bar, _VAR_FLOOR)
        resid = x - root_ab * mu
        log_dens.append(math.log(weight) - 0.5 * math.log(var) - 0.5 * resid * resid / var)
        post_means.append(mu + (root_ab * std * std / var) * resid)
    # resid is x-shaped, so every stacked slice already is too
    log_dens = np.stack(log_dens)
    post_means = np.stack(post_means)
    log_dens = log_dens - log_dens.max(axis=0, keepdims=True)
    resp = np.exp(log_dens)
    resp /= resp.sum(axis=0, keepdims=True)
    return (resp * post_means).sum(axis=0)


@dataclass(frozen=True)
class OracleDenoiser:
    """Analytic eps prediction for a known mixture prior."""

    mix: MixtureSpec

    def predict_eps(self, x_t, t, alpha_bar, cond):
        x = np.asarray(x_t, dtype=np.float64)
        x0_hat = oracle_posterior_mean(self.mix, x, alpha_bar)
        return (x - math.sqrt(alpha_bar) * x0_hat) / math.sqrt(1.0 - alpha_bar)


class StubDenoiser:
    """Predicts zero noise everywhere; rollouts become deterministic rescales."""

    def predict_eps(self, x_t, t, alpha_bar, cond):
        return np.zeros_like(x_t)


class RemoteDenoiser:
    """Text-conditional model behind the wire protocol."""

    def __init__(self, client):
        self.client = client

    def predict_eps(self, x_t, t, alpha_bar, cond):
        x_t = np.asarray(x_t)
        out = self.client.denoise(backend_protocol.image_to_chw(x_t), t, alpha_bar,
                                  cond.prompt, cond.guidance)
        return backend_protocol.chw_to_image(out, x_t.ndim)


class CallCountingDenoiser:
    """Wraps a backend and records every (t, alpha_bar) it sees. Thread-safe."""

    def __init__(self, inner: DenoiserBackend):
        self.inner = inner
        self.calls: list[tuple[int, float]] = []
        self._lock = threading.Lock()

    @property
    def count(self) -> int:
        return len(self.calls)

    def predict_eps(self, x_t, t, alpha_bar, cond):
        with self._lock:
            self.calls.append((t, alpha_bar))
        return self.inner.predict_eps(x_t, t, alpha_bar, cond)


def predict_eps(backend: DenoiserBackend, schedule: NoiseSchedule, x_t: np.ndarray,
                t: int, cond: Conditioning) -> np.ndarray:
    """Validated eps prediction at table timestep t, cast to x_t's dtype."""
    x_t = np.asarray(x_t)
    if not 1 <= t <= schedule.t_train:
        raise ValueError(f"timestep {t} outside [1, {schedule.t_train}]")
    if not np.all(np.isfinite(x_t)):
        raise ValueError("non-finite values in x_t")
    eps = np.asarray(backend.predict_eps(x_t, t, schedule.alpha_bar(t), cond))
    if eps.shape != x_t.shape:
        raise BackendError(f"backend returned shape {eps.shape} for input {x_t.shape}")
    return eps.astype(x_t.dtype, copy=False)
