"""Backend application object: routes protocol operations to an implementation.

Three modes:

* ``stub``    - denoise returns zeros; upscaler and scorer are the built-ins.
* ``oracle``  - denoise is the analytic Gaussian-mixture oracle (the mixture
  comes from the config); upscaler and scorer are the built-ins.
* ``hook``    - all operations delegate to a user object loaded from
  ``module.path:attribute``. The attribute may be the object itself or a
  zero-argument factory returning it. The object provides any of::

      native_resolution: int
      denoise(x, t, alpha_bar, prompt, guidance) -> array   # x is (C, H, W) float32
      upscale(x, target_w, target_h) -> array                # (C, target_h, target_w)
      score(x, prompt) -> float

  A missing method fails the corresponding endpoint with a 500; the others
  keep working, so a denoise-only model is a valid hook. Without a
  ``native_resolution`` attribute the configured value is reported.

Requests are stateless; one app instance serves concurrent handler threads.
"""

from __future__ import annotations

import importlib

import numpy as np

from . import models
from .config import ConfigError, ServerConfig


def load_hook(spec: str):
    """Import ``module.path:attribute``; call it if it is a factory."""
    module_name, sep, attr = spec.partition(":")
    if not sep or not module_name or not attr:
        raise ConfigError(f"hook must look like module.path:attribute, got {spec!r}")
    try:
        module = importlib.import_module(module_name)
    except ImportError as exc:
        raise ConfigError(f"cannot import hook module {module_name!r}: {exc}") from exc
    try:
        obj = getattr(module, attr)
    except AttributeError as exc:
        raise ConfigError(f"module {module_name!r} has no attribute {attr!r}") from exc
    # a callable without its own denoise method is treated as a factory
    if callable(obj) and not hasattr(obj, "denoise"):
        obj = obj()
    return obj


class BackendApp:
    def __init__(self, config: ServerConfig):
        self.config = config
        self.hook = load_hook(config.hook) if config.mode == "hook" else None

    @property
    def native_resolution(self) -> int:
        if self.hook is not None and hasattr(self.hook, "native_resolution"):
            return int(self.hook.native_resolution)
        return self.config.native_resolution

    def _delegate(self, name: str):
        fn = getattr(self.hook, name, None)
        if fn is None:
            raise RuntimeError(f"hook object does not implement {name!r}")
        return fn

    def denoise(self, x: np.ndarray, t: int, alpha_bar: float,
                prompt: str, guidance: float) -> np.ndarray:
        if self.config.mode == "hook":
            return np.asarray(self._delegate("denoise")(x, t, alpha_bar, prompt, guidance))
        if self.config.mode == "stub":
            return np.zeros_like(x)
        return models.mixture_eps(self.config.mixture, x, alpha_bar)

    def upscale(self, x: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
        if self.config.mode == "hook":
            return np.asarray(self._delegate("upscale")(x, target_w, target_h))
        return models.upscale_tensor(x, target_w, target_h)

    def score(self, x: np.ndarray, prompt: str) -> float:
        if self.config.mode == "hook":
            return float(self._delegate("score")(x, prompt))
        return models.score_tensor(x, prompt)
