"""Reference HTTP backend for blended-diffusion editing clients.

Implements the denoise/upscale/score/health wire protocol with three modes:
a zeros stub, an analytic Gaussian-mixture oracle for cross-implementation
checks, and a hook point for attaching real pretrained models.
"""

from .app import BackendApp, load_hook
from .config import ConfigError, ServerConfig, load_config_file, resolve_config
from .server import BackendServer, make_server, serve
from .verify import load_golden, verify_golden
from .wire import PROTO_HEADER, PROTO_VERSION, WireError, decode_tensor, encode_tensor

__version__ = "0.1.0"

__all__ = [
    "BackendApp", "BackendServer", "ConfigError", "PROTO_HEADER", "PROTO_VERSION",
    "ServerConfig", "WireError", "decode_tensor", "encode_tensor", "load_config_file",
    "load_golden", "load_hook", "make_server", "resolve_config", "serve",
    "verify_golden", "__version__",
]
