"""Exception types shared across the package."""


class MsbdError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(MsbdError):
    """Invalid pipeline or CLI configuration."""


class BackendError(MsbdError):
    """A denoiser/upscaler/scorer backend failed (transport, timeout, 5xx...)."""


class ProtocolError(BackendError):
    """The remote backend violated the wire protocol (shape, dtype, version)."""


class EmptyMaskError(ValueError, MsbdError):
    """An editing operation received a mask with no support."""
