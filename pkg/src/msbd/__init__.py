"""Multi-stage blended-diffusion image editing over pluggable backends."""

__version__ = "0.1.0"
