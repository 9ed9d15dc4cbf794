"""Endemic-epidemic and air-traffic gravity models for spatio-temporal count data."""
__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
