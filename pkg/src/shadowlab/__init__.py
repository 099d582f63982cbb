"""shadowlab: a desk-scale laboratory for shadow synthesis in image composition."""

from .base import NotFittedError, ParamsMixin
from .imaging import BinaryMask, ImageRGB

__version__ = "0.1.0"

__all__ = ["NotFittedError", "ParamsMixin", "BinaryMask", "ImageRGB", "__version__"]
