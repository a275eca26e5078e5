"""Volumetric texture toolkit.

Multilevel between-class-variance thresholding (exhaustive and
water-strider search), 2D/2.5D/3D gray-level co-occurrence matrices with
texture descriptors, a from-scratch recurrent fusion classifier, and the
evaluation metrics around them.  See the ``cli`` module for the batch
command surface.
"""

from . import errors, fusion, glcm, haralick, imagio, metrics, otsu, synth, wsa

__version__ = "0.1.0"

__all__ = [
    "errors",
    "fusion",
    "glcm",
    "haralick",
    "imagio",
    "metrics",
    "otsu",
    "synth",
    "wsa",
    "__version__",
]
