"""Collaborative multi-task face completion toolkit.

One shared encoder-decoder generator jointly learns inpainting, face-part
segmentation and landmark heatmap detection, trained against per-task
conditional discriminators, with an optional inpainting-concentrated loss
scheme that restricts both adversarial judgment and reconstruction error
to the occluded region.
"""

__version__ = "0.1.0"

from .exceptions import ConfigurationError, DataError

__all__ = ["ConfigurationError", "DataError", "__version__"]
