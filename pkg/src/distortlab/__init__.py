"""distortlab: synthetic human-figure distortion corpus, curriculum-trained
patch/pixel segmenter, evaluation metrics, and a T2I benchmark harness.
"""

__version__ = "0.1.0"

from .consensus import DistortionType
from .masks import BinaryMask, Box, ComponentRegion, Polygon

__all__ = [
    "__version__",
    "BinaryMask",
    "Box",
    "ComponentRegion",
    "DistortionType",
    "Polygon",
]
