"""Sequential mosaicking of monocular video from patch-wise homography estimates."""

__version__ = "0.1.0"
