"""Training-free architecture search for patch-memory anomaly segmentation."""

__version__ = "0.1.0"
