"""Grid-based trainable object detection on still images and frame streams."""

__version__ = "0.1.0"
