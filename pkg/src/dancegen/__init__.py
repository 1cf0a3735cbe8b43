"""Music-conditioned 2D dance pose generation on one-hot heatmap latents."""

__version__ = "0.1.0"
