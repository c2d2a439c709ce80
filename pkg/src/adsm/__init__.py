"""Autoregressive denoising score matching for video anomaly detection, on a numpy autodiff core."""

__version__ = "0.1.0"
