"""Progressive spatio-temporal GAN laboratory with sliced-Wasserstein objectives."""

__version__ = "0.1.0"
