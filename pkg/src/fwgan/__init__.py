"""Toy KL-WGAN / f-WGAN lab: a small autodiff engine, MLPs with spectral
normalization, importance-weighted critic objectives, 2-D datasets and
sample-quality metrics."""

__version__ = "0.1.0"
