"""Unsupervised anomaly detection for multivariate time series.

The pipeline perturbs windowed series with a diffusion-style noise process,
trains a dual-pathway score network with a four-term objective, reconstructs
inputs deterministically through the probability-flow ODE, and scores each
point with a composite criterion combining contextual gain, reconstruction
error, and score-space center distance.
"""

__version__ = "0.1.0"
