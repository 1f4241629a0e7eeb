"""Noisy-ECG detection: convolutional autoencoder + latent Mahalanobis scoring."""

try:
    from ._ecgnoise import *  # noqa: F401,F403  (installed layout)
except ImportError:  # in-tree builds put the extension on sys.path directly
    from _ecgnoise import *  # noqa: F401,F403
