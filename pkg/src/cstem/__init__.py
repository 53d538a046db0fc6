"""Continuous semantic topic embedding model trained as a variational autoencoder."""

__version__ = "0.1.0"
