"""Chunked consistency autoencoder for audio."""

__version__ = "0.1.0"
