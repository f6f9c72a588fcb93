"""Bi-gated LSTM sequence autoencoder for optical-flow video anomaly detection."""

__version__ = "0.1.0"
