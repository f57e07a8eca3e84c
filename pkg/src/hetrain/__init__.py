"""Packed-ciphertext linear algebra and neural-network training over a simulated CKKS slot engine."""

__version__ = "0.1.0"
