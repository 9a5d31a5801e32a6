"""Federated spectrum sensing simulator with semi-supervised training and vaccine-based defense."""

__version__ = "0.1.0"
