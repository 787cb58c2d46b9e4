"""Federated-learning simulator with a black-box membership-inference audit."""

__version__ = "0.1.0"
