"""Quanvolutional network benchmark: statevector simulation, circuit metrics,
quanvolutional features and white-box adversarial evaluation."""

__version__ = "0.1.0"
