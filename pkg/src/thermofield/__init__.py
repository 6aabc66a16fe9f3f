"""Variational preparation of thermofield-double states on a four-transmon processor."""

__version__ = "0.1.0"
