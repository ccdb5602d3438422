"""Transient simulation and Monte Carlo evaluation of STT-MRAM read sense amplifiers."""

__version__ = "0.1.0"
