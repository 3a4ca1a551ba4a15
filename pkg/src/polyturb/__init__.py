"""Polymer stretching in turbulence: noise, limit kinetic equation, dumbbells."""
__version__ = "0.1.0"
