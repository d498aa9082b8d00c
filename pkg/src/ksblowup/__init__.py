"""Numerical laboratory for radial Keller-Segel blow-up: profiles, spectra,
modulation laws and an adaptive partial-mass solver."""

__version__ = "0.1.0"
