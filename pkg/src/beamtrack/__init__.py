"""Millimeter-wave beam codebook design and blind beam tracking simulation."""

__version__ = "0.1.0"
