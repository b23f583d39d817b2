"""Finite element experiments for elliptic problems with drift in L^N."""
__version__ = "0.1.0"
