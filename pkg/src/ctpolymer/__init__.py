"""Continuous-time directed polymer in a Brownian environment on Z^d."""
__version__ = "0.1.0"
